//! Dense voxel volumes, 2D section images and the patch model.
//!
//! All storage is x-fastest, then y, then z: voxel `(x, y, z)` lives at
//! `x + nx * (y + ny * z)`. Patch vectors, dictionary atoms and projection
//! operator columns all share this order.

mod io;
mod patch;

pub(crate) use io::{read_bitmask, stem, with_suffix, write_bitmask};
pub use io::{read_image, read_volume, write_image, write_volume, VolumeHeader};
pub use patch::{
    extract_at, extract_patches, lattice_positions, patch_origins, recompose_average, OverlapAccumulator, PatchBatch,
    PatchSpec,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Dims = (usize, usize, usize);

/// Scalar field on a regular voxel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: Dims,
    voxel_size: [f64; 3],
    data: Vec<f64>,
}

impl Volume3D {
    /// Default voxel pitch in nanometres.
    pub const DEFAULT_VOXEL_SIZE: [f64; 3] = [10.0, 10.0, 10.0];

    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        Self::with_voxel_size(dims, Self::DEFAULT_VOXEL_SIZE, data)
    }

    pub fn with_voxel_size(dims: Dims, voxel_size: [f64; 3], data: Vec<f64>) -> Result<Self> {
        check_dims(dims)?;
        let len = dims.0 * dims.1 * dims.2;
        if data.len() != len {
            return Err(Error::shape(format!("{len} voxels"), format!("{} values", data.len())));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { dims, voxel_size, data })
    }

    pub fn zeros(dims: Dims) -> Result<Self> {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: Dims, value: f64) -> Result<Self> {
        check_dims(dims)?;
        if !value.is_finite() {
            return Err(Error::NonFinite { index: 0 });
        }
        Ok(Self {
            dims,
            voxel_size: Self::DEFAULT_VOXEL_SIZE,
            data: vec![value; dims.0 * dims.1 * dims.2],
        })
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        check_dims(dims)?;
        let mut data = Vec::with_capacity(dims.0 * dims.1 * dims.2);
        for z in 0..dims.2 {
            for y in 0..dims.1 {
                for x in 0..dims.0 {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        self.voxel_size
    }

    pub fn set_voxel_size(&mut self, voxel_size: [f64; 3]) {
        self.voxel_size = voxel_size;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the samples. Callers must keep them finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims.0 * (y + self.dims.1 * z)
    }

    /// Inverse of [`Volume3D::index`].
    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let (nx, ny, _) = self.dims;
        (index % nx, (index / nx) % ny, index / (nx * ny))
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: f64) {
        let i = self.index(x, y, z);
        self.data[i] = value;
    }

    /// The `z`-th x-y plane as an image.
    pub fn slice_z(&self, z: usize) -> Image2D {
        let (nx, ny, _) = self.dims;
        let start = z * nx * ny;
        Image2D {
            nx,
            ny,
            data: self.data[start..start + nx * ny].to_vec(),
        }
    }

    /// The x-z plane at row `y`, with z running down the image rows.
    pub fn slice_y(&self, y: usize) -> Image2D {
        let (nx, _, nz) = self.dims;
        let mut data = Vec::with_capacity(nx * nz);
        for z in 0..nz {
            for x in 0..nx {
                data.push(self.get(x, y, z));
            }
        }
        Image2D { nx, ny: nz, data }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Linearly maps the value range onto [0, 1]. Constant volumes map to 0.
    pub fn rescaled_unit(&self) -> Volume3D {
        let (lo, hi) = self.min_max();
        let span = hi - lo;
        let data = if span > 0.0 {
            self.data.iter().map(|v| (v - lo) / span).collect()
        } else {
            vec![0.0; self.data.len()]
        };
        Volume3D {
            dims: self.dims,
            voxel_size: self.voxel_size,
            data,
        }
    }

    /// Voxels `z0..z1` along the axial direction.
    pub fn crop_z(&self, z0: usize, z1: usize) -> Result<Volume3D> {
        let (nx, ny, nz) = self.dims;
        if z0 >= z1 || z1 > nz {
            return Err(Error::config(format!("invalid z range {z0}..{z1} for nz={nz}")));
        }
        let plane = nx * ny;
        Ok(Volume3D {
            dims: (nx, ny, z1 - z0),
            voxel_size: self.voxel_size,
            data: self.data[z0 * plane..z1 * plane].to_vec(),
        })
    }
}

fn check_dims(dims: Dims) -> Result<()> {
    if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
        return Err(Error::config(format!("volume dims must all be >= 1, got {dims:?}")));
    }
    Ok(())
}

/// A single 2D image in x-fastest order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image2D {
    pub nx: usize,
    pub ny: usize,
    pub data: Vec<f64>,
}

impl Image2D {
    pub fn new(nx: usize, ny: usize, data: Vec<f64>) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::config(format!("image dims must be >= 1, got ({nx}, {ny})")));
        }
        if data.len() != nx * ny {
            return Err(Error::shape(format!("{} pixels", nx * ny), data.len()));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { nx, ny, data })
    }

    pub fn filled(nx: usize, ny: usize, value: f64) -> Self {
        Self {
            nx,
            ny,
            data: vec![value; nx * ny],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[x + self.nx * y]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[x + self.nx * y] = value;
    }

    pub fn mean_std(&self) -> (f64, f64) {
        mean_std(&self.data)
    }
}

/// Population mean and standard deviation.
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_zero_dims() {
        assert!(Volume3D::zeros((0, 5, 6)).is_err());
        assert!(Volume3D::new((1, 1, 1), vec![]).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let err = Volume3D::new((2, 1, 1), vec![1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1 }));
    }

    #[test]
    fn rescale_maps_to_unit_interval() {
        let v = Volume3D::new((3, 1, 1), vec![2.0, 4.0, 6.0]).unwrap();
        assert_eq!(v.rescaled_unit().data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn xz_slice_layout() {
        let v = Volume3D::from_fn((2, 3, 4), |x, y, z| (x + 10 * y + 100 * z) as f64).unwrap();
        let s = v.slice_y(1);
        assert_eq!((s.nx, s.ny), (2, 4));
        assert_eq!(s.get(1, 3), 311.0);
    }

    proptest! {
        #[test]
        fn index_is_a_bijection(nx in 1usize..9, ny in 1usize..9, nz in 1usize..9, seed in 0usize..10_000) {
            let v = Volume3D::zeros((nx, ny, nz)).unwrap();
            let i = seed % v.len();
            let (x, y, z) = v.coords(i);
            prop_assert!(x < nx && y < ny && z < nz);
            prop_assert_eq!(v.index(x, y, z), i);
            prop_assert_eq!(i, x + nx * y + nx * ny * z);
        }
    }
}
