use ndarray::{Array2, ShapeBuilder};
use serde::{Deserialize, Serialize};

use super::{Dims, Volume3D};
use crate::error::{Error, Result};

/// Geometry of an `h x h x v` patch and the lattice stride used to tile a volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub h: usize,
    pub v: usize,
    pub stride: [usize; 3],
}

impl PatchSpec {
    pub fn new(h: usize, v: usize, stride: [usize; 3]) -> Result<Self> {
        let spec = Self { h, v, stride };
        spec.validate()?;
        Ok(spec)
    }

    /// Dense lattice: stride 1 on every axis.
    pub fn dense(h: usize, v: usize) -> Self {
        Self {
            h,
            v,
            stride: [1, 1, 1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.v == 0 {
            return Err(Error::config(format!(
                "patch extents must be >= 1, got h={} v={}",
                self.h, self.v
            )));
        }
        let ext = self.extent();
        for (axis, (&s, &e)) in self.stride.iter().zip(&ext).enumerate() {
            if s == 0 || s > e {
                return Err(Error::config(format!("stride {s} on axis {axis} must lie in 1..={e}")));
            }
        }
        Ok(())
    }

    /// Vectorized patch length `h * h * v`.
    pub fn n(&self) -> usize {
        self.h * self.h * self.v
    }

    pub fn extent(&self) -> [usize; 3] {
        [self.h, self.h, self.v]
    }

    pub fn with_stride(self, stride: [usize; 3]) -> Result<Self> {
        Self::new(self.h, self.v, stride)
    }

    /// Overlap between neighbouring patches on each axis.
    pub fn overlap(&self) -> [usize; 3] {
        let e = self.extent();
        [e[0] - self.stride[0], e[1] - self.stride[1], e[2] - self.stride[2]]
    }
}

/// Lattice `0, s, 2s, ...` along one axis, plus a final position flush with the far edge.
pub fn lattice_positions(dim: usize, extent: usize, stride: usize) -> Vec<usize> {
    if dim < extent || stride == 0 {
        return Vec::new();
    }
    let last = dim - extent;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if *out.last().unwrap() != last {
        out.push(last);
    }
    out
}

/// Patch origins `(x, y, z)` sorted by z, then y, then x.
pub fn patch_origins(dims: Dims, spec: &PatchSpec) -> Result<Vec<[usize; 3]>> {
    spec.validate()?;
    let ext = spec.extent();
    let d = [dims.0, dims.1, dims.2];
    for axis in 0..3 {
        if d[axis] < ext[axis] {
            return Err(Error::DimensionTooSmall {
                axis: ['x', 'y', 'z'][axis],
                dim: d[axis],
                extent: ext[axis],
            });
        }
    }
    let xs = lattice_positions(d[0], ext[0], spec.stride[0]);
    let ys = lattice_positions(d[1], ext[1], spec.stride[1]);
    let zs = lattice_positions(d[2], ext[2], spec.stride[2]);
    let mut out = Vec::with_capacity(xs.len() * ys.len() * zs.len());
    for &z in &zs {
        for &y in &ys {
            for &x in &xs {
                out.push([x, y, z]);
            }
        }
    }
    Ok(out)
}

/// Vectorized patches, one column each, plus where they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchBatch {
    pub spec: PatchSpec,
    pub origins: Vec<[usize; 3]>,
    /// `n x count`, column-major so each patch is contiguous.
    pub matrix: Array2<f64>,
}

impl PatchBatch {
    pub fn new(spec: PatchSpec, origins: Vec<[usize; 3]>, matrix: Array2<f64>) -> Result<Self> {
        if matrix.nrows() != spec.n() || matrix.ncols() != origins.len() {
            return Err(Error::shape(
                format!("{} x {}", spec.n(), origins.len()),
                format!("{} x {}", matrix.nrows(), matrix.ncols()),
            ));
        }
        Ok(Self { spec, origins, matrix })
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Subtracts each patch's mean; returns the centered batch and the means.
    pub fn mean_centered(&self) -> (PatchBatch, Vec<f64>) {
        let mut out = self.clone();
        let mut means = Vec::with_capacity(self.len());
        for mut col in out.matrix.columns_mut() {
            let m = col.mean().unwrap_or(0.0);
            col.mapv_inplace(|v| v - m);
            means.push(m);
        }
        (out, means)
    }

    /// The columns at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> PatchBatch {
        let n = self.spec.n();
        let mut data = Vec::with_capacity(n * indices.len());
        for &i in indices {
            data.extend(self.matrix.column(i).iter());
        }
        PatchBatch {
            spec: self.spec,
            origins: indices.iter().map(|&i| self.origins[i]).collect(),
            matrix: Array2::from_shape_vec((n, indices.len()).f(), data).expect("shape"),
        }
    }
}

/// Copies the voxels of the patch at `origin` into `out` in storage order.
pub(crate) fn copy_patch(volume: &Volume3D, spec: &PatchSpec, origin: [usize; 3], out: &mut [f64]) {
    let (h, v) = (spec.h, spec.v);
    let [ox, oy, oz] = origin;
    let data = volume.data();
    let mut k = 0;
    for dz in 0..v {
        for dy in 0..h {
            let start = volume.index(ox, oy + dy, oz + dz);
            out[k..k + h].copy_from_slice(&data[start..start + h]);
            k += h;
        }
    }
}

pub fn extract_patches(volume: &Volume3D, spec: &PatchSpec) -> Result<PatchBatch> {
    let origins = patch_origins(volume.dims(), spec)?;
    extract_at(volume, spec, origins)
}

/// Extracts patches at explicit origins, which must lie inside the volume.
pub fn extract_at(volume: &Volume3D, spec: &PatchSpec, origins: Vec<[usize; 3]>) -> Result<PatchBatch> {
    let n = spec.n();
    let (nx, ny, nz) = volume.dims();
    for &o in &origins {
        if o[0] + spec.h > nx || o[1] + spec.h > ny || o[2] + spec.v > nz {
            return Err(Error::OutOfRange {
                origin: (o[0], o[1], o[2]),
            });
        }
    }
    let mut data = vec![0.0; n * origins.len()];
    if n > 0 {
        crate::par::for_each_chunk_mut(&mut data, n, |i, col| copy_patch(volume, spec, origins[i], col));
    }
    let matrix = Array2::from_shape_vec((n, origins.len()).f(), data).expect("shape");
    Ok(PatchBatch {
        spec: *spec,
        origins,
        matrix,
    })
}

/// Running per-voxel sums and counts for overlap averaging.
///
/// Patches must be added in ascending `(z, y, x)` origin order for the
/// result to match [`recompose_average`] bit for bit.
#[derive(Debug, Clone)]
pub struct OverlapAccumulator {
    dims: Dims,
    spec: PatchSpec,
    sum: Vec<f64>,
    count: Vec<u32>,
}

impl OverlapAccumulator {
    pub fn new(dims: Dims, spec: PatchSpec) -> Self {
        let len = dims.0 * dims.1 * dims.2;
        Self {
            dims,
            spec,
            sum: vec![0.0; len],
            count: vec![0; len],
        }
    }

    pub fn add(&mut self, origin: [usize; 3], patch: &[f64]) -> Result<()> {
        let (nx, ny, nz) = self.dims;
        let (h, v) = (self.spec.h, self.spec.v);
        let [ox, oy, oz] = origin;
        if ox + h > nx || oy + h > ny || oz + v > nz {
            return Err(Error::OutOfRange { origin: (ox, oy, oz) });
        }
        if patch.len() != self.spec.n() {
            return Err(Error::shape(self.spec.n(), patch.len()));
        }
        let mut k = 0;
        for dz in 0..v {
            for dy in 0..h {
                let start = ox + nx * (oy + dy + ny * (oz + dz));
                for (s, p) in self.sum[start..start + h].iter_mut().zip(&patch[k..k + h]) {
                    *s += p;
                }
                for c in &mut self.count[start..start + h] {
                    *c += 1;
                }
                k += h;
            }
        }
        Ok(())
    }

    /// Per-voxel coverage counts.
    pub fn counts(&self) -> &[u32] {
        &self.count
    }

    /// Averages, failing if any voxel is uncovered.
    pub fn finish(self) -> Result<Volume3D> {
        let uncovered = self.uncovered();
        if let Some(&first) = uncovered.first() {
            return Err(Error::CoverageGap {
                count: uncovered.len(),
                first,
                uncovered,
            });
        }
        let data = self.sum.iter().zip(&self.count).map(|(s, &c)| s / c as f64).collect();
        Volume3D::new(self.dims, data)
    }

    /// Averages, filling uncovered voxels from `fill` (or zero) and returning their count.
    pub fn finish_with_fill(self, fill: Option<&Volume3D>) -> (Volume3D, usize) {
        let mut gaps = 0;
        let data = self
            .sum
            .iter()
            .zip(&self.count)
            .enumerate()
            .map(|(i, (s, &c))| {
                if c > 0 {
                    s / c as f64
                } else {
                    gaps += 1;
                    fill.map_or(0.0, |f| f.data()[i])
                }
            })
            .collect();
        (Volume3D::new(self.dims, data).expect("finite sums"), gaps)
    }

    fn uncovered(&self) -> Vec<(usize, usize, usize)> {
        let (nx, ny, _) = self.dims;
        self.count
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 0)
            .map(|(i, _)| (i % nx, (i / nx) % ny, i / (nx * ny)))
            .collect()
    }
}

/// Averages overlapping patches back into a volume of the given dims.
///
/// Columns are accumulated in ascending origin order (ties broken by the
/// column contents), so the output does not depend on the batch order.
pub fn recompose_average(batch: &PatchBatch, dims: Dims) -> Result<Volume3D> {
    super::check_dims(dims)?;
    let mut order: Vec<usize> = (0..batch.len()).collect();
    order.sort_by(|&a, &b| {
        let (oa, ob) = (batch.origins[a], batch.origins[b]);
        (oa[2], oa[1], oa[0]).cmp(&(ob[2], ob[1], ob[0])).then_with(|| {
            let (ca, cb) = (batch.matrix.column(a), batch.matrix.column(b));
            ca.iter()
                .zip(cb.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let mut acc = OverlapAccumulator::new(dims, batch.spec);
    let mut buf = vec![0.0; batch.spec.n()];
    for i in order {
        for (b, v) in buf.iter_mut().zip(batch.matrix.column(i).iter()) {
            *b = *v;
        }
        acc.add(batch.origins[i], &buf)?;
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(dims: Dims, seed: u64) -> Volume3D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Volume3D::from_fn(dims, |_, _, _| rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn standard_patch_overlap() {
        let spec = PatchSpec::new(9, 15, [4, 4, 10]).unwrap();
        assert_eq!(spec.overlap(), [5, 5, 5]);
        let origins = patch_origins((40, 40, 60), &spec).unwrap();
        let xs: Vec<usize> = lattice_positions(40, 9, 4);
        assert_eq!(xs, vec![0, 4, 8, 12, 16, 20, 24, 28, 31]);
        assert_eq!(origins.len(), 9 * 9 * lattice_positions(60, 15, 10).len());
    }

    #[test]
    fn volume_equal_to_patch_gives_one_patch() {
        let vol = random_volume((9, 9, 15), 1);
        for stride in [[1, 1, 1], [4, 4, 10], [9, 9, 15]] {
            let b = extract_patches(&vol, &PatchSpec::new(9, 15, stride).unwrap()).unwrap();
            assert_eq!(b.origins, vec![[0, 0, 0]]);
        }
    }

    #[test]
    fn single_patch_is_storage_order() {
        let vol = Volume3D::new((3, 3, 3), (0..27).map(|v| v as f64).collect()).unwrap();
        let b = extract_patches(&vol, &PatchSpec::dense(3, 3)).unwrap();
        let col: Vec<f64> = b.matrix.column(0).to_vec();
        assert_eq!(col, (0..27).map(|v| v as f64).collect::<Vec<_>>());
    }

    #[test]
    fn too_small_volume_errors() {
        let vol = Volume3D::zeros((8, 9, 15)).unwrap();
        let err = extract_patches(&vol, &PatchSpec::dense(9, 15)).unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionTooSmall {
                axis: 'x',
                dim: 8,
                extent: 9
            }
        ));
    }

    #[test]
    fn stride_larger_than_extent_rejected() {
        assert!(PatchSpec::new(3, 3, [4, 1, 1]).is_err());
        assert!(PatchSpec::new(3, 3, [0, 1, 1]).is_err());
    }

    #[test]
    fn mean_of_two_overlapping_patches() {
        let spec = PatchSpec::dense(1, 1);
        let m = Array2::from_shape_vec((1, 2).f(), vec![1.0, 3.0]).unwrap();
        let batch = PatchBatch::new(spec, vec![[0, 0, 0], [0, 0, 0]], m).unwrap();
        let v = recompose_average(&batch, (1, 1, 1)).unwrap();
        assert_eq!(v.data(), &[2.0]);
    }

    #[test]
    fn coverage_gap_reported() {
        let spec = PatchSpec::dense(1, 1);
        let m = Array2::from_shape_vec((1, 1).f(), vec![1.0]).unwrap();
        let batch = PatchBatch::new(spec, vec![[0, 0, 0]], m).unwrap();
        match recompose_average(&batch, (2, 1, 1)).unwrap_err() {
            Error::CoverageGap { count, first, .. } => {
                assert_eq!(count, 1);
                assert_eq!(first, (1, 0, 0));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn round_trip_with_covering_stride_is_exact() {
        let vol = random_volume((13, 11, 17), 7);
        let spec = PatchSpec::new(5, 6, [3, 2, 4]).unwrap();
        let batch = extract_patches(&vol, &spec).unwrap();
        let back = recompose_average(&batch, vol.dims()).unwrap();
        let err = vol
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-12, "{err}");
    }

    #[test]
    fn permutation_invariant_bitwise() {
        let vol = random_volume((10, 9, 8), 3);
        let batch = extract_patches(&vol, &PatchSpec::new(4, 3, [2, 3, 1]).unwrap()).unwrap();
        let mut idx: Vec<usize> = (0..batch.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
        let shuffled = batch.select(&idx);
        let a = recompose_average(&batch, vol.dims()).unwrap();
        let b = recompose_average(&shuffled, vol.dims()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mean_centering() {
        let vol = random_volume((4, 4, 4), 5);
        let batch = extract_patches(&vol, &PatchSpec::new(2, 2, [2, 2, 2]).unwrap()).unwrap();
        let (c, means) = batch.mean_centered();
        assert_eq!(means.len(), batch.len());
        for col in c.matrix.columns() {
            assert!(col.sum().abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn dense_round_trip_identity(nx in 3usize..9, ny in 3usize..9, nz in 3usize..9, h in 1usize..4, v in 1usize..4, seed in 0u64..1000) {
            let vol = random_volume((nx, ny, nz), seed);
            let batch = extract_patches(&vol, &PatchSpec::dense(h, v)).unwrap();
            let back = recompose_average(&batch, vol.dims()).unwrap();
            for (a, b) in vol.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }
}
