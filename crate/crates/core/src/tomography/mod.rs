//! Limited-angle section imaging: ray geometry, the patch projection
//! operator, and whole-volume view simulation.
//!
//! Each section holds `L` voxel layers. A normal ray averages the `L` voxels
//! under one pixel. A 45 degree ray steps one voxel laterally per layer, so it
//! still touches exactly one voxel per layer and needs no interpolation. Rays
//! are anchored at the smallest lateral coordinate of their footprint.

mod io;
mod views;

pub use io::{read_views, write_views};
pub(crate) use views::gather_into;
pub use views::{add_noise, gather_patch_measurements, simulate_views, NoiseSpec, TiltViewSet};

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, ShapeBuilder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TiltAngle {
    #[serde(rename = "normal")]
    Normal,
    /// +45 degrees about the x axis: the ray advances in +y with depth.
    #[serde(rename = "+45x")]
    PlusX,
    #[serde(rename = "-45x")]
    MinusX,
    /// +45 degrees about the y axis: the ray advances in +x with depth.
    #[serde(rename = "+45y")]
    PlusY,
    #[serde(rename = "-45y")]
    MinusY,
}

impl TiltAngle {
    pub const ALL: [TiltAngle; 5] = [
        TiltAngle::Normal,
        TiltAngle::PlusX,
        TiltAngle::MinusX,
        TiltAngle::PlusY,
        TiltAngle::MinusY,
    ];

    /// Lateral offset `(dx, dy)` of the voxel hit in local layer `layer`.
    #[inline]
    pub fn offset(self, layer: usize, layers: usize) -> (usize, usize) {
        match self {
            TiltAngle::Normal => (0, 0),
            TiltAngle::PlusX => (0, layer),
            TiltAngle::MinusX => (0, layers - 1 - layer),
            TiltAngle::PlusY => (layer, 0),
            TiltAngle::MinusY => (layers - 1 - layer, 0),
        }
    }

    /// Lateral footprint `(wx, wy)` of one ray.
    #[inline]
    pub fn footprint(self, layers: usize) -> (usize, usize) {
        match self {
            TiltAngle::Normal => (1, 1),
            TiltAngle::PlusX | TiltAngle::MinusX => (1, layers),
            TiltAngle::PlusY | TiltAngle::MinusY => (layers, 1),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TiltAngle::Normal => "normal",
            TiltAngle::PlusX => "+45x",
            TiltAngle::MinusX => "-45x",
            TiltAngle::PlusY => "+45y",
            TiltAngle::MinusY => "-45y",
        }
    }

    /// Filesystem-safe tag.
    pub fn file_tag(self) -> &'static str {
        match self {
            TiltAngle::Normal => "normal",
            TiltAngle::PlusX => "p45x",
            TiltAngle::MinusX => "m45x",
            TiltAngle::PlusY => "p45y",
            TiltAngle::MinusY => "m45y",
        }
    }
}

impl fmt::Display for TiltAngle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for TiltAngle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TiltAngle::ALL
            .into_iter()
            .find(|a| a.label() == s || a.file_tag() == s)
            .ok_or_else(|| Error::config(format!("unknown tilt angle {s:?}")))
    }
}

/// Section thickness, angle set and patch shape the projection operator is built for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TiltGeometry {
    pub layers_per_section: usize,
    pub angles: Vec<TiltAngle>,
    pub h: usize,
    pub v: usize,
}

impl TiltGeometry {
    pub fn new(layers_per_section: usize, angles: Vec<TiltAngle>, h: usize, v: usize) -> Result<Self> {
        let g = Self {
            layers_per_section,
            angles,
            h,
            v,
        };
        g.validate()?;
        Ok(g)
    }

    /// 9 x 9 x 15 patches, 5-layer sections, all five views.
    pub fn standard() -> Self {
        Self {
            layers_per_section: 5,
            angles: TiltAngle::ALL.to_vec(),
            h: 9,
            v: 15,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.layers_per_section;
        if l == 0 || self.h == 0 || self.v == 0 {
            return Err(Error::config("layers_per_section, h and v must be >= 1"));
        }
        if !self.v.is_multiple_of(l) {
            return Err(Error::config(format!(
                "patch depth {} is not a multiple of layers_per_section {l}",
                self.v
            )));
        }
        if self.angles.is_empty() {
            return Err(Error::config("angle list is empty"));
        }
        for (i, a) in self.angles.iter().enumerate() {
            if self.angles[..i].contains(a) {
                return Err(Error::config(format!("angle {a} listed twice")));
            }
        }
        Ok(())
    }

    pub fn sections_per_patch(&self) -> usize {
        self.v / self.layers_per_section
    }

    pub fn n(&self) -> usize {
        self.h * self.h * self.v
    }

    /// Same geometry restricted to the normal view.
    pub fn normal_only(&self) -> Self {
        Self {
            angles: vec![TiltAngle::Normal],
            ..self.clone()
        }
    }

    pub fn with_angles(&self, angles: Vec<TiltAngle>) -> Result<Self> {
        Self::new(self.layers_per_section, angles, self.h, self.v)
    }
}

/// Where a measurement row comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowInfo {
    /// Section within the patch.
    pub section: usize,
    pub angle: TiltAngle,
    /// Ray anchor inside the patch footprint.
    pub px: usize,
    pub py: usize,
}

/// Sparse operator mapping a vectorized patch to its in-patch tilt measurements.
///
/// Every row averages exactly `L` voxels with weight `1/L`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionModel {
    geometry: TiltGeometry,
    n: usize,
    /// `rows * L` voxel indices, row-major.
    voxels: Vec<usize>,
    rows: Vec<RowInfo>,
}

pub fn build_projection_model(geometry: &TiltGeometry) -> Result<ProjectionModel> {
    geometry.validate()?;
    let l = geometry.layers_per_section;
    let h = geometry.h;
    let mut voxels = Vec::new();
    let mut rows = Vec::new();
    for section in 0..geometry.sections_per_patch() {
        for &angle in &geometry.angles {
            let (wx, wy) = angle.footprint(l);
            if wx > h || wy > h {
                continue;
            }
            for py in 0..=h - wy {
                for px in 0..=h - wx {
                    for layer in 0..l {
                        let (dx, dy) = angle.offset(layer, l);
                        let z = section * l + layer;
                        voxels.push(px + dx + h * (py + dy + h * z));
                    }
                    rows.push(RowInfo { section, angle, px, py });
                }
            }
        }
    }
    Ok(ProjectionModel {
        geometry: geometry.clone(),
        n: geometry.n(),
        voxels,
        rows,
    })
}

impl ProjectionModel {
    pub fn geometry(&self) -> &TiltGeometry {
        &self.geometry
    }

    pub fn rows(&self) -> usize {
        self.rows.len()
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.geometry.layers_per_section as f64
    }

    pub fn row_info(&self) -> &[RowInfo] {
        &self.rows
    }

    /// Voxel indices touched by `row`.
    pub fn row_voxels(&self, row: usize) -> &[usize] {
        let l = self.geometry.layers_per_section;
        &self.voxels[row * l..(row + 1) * l]
    }

    /// `(row, col, weight)` triplets in row order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let w = self.weight();
        (0..self.rows()).flat_map(move |r| self.row_voxels(r).iter().map(move |&c| (r, c, w)))
    }

    /// `P x` for one vectorized patch.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::shape(self.n, x.len()));
        }
        let w = self.weight();
        Ok((0..self.rows())
            .map(|r| self.row_voxels(r).iter().map(|&c| x[c]).sum::<f64>() * w)
            .collect())
    }

    /// `P D` for a column-per-atom matrix, returned column-major.
    pub fn apply_matrix(&self, d: ArrayView2<f64>) -> Result<Array2<f64>> {
        if d.nrows() != self.n {
            return Err(Error::shape(format!("{} rows", self.n), format!("{} rows", d.nrows())));
        }
        let m = self.rows();
        let w = self.weight();
        let mut out = Vec::with_capacity(m * d.ncols());
        let mut col = vec![0.0; self.n];
        for atom in d.columns() {
            for (c, v) in col.iter_mut().zip(atom.iter()) {
                *c = *v;
            }
            out.extend((0..m).map(|r| self.row_voxels(r).iter().map(|&c| col[c]).sum::<f64>() * w));
        }
        Ok(Array2::from_shape_vec((m, d.ncols()).f(), out).expect("shape"))
    }

    /// Dense `m x n` copy, for tests and small problems.
    pub fn to_dense(&self) -> Array2<f64> {
        let mut p = Array2::zeros((self.rows(), self.n));
        for (r, c, w) in self.entries() {
            p[[r, c]] += w;
        }
        p
    }
}
