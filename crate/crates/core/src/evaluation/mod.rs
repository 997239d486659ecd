//! Similarity scores between volumes and the two non-sparse baselines.

mod baselines;

pub use baselines::{backproject, cubic_z_interpolate, Backprojection};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Volume3D;

fn check_same_dims(a: &Volume3D, b: &Volume3D) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("{:?}", a.dims()), format!("{:?}", b.dims())));
    }
    Ok(())
}

/// Cosine of two equally long fields. `None` if either has zero norm.
fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return None;
    }
    // sqrt(aa * bb) rather than sqrt(aa) * sqrt(bb): exact 1.0 for identical inputs.
    Some((ab / (aa * bb).sqrt()).clamp(-1.0, 1.0))
}

/// `<a, b> / (|a| |b|)` over all voxels.
pub fn normalized_dot(a: &Volume3D, b: &Volume3D) -> Result<f64> {
    check_same_dims(a, b)?;
    cosine(a.data(), b.data()).ok_or(Error::ZeroNorm("normalized_dot operand"))
}

/// `normalized_dot` after subtracting each volume's mean.
pub fn normalized_dot_centered(a: &Volume3D, b: &Volume3D) -> Result<f64> {
    check_same_dims(a, b)?;
    let center = |v: &Volume3D| {
        let m = v.data().iter().sum::<f64>() / v.data().len() as f64;
        v.data().iter().map(|x| x - m).collect::<Vec<_>>()
    };
    cosine(&center(a), &center(b)).ok_or(Error::ZeroNorm("centered normalized_dot operand"))
}

/// Central-difference gradients `(gx, gy, gz)` on interior voxels.
pub fn central_gradients(v: &Volume3D) -> Result<[Vec<f64>; 3]> {
    let (nx, ny, nz) = v.dims();
    for (axis, dim) in [('x', nx), ('y', ny), ('z', nz)] {
        if dim < 3 {
            return Err(Error::DimensionTooSmall { axis, dim, extent: 3 });
        }
    }
    let cap = (nx - 2) * (ny - 2) * (nz - 2);
    let mut g = [
        Vec::with_capacity(cap),
        Vec::with_capacity(cap),
        Vec::with_capacity(cap),
    ];
    for z in 1..nz - 1 {
        for y in 1..ny - 1 {
            for x in 1..nx - 1 {
                g[0].push(0.5 * (v.get(x + 1, y, z) - v.get(x - 1, y, z)));
                g[1].push(0.5 * (v.get(x, y + 1, z) - v.get(x, y - 1, z)));
                g[2].push(0.5 * (v.get(x, y, z + 1) - v.get(x, y, z - 1)));
            }
        }
    }
    Ok(g)
}

/// Cosine of gradient fields, with 1.0 when both vanish and 0.0 when one does.
fn gradient_cosine(a: &[f64], b: &[f64]) -> f64 {
    let zero = |f: &[f64]| f.iter().all(|v| *v == 0.0);
    match (zero(a), zero(b)) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => cosine(a, b).expect("both fields nonzero"),
    }
}

/// `(grad_xy_ndp, grad_z_ndp)`; the x and y fields are scored jointly.
pub fn gradient_metrics(truth: &Volume3D, recon: &Volume3D) -> Result<(f64, f64)> {
    check_same_dims(truth, recon)?;
    let [tx, ty, tz] = central_gradients(truth)?;
    let [rx, ry, rz] = central_gradients(recon)?;
    let txy: Vec<f64> = tx.into_iter().chain(ty).collect();
    let rxy: Vec<f64> = rx.into_iter().chain(ry).collect();
    Ok((gradient_cosine(&txy, &rxy), gradient_cosine(&tz, &rz)))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub method: String,
    pub snr_db: Option<f64>,
    pub angles: Vec<String>,
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub volume_ndp: f64,
    /// `volume_ndp` on mean-subtracted volumes.
    pub volume_ndp_centered: f64,
    pub grad_xy_ndp: f64,
    pub grad_z_ndp: f64,
    #[serde(flatten)]
    pub meta: ReportMeta,
}

pub fn evaluate(truth: &Volume3D, recon: &Volume3D, meta: ReportMeta) -> Result<MetricReport> {
    let (grad_xy_ndp, grad_z_ndp) = gradient_metrics(truth, recon)?;
    Ok(MetricReport {
        volume_ndp: normalized_dot(truth, recon)?,
        volume_ndp_centered: normalized_dot_centered(truth, recon)?,
        grad_xy_ndp,
        grad_z_ndp,
        meta,
    })
}

#[cfg(test)]
mod tests;
