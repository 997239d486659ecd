//! Patch-wise sparse recovery of a depth-resolved volume from tilt views.
//!
//! Step A codes the measurements of every patch on the recovery lattice over
//! `B = P D` (rows the patch cannot use are dropped) and averages the decoded
//! patches. Step B re-codes patches of that estimate over `D` itself on the
//! smoothing lattice and averages again; its output replaces step A's.

mod folds;

pub use folds::{detect_fold_mask, detect_folds, read_fold_mask, write_fold_mask, FoldMask, FoldParams};

use ndarray::{Array2, ShapeBuilder};
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::solver::{self, Algorithm, SolverConfig, SparseCode};
use crate::tomography::{build_projection_model, ProjectionModel, TiltAngle, TiltViewSet};
use crate::volume::{lattice_positions, OverlapAccumulator, PatchSpec, Volume3D};

const CHUNK: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconConfig {
    pub lambda_recover: f64,
    pub lambda_smooth: f64,
    /// `None` means `(1, 1, L)`.
    pub recover_stride: Option<[usize; 3]>,
    pub smooth_stride: [usize; 3],
    pub smooth_enabled: bool,
    pub single_view: bool,
    /// Patches with fewer valid rows than this fraction of `m` are skipped.
    pub min_valid_fraction: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub algorithm: Algorithm,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            lambda_recover: 0.1,
            lambda_smooth: 0.1,
            recover_stride: None,
            smooth_stride: [1, 1, 1],
            smooth_enabled: true,
            single_view: false,
            min_valid_fraction: 0.1,
            tol: 1e-6,
            max_iter: 1000,
            algorithm: Algorithm::ActiveSet,
        }
    }
}

impl ReconConfig {
    pub fn recover_stride(&self, layers: usize) -> [usize; 3] {
        self.recover_stride.unwrap_or([1, 1, layers])
    }

    pub fn validate(&self, layers: usize) -> Result<()> {
        for (name, l) in [
            ("lambda_recover", self.lambda_recover),
            ("lambda_smooth", self.lambda_smooth),
        ] {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::config(format!("{name} must be finite and >= 0, got {l}")));
            }
        }
        let rs = self.recover_stride(layers);
        if rs.contains(&0) || self.smooth_stride.contains(&0) {
            return Err(Error::config("strides must be >= 1"));
        }
        if !rs[2].is_multiple_of(layers) {
            return Err(Error::config(format!(
                "recover stride in z ({}) must be a multiple of the {layers} layers per section",
                rs[2]
            )));
        }
        if !(0.0..=1.0).contains(&self.min_valid_fraction) {
            return Err(Error::config("min_valid_fraction must lie in [0, 1]"));
        }
        self.solver(self.lambda_recover).validate()
    }

    fn solver(&self, lambda: f64) -> SolverConfig {
        SolverConfig {
            lambda,
            tol: self.tol,
            max_iter: self.max_iter,
            algorithm: self.algorithm,
            ..SolverConfig::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReconReport {
    pub patches_recovered: usize,
    /// Origins skipped for lack of valid measurements.
    pub skipped: Vec<[usize; 3]>,
    /// Patches that kept at least one but not all measurement rows.
    pub partial_patches: usize,
    /// Voxels no recovered patch covered (filled with zero).
    pub uncovered_voxels: usize,
    pub patches_smoothed: usize,
    /// Lasso solves that hit the iteration cap.
    pub not_converged: usize,
    pub mean_active: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub volume: Volume3D,
    /// Step-A average, before smoothing.
    pub recovered: Volume3D,
    pub report: ReconReport,
}

/// `P D`, its Gram matrix, and the dictionary it was built from.
pub struct RecoveryOperator<'a> {
    dictionary: &'a Dictionary,
    model: ProjectionModel,
    pd: Array2<f64>,
    gram: Array2<f64>,
}

impl<'a> RecoveryOperator<'a> {
    pub fn new(dictionary: &'a Dictionary, model: ProjectionModel) -> Result<Self> {
        let g = model.geometry();
        if dictionary.spec().h != g.h || dictionary.spec().v != g.v {
            return Err(Error::shape(
                format!("{}x{}x{} patches", g.h, g.h, g.v),
                format!(
                    "{}x{}x{} atoms",
                    dictionary.spec().h,
                    dictionary.spec().h,
                    dictionary.spec().v
                ),
            ));
        }
        let pd = model.apply_matrix(dictionary.atoms().view())?;
        let gram = pd.t().dot(&pd);
        Ok(Self {
            dictionary,
            model,
            pd,
            gram,
        })
    }

    pub fn model(&self) -> &ProjectionModel {
        &self.model
    }
}

enum PatchOutcome {
    Solved {
        patch: Vec<f64>,
        code: SparseCode,
        partial: bool,
    },
    Skipped,
}

fn decode_into(d: &Dictionary, coeffs: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (j, &a) in coeffs.iter().enumerate() {
        if a != 0.0 {
            for (o, dj) in out.iter_mut().zip(d.atom(j).iter()) {
                *o += a * dj;
            }
        }
    }
}

/// Full pipeline. `folds`, if given, invalidates every ray crossing a fold pixel.
pub fn reconstruct_volume(
    views: &TiltViewSet,
    dictionary: &Dictionary,
    model: &ProjectionModel,
    config: &ReconConfig,
    folds: Option<&FoldMask>,
) -> Result<Reconstruction> {
    let model = effective_model(model, config)?;
    let op = RecoveryOperator::new(dictionary, model)?;
    reconstruct_with(views, &op, config, folds)
}

/// Same as `reconstruct_volume` with fold rows dropped.
pub fn inpaint(
    views: &TiltViewSet,
    dictionary: &Dictionary,
    model: &ProjectionModel,
    config: &ReconConfig,
    folds: &FoldMask,
) -> Result<Reconstruction> {
    reconstruct_volume(views, dictionary, model, config, Some(folds))
}

fn effective_model(model: &ProjectionModel, config: &ReconConfig) -> Result<ProjectionModel> {
    let g = model.geometry();
    if !config.single_view || g.angles == [TiltAngle::Normal] {
        return Ok(model.clone());
    }
    if !g.angles.contains(&TiltAngle::Normal) {
        return Err(Error::config("single-view mode needs the normal angle"));
    }
    build_projection_model(&g.normal_only())
}

/// Reconstruction with a prebuilt operator; reuse it across calls to skip
/// recomputing `P D` and its Gram matrix.
pub fn reconstruct_with(
    views: &TiltViewSet,
    op: &RecoveryOperator,
    config: &ReconConfig,
    folds: Option<&FoldMask>,
) -> Result<Reconstruction> {
    let g = op.model.geometry().clone();
    let l = g.layers_per_section;
    config.validate(l)?;
    views.validate()?;
    if views.layers_per_section != l {
        return Err(Error::shape(
            format!("{l} layers per section"),
            views.layers_per_section,
        ));
    }
    if views.n_sections < g.sections_per_patch() {
        return Err(Error::DimensionTooSmall {
            axis: 'z',
            dim: views.nz(),
            extent: g.v,
        });
    }
    let occluded;
    let views = match folds {
        Some(f) => {
            f.check_matches(views)?;
            let mut v = views.clone();
            for s in 0..v.n_sections {
                if f.section(s).iter().any(|b| *b) {
                    v.occlude(s, f.section(s))?;
                }
            }
            occluded = v;
            &occluded
        }
        None => views,
    };

    let (nx, ny, nz) = (views.nx, views.ny, views.nz());
    let stride = config.recover_stride(l);
    let xs = lattice_positions(nx, g.h, stride[0]);
    let ys = lattice_positions(ny, g.h, stride[1]);
    let zs = lattice_positions(nz, g.v, stride[2]);
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::DimensionTooSmall {
            axis: if xs.is_empty() { 'x' } else { 'y' },
            dim: if xs.is_empty() { nx } else { ny },
            extent: g.h,
        });
    }
    let mut origins = Vec::with_capacity(xs.len() * ys.len() * zs.len());
    for &z in &zs {
        for &y in &ys {
            origins.extend(xs.iter().map(|&x| [x, y, z]));
        }
    }

    let m = op.model.rows();
    let min_rows = (config.min_valid_fraction * m as f64).ceil() as usize;
    let cfg = config.solver(config.lambda_recover);
    let spec = PatchSpec::new(g.h, g.v, stride)?;
    let mut acc = OverlapAccumulator::new((nx, ny, nz), spec);
    let mut report = ReconReport::default();
    let mut active = 0usize;

    for chunk in origins.chunks(CHUNK) {
        let outcomes = recover_chunk(views, op, chunk, &cfg, min_rows)?;
        for (origin, outcome) in chunk.iter().zip(outcomes) {
            match outcome {
                PatchOutcome::Solved { patch, code, partial } => {
                    acc.add(*origin, &patch)?;
                    report.patches_recovered += 1;
                    report.partial_patches += partial as usize;
                    report.not_converged += !code.converged as usize;
                    active += code.n_nonzero;
                }
                PatchOutcome::Skipped => report.skipped.push(*origin),
            }
        }
    }
    if !report.skipped.is_empty() {
        log::warn!(
            "{} patches skipped with fewer than {min_rows} of {m} valid measurements",
            report.skipped.len()
        );
    }
    report.mean_active = active as f64 / report.patches_recovered.max(1) as f64;
    let (recovered, gaps) = acc.finish_with_fill(None);
    report.uncovered_voxels = gaps;
    if gaps > 0 {
        log::warn!("{gaps} voxels not covered by any recovered patch; set to zero");
    }

    let volume = if config.smooth_enabled {
        smooth(&recovered, op.dictionary, config, &mut report)?
    } else {
        recovered.clone()
    };
    Ok(Reconstruction {
        volume,
        recovered,
        report,
    })
}

fn recover_chunk(
    views: &TiltViewSet,
    op: &RecoveryOperator,
    chunk: &[[usize; 3]],
    cfg: &SolverConfig,
    min_rows: usize,
) -> Result<Vec<PatchOutcome>> {
    let m = op.model.rows();
    let l = op.model.geometry().layers_per_section;
    let mut ys = Array2::<f64>::zeros((m, chunk.len()).f());
    let mut valid = vec![vec![false; m]; chunk.len()];
    for (t, o) in chunk.iter().enumerate() {
        let mut col = ys.column_mut(t);
        let vals = col.as_slice_mut().expect("column-major");
        crate::tomography::gather_into(views, &op.model, (o[0], o[1], o[2] / l), vals, &mut valid[t])?;
    }
    let full: Vec<usize> = (0..chunk.len()).filter(|&t| valid[t].iter().all(|v| *v)).collect();
    let mut corr_cols = Array2::<f64>::zeros((m, full.len()).f());
    for (c, &t) in full.iter().enumerate() {
        corr_cols.column_mut(c).assign(&ys.column(t));
    }
    let corr = op.pd.t().dot(&corr_cols);
    let mut full_pos = vec![usize::MAX; chunk.len()];
    for (c, &t) in full.iter().enumerate() {
        full_pos[t] = c;
    }
    let n = op.dictionary.n();
    let results = crate::par::map_range(chunk.len(), |t| -> Result<PatchOutcome> {
        let y = ys.column(t);
        let code = if full_pos[t] != usize::MAX {
            let c = corr.column(full_pos[t]).to_vec();
            solver::gram_solve(op.gram.view(), &c, y.dot(&y), cfg, None)
        } else {
            if valid[t].iter().filter(|v| **v).count() < min_rows.max(1) {
                return Ok(PatchOutcome::Skipped);
            }
            let y = y.as_slice().expect("column-major");
            solver::solve_kept_rows(op.pd.view(), op.gram.view(), y, &valid[t], cfg)?
        };
        let mut patch = vec![0.0; n];
        decode_into(op.dictionary, &code.coeffs, &mut patch);
        Ok(PatchOutcome::Solved {
            patch,
            code,
            partial: full_pos[t] == usize::MAX,
        })
    });
    results.into_iter().collect()
}

/// Step B: re-code patches of `volume` over the dictionary and average.
fn smooth(volume: &Volume3D, d: &Dictionary, config: &ReconConfig, report: &mut ReconReport) -> Result<Volume3D> {
    let spec = PatchSpec::new(d.spec().h, d.spec().v, config.smooth_stride)?;
    let origins = crate::volume::patch_origins(volume.dims(), &spec)?;
    let gram = d.atoms().t().dot(d.atoms());
    let cfg = config.solver(config.lambda_smooth);
    let mut acc = OverlapAccumulator::new(volume.dims(), spec);
    for chunk in origins.chunks(CHUNK) {
        let batch = crate::volume::extract_at(volume, &spec, chunk.to_vec())?;
        let corr = d.atoms().t().dot(&batch.matrix);
        let patches = crate::par::map_range(chunk.len(), |t| {
            let x = batch.matrix.column(t);
            let c = corr.column(t).to_vec();
            let code = solver::gram_solve(gram.view(), &c, x.dot(&x), &cfg, None);
            let mut patch = vec![0.0; d.n()];
            decode_into(d, &code.coeffs, &mut patch);
            (patch, code.converged)
        });
        for (origin, (patch, converged)) in chunk.iter().zip(patches) {
            acc.add(*origin, &patch)?;
            report.not_converged += !converged as usize;
        }
        report.patches_smoothed += chunk.len();
    }
    acc.finish()
}

#[cfg(test)]
mod tests;
