//! Run configuration: one JSON document covering every command. Sections a
//! command does not use are carried along unchanged so the manifest can
//! replay any run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tiltsr::dictionary::{Init, LearnConfig};
use tiltsr::phantom::PhantomSpec;
use tiltsr::reconstruction::{FoldParams, ReconConfig};
use tiltsr::solver::Algorithm;
use tiltsr::tomography::{NoiseSpec, TiltGeometry};
use tiltsr::volume::PatchSpec;

use crate::failure::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Overrides the seed of every seeded section when set.
    pub seed: Option<u64>,
    /// Worker count; 0 uses every available core.
    pub threads: usize,
    pub out: PathBuf,
    pub inputs: Inputs,
    pub phantom: PhantomSpec,
    pub train: TrainConfig,
    pub geometry: TiltGeometry,
    pub noise: NoiseSpec,
    pub recon: ReconConfig,
    pub folds: FoldParams,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            threads: 0,
            out: PathBuf::from("out"),
            inputs: Inputs::default(),
            phantom: PhantomSpec::default(),
            train: TrainConfig::default(),
            geometry: TiltGeometry::standard(),
            noise: NoiseSpec::noiseless(),
            recon: ReconConfig::default(),
            folds: FoldParams::default(),
            sweep: SweepConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Inputs {
    pub volume: Option<PathBuf>,
    pub views: Option<PathBuf>,
    pub dictionary: Option<PathBuf>,
    pub folds: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    /// Method name to volume path, for `evaluate`.
    pub candidates: BTreeMap<String, PathBuf>,
}

/// Serializable mirror of [`LearnConfig`]; the patch shape comes from `geometry`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// 0 means `2 n`.
    pub k: usize,
    pub lambda: f64,
    pub n_epochs: usize,
    /// 0 means full batch.
    pub batch_size: usize,
    pub seed: u64,
    pub stride: [usize; 3],
    pub plateau_tol: f64,
    pub coding_tol: f64,
    pub coding_max_iter: usize,
    pub algorithm: Algorithm,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let base = LearnConfig::for_patch(&PatchSpec::dense(1, 1));
        Self {
            k: 0,
            lambda: base.lambda,
            n_epochs: base.n_epochs,
            batch_size: 0,
            seed: base.seed,
            stride: [3, 3, 3],
            plateau_tol: base.plateau_tol,
            coding_tol: base.coding_tol,
            coding_max_iter: base.coding_max_iter,
            algorithm: base.algorithm,
        }
    }
}

impl TrainConfig {
    pub fn patch(&self, geometry: &TiltGeometry) -> Result<PatchSpec, Failure> {
        Ok(PatchSpec::new(geometry.h, geometry.v, self.stride)?)
    }

    pub fn learn_config(&self, patch: &PatchSpec, init: Init) -> LearnConfig {
        LearnConfig {
            k: if self.k == 0 { 2 * patch.n() } else { self.k },
            lambda: self.lambda,
            n_epochs: self.n_epochs,
            batch_size: if self.batch_size == 0 {
                usize::MAX
            } else {
                self.batch_size
            },
            seed: self.seed,
            init,
            plateau_tol: self.plateau_tol,
            coding_tol: self.coding_tol,
            coding_max_iter: self.coding_max_iter,
            algorithm: self.algorithm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            lambdas: vec![0.01, 0.03, 0.1, 0.3, 1.0],
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub single_view: bool,
    pub reversed_contrast: bool,
    pub lambda: Option<f64>,
    pub snr_db: Option<f64>,
    pub inputs: Inputs,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::config(format!("config {}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: Overrides) {
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if let Some(seed) = self.seed {
            self.phantom.seed = seed;
            self.train.seed = seed;
            self.noise.seed = seed;
        }
        if let Some(t) = o.threads {
            self.threads = t;
        }
        if let Some(out) = o.out {
            self.out = out;
        }
        self.recon.single_view |= o.single_view;
        self.folds.reversed_contrast |= o.reversed_contrast;
        if let Some(l) = o.lambda {
            self.train.lambda = l;
            self.recon.lambda_recover = l;
            self.recon.lambda_smooth = l;
        }
        if o.snr_db.is_some() {
            self.noise.snr_db = o.snr_db;
        }
        let i = o.inputs;
        for (slot, value) in [
            (&mut self.inputs.volume, i.volume),
            (&mut self.inputs.views, i.views),
            (&mut self.inputs.dictionary, i.dictionary),
            (&mut self.inputs.folds, i.folds),
            (&mut self.inputs.truth, i.truth),
        ] {
            if value.is_some() {
                *slot = value;
            }
        }
        self.inputs.candidates.extend(i.candidates);
    }

    /// Checks every section up front so no command fails halfway on a bad value.
    pub fn validate(&self) -> Result<(), Failure> {
        self.phantom.validate()?;
        self.geometry.validate()?;
        let patch = self.train.patch(&self.geometry)?;
        self.train.learn_config(&patch, Init::RandomPatches).validate()?;
        self.recon.validate(self.geometry.layers_per_section)?;
        if let Some(snr) = self.noise.snr_db {
            if !snr.is_finite() {
                return Err(Failure::config("noise.snr_db must be finite"));
            }
        }
        if self.sweep.lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Failure::config("sweep.lambdas must be finite and >= 0"));
        }
        Ok(())
    }
}
