use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use tiltsr::dictionary::{learn_dictionary, load_dictionary, save_dictionary, Init};
use tiltsr::evaluation::{evaluate, ReportMeta};
use tiltsr::phantom::generate_phantom;
use tiltsr::reconstruction::{
    detect_fold_mask, inpaint, read_fold_mask, reconstruct_volume, write_fold_mask, ReconConfig, ReconReport,
};
use tiltsr::tomography::{build_projection_model, read_views, simulate_views, write_views};
use tiltsr::volume::{extract_patches, read_volume, write_volume};

use crate::config::RunConfig;
use crate::failure::Failure;
use crate::manifest::{hash_artifact, Hashed, Staging};
use crate::render::write_xz_slice;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Phantom,
    Train,
    Simulate,
    Reconstruct,
    DetectFolds,
    Inpaint,
    Evaluate,
    SweepLambda,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Phantom,
        Command::Train,
        Command::Simulate,
        Command::Reconstruct,
        Command::DetectFolds,
        Command::Inpaint,
        Command::Evaluate,
        Command::SweepLambda,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Phantom => "phantom",
            Command::Train => "train",
            Command::Simulate => "simulate",
            Command::Reconstruct => "reconstruct",
            Command::DetectFolds => "detect-folds",
            Command::Inpaint => "inpaint",
            Command::Evaluate => "evaluate",
            Command::SweepLambda => "sweep-lambda",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

/// What a finished command hands back to the driver.
pub struct Outcome {
    pub warnings: Vec<String>,
    pub summary: Value,
}

fn required<'a>(slot: &'a Option<PathBuf>, role: &str, command: Command) -> Result<&'a Path, Failure> {
    slot.as_deref().ok_or_else(|| {
        Failure::config(format!(
            "{} needs an input {role} (--{role} or inputs.{role})",
            command.name()
        ))
    })
}

/// Hashes every input the command reads, failing early on missing ones.
pub fn hash_inputs(command: Command, cfg: &RunConfig) -> Result<BTreeMap<String, Hashed>, Failure> {
    let i = &cfg.inputs;
    let mut roles: Vec<(String, &Path)> = Vec::new();
    match command {
        Command::Phantom => {}
        Command::Train | Command::Simulate => roles.push(("volume".into(), required(&i.volume, "volume", command)?)),
        Command::DetectFolds => roles.push(("views".into(), required(&i.views, "views", command)?)),
        Command::Reconstruct | Command::Inpaint => {
            roles.push(("views".into(), required(&i.views, "views", command)?));
            roles.push(("dictionary".into(), required(&i.dictionary, "dictionary", command)?));
            if let Some(f) = &i.folds {
                roles.push(("folds".into(), f));
            }
        }
        Command::Evaluate => {
            roles.push(("truth".into(), required(&i.truth, "truth", command)?));
            if i.candidates.is_empty() {
                return Err(Failure::config("evaluate needs at least one --candidate name=path"));
            }
            for (name, p) in &i.candidates {
                roles.push((format!("candidate:{name}"), p));
            }
        }
        Command::SweepLambda => {
            roles.push(("views".into(), required(&i.views, "views", command)?));
            roles.push(("dictionary".into(), required(&i.dictionary, "dictionary", command)?));
            roles.push(("truth".into(), required(&i.truth, "truth", command)?));
        }
    }
    roles
        .into_iter()
        .map(|(role, p)| Ok((role, hash_artifact(p)?)))
        .collect()
}

fn convergence_warning(report: &ReconReport, what: &str) -> Option<String> {
    (report.not_converged > 0).then(|| format!("{what}: {} lasso solves hit the iteration cap", report.not_converged))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn run(command: Command, cfg: &RunConfig, stage: &Staging) -> Result<Outcome, Failure> {
    let mut warnings = Vec::new();
    let inputs = &cfg.inputs;
    let summary = match command {
        Command::Phantom => {
            let v = generate_phantom(&cfg.phantom)?;
            write_volume(&v, stage.path("phantom"))?;
            json!({ "volume": "phantom.json", "dims": v.dims() })
        }
        Command::Train => {
            let volume = read_volume(required(&inputs.volume, "volume", command)?)?;
            let patch = cfg.train.patch(&cfg.geometry)?;
            let batch = extract_patches(&volume, &patch)?;
            let d = learn_dictionary(&batch, &cfg.train.learn_config(&patch, Init::RandomPatches))?;
            save_dictionary(&d, stage.path("dictionary"))?;
            json!({
                "dictionary": "dictionary.json",
                "patches": batch.len(),
                "k": d.k(),
                "mean_active": d.provenance.mean_active,
                "mean_relative_error": d.provenance.mean_relative_error,
            })
        }
        Command::Simulate => {
            let volume = read_volume(required(&inputs.volume, "volume", command)?)?;
            let views = simulate_views(&volume, &cfg.geometry, cfg.noise)?;
            write_views(&views, stage.path("views"))?;
            json!({ "views": "views.json", "sections": views.n_sections, "noise_sigma": views.noise_sigma })
        }
        Command::Reconstruct | Command::Inpaint => {
            let views = read_views(required(&inputs.views, "views", command)?)?;
            let dictionary = load_dictionary(required(&inputs.dictionary, "dictionary", command)?)?;
            let model = build_projection_model(&cfg.geometry)?;
            let folds = match (&inputs.folds, command) {
                (Some(p), _) => Some(read_fold_mask(p)?),
                (None, Command::Inpaint) => Some(detect_fold_mask(&views, &cfg.folds)?),
                (None, _) => None,
            };
            let r = match &folds {
                Some(f) if command == Command::Inpaint => inpaint(&views, &dictionary, &model, &cfg.recon, f)?,
                f => reconstruct_volume(&views, &dictionary, &model, &cfg.recon, f.as_ref())?,
            };
            let name = if command == Command::Inpaint {
                "inpainted"
            } else {
                "reconstruction"
            };
            write_volume(&r.volume, stage.path(name))?;
            write_json(&stage.path(&format!("{name}_report.json")), &r.report)?;
            warnings.extend(convergence_warning(&r.report, command.name()));
            json!({
                "volume": format!("{name}.json"),
                "patches_recovered": r.report.patches_recovered,
                "skipped": r.report.skipped.len(),
                "fold_pixels": folds.as_ref().map_or(0, |f| f.count()),
            })
        }
        Command::DetectFolds => {
            let views = read_views(required(&inputs.views, "views", command)?)?;
            let mask = detect_fold_mask(&views, &cfg.folds)?;
            write_fold_mask(&mask, stage.path("folds"))?;
            json!({ "folds": "folds.json", "fold_pixels": mask.count() })
        }
        Command::Evaluate => {
            let truth = read_volume(required(&inputs.truth, "truth", command)?)?;
            let window = truth.min_max();
            fs::create_dir_all(stage.path("slices"))?;
            write_xz_slice(&truth, window, &stage.path("slices/truth.png"))?;
            let mut reports = Vec::new();
            for (name, path) in &inputs.candidates {
                let candidate = read_volume(path)?;
                let meta = ReportMeta {
                    method: name.clone(),
                    ..ReportMeta::default()
                };
                reports.push(evaluate(&truth, &candidate, meta)?);
                write_xz_slice(&candidate, window, &stage.path(&format!("slices/{name}.png")))?;
            }
            write_json(&stage.path("metrics.json"), &reports)?;
            json!({ "metrics": "metrics.json", "reports": reports })
        }
        Command::SweepLambda => {
            let views = read_views(required(&inputs.views, "views", command)?)?;
            let dictionary = load_dictionary(required(&inputs.dictionary, "dictionary", command)?)?;
            let truth = read_volume(required(&inputs.truth, "truth", command)?)?;
            let model = build_projection_model(&cfg.geometry)?;
            let folds = inputs.folds.as_ref().map(read_fold_mask).transpose()?;
            let angles = if cfg.recon.single_view {
                vec!["normal".to_string()]
            } else {
                views.angles.iter().map(|a| a.label().to_string()).collect()
            };
            let mut rows = Vec::new();
            for &lambda in &cfg.sweep.lambdas {
                let rc = ReconConfig {
                    lambda_recover: lambda,
                    lambda_smooth: lambda,
                    ..cfg.recon.clone()
                };
                let r = reconstruct_volume(&views, &dictionary, &model, &rc, folds.as_ref())?;
                warnings.extend(convergence_warning(&r.report, &format!("lambda {lambda}")));
                let meta = ReportMeta {
                    method: "sparse".into(),
                    snr_db: views.snr_db,
                    angles: angles.clone(),
                    lambda: Some(lambda),
                };
                rows.push(evaluate(&truth, &r.volume, meta)?);
            }
            let best = rows
                .iter()
                .max_by(|a, b| a.volume_ndp.total_cmp(&b.volume_ndp))
                .and_then(|r| r.meta.lambda);
            write_json(
                &stage.path("sweep.json"),
                &json!({ "best_lambda": best, "results": rows }),
            )?;
            json!({ "sweep": "sweep.json", "best_lambda": best })
        }
    };
    Ok(Outcome { warnings, summary })
}
