//! `tiltsr`: phantoms, dictionary training, tilt-view simulation,
//! reconstruction, fold inpainting and evaluation from the command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 finished
//! with a convergence warning (outputs are still written).

mod commands;
mod config;
mod failure;
mod manifest;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use commands::Command;
use config::{Inputs, Overrides, RunConfig};
use failure::Failure;
use manifest::{manifest_name, read_manifest, Manifest, Staging};

#[derive(Parser, Debug)]
#[command(
    name = "tiltsr",
    version,
    about = "Depth super-resolution of serial-section volumes from tilt views"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Debug)]
struct Global {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores, 1 = sequential).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Reconstruct from the normal view only.
    #[arg(long, global = true)]
    single_view: bool,
    /// Folds appear bright instead of dark.
    #[arg(long, global = true)]
    reversed_contrast: bool,
    /// Sets the training, recovery and smoothing lambda at once.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    snr_db: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic membrane volume.
    Phantom,
    /// Learn a patch dictionary from a volume.
    Train {
        #[arg(long)]
        volume: Option<PathBuf>,
    },
    /// Project a volume into tilt views, optionally with noise.
    Simulate {
        #[arg(long)]
        volume: Option<PathBuf>,
    },
    /// Recover a volume from tilt views and a dictionary.
    Reconstruct {
        #[arg(long)]
        views: Option<PathBuf>,
        #[arg(long)]
        dictionary: Option<PathBuf>,
        #[arg(long)]
        folds: Option<PathBuf>,
    },
    /// Find folds in every normal view.
    DetectFolds {
        #[arg(long)]
        views: Option<PathBuf>,
    },
    /// Reconstruct with fold pixels treated as missing; folds are detected when no mask is given.
    Inpaint {
        #[arg(long)]
        views: Option<PathBuf>,
        #[arg(long)]
        dictionary: Option<PathBuf>,
        #[arg(long)]
        folds: Option<PathBuf>,
    },
    /// Compare candidate volumes against a ground truth.
    Evaluate {
        #[arg(long)]
        truth: Option<PathBuf>,
        /// `name=path`, repeatable.
        #[arg(long = "candidate", value_parser = parse_candidate)]
        candidates: Vec<(String, PathBuf)>,
    },
    /// Reconstruct over a grid of lambdas and score each against the truth.
    SweepLambda {
        #[arg(long)]
        views: Option<PathBuf>,
        #[arg(long)]
        dictionary: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        folds: Option<PathBuf>,
    },
    /// Repeat a run from its manifest, checking that the inputs are unchanged.
    Rerun { manifest: PathBuf },
}

fn parse_candidate(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_owned(), PathBuf::from(path))),
        _ => Err(format!("expected name=path, got {s:?}")),
    }
}

impl Cmd {
    /// The command to run and the input paths given on the command line;
    /// `None` for `rerun`.
    fn split(self) -> (Option<Command>, Inputs) {
        let mut i = Inputs::default();
        let command = match self {
            Cmd::Phantom => Command::Phantom,
            Cmd::Train { volume } => {
                i.volume = volume;
                Command::Train
            }
            Cmd::Simulate { volume } => {
                i.volume = volume;
                Command::Simulate
            }
            Cmd::Reconstruct {
                views,
                dictionary,
                folds,
            } => {
                (i.views, i.dictionary, i.folds) = (views, dictionary, folds);
                Command::Reconstruct
            }
            Cmd::Inpaint {
                views,
                dictionary,
                folds,
            } => {
                (i.views, i.dictionary, i.folds) = (views, dictionary, folds);
                Command::Inpaint
            }
            Cmd::DetectFolds { views } => {
                i.views = views;
                Command::DetectFolds
            }
            Cmd::Evaluate { truth, candidates } => {
                i.truth = truth;
                i.candidates = candidates.into_iter().collect();
                Command::Evaluate
            }
            Cmd::SweepLambda {
                views,
                dictionary,
                truth,
                folds,
            } => {
                (i.views, i.dictionary, i.truth, i.folds) = (views, dictionary, truth, folds);
                Command::SweepLambda
            }
            Cmd::Rerun { .. } => return (None, i),
        };
        (Some(command), i)
    }
}

/// Resolves the command and its full configuration.
fn prepare(cli: Cli) -> Result<(Command, RunConfig), Failure> {
    let g = cli.global;
    let rerun = match &cli.command {
        Cmd::Rerun { manifest } => Some(read_manifest(manifest)?),
        _ => None,
    };
    let (command, inputs) = cli.command.split();
    let overrides = Overrides {
        seed: g.seed,
        threads: g.threads,
        out: g.out,
        single_view: g.single_view,
        reversed_contrast: g.reversed_contrast,
        lambda: g.lambda,
        snr_db: g.snr_db,
        inputs,
    };
    let (command, cfg) = match rerun {
        Some(m) => {
            let command = Command::from_name(&m.command)
                .ok_or_else(|| Failure::data(format!("manifest names unknown command {:?}", m.command)))?;
            let mut cfg = m.config;
            cfg.apply(overrides);
            let now = commands::hash_inputs(command, &cfg)?;
            for (role, before) in &m.inputs {
                match now.get(role) {
                    Some(h) if h.sha256 == before.sha256 => {}
                    _ => {
                        return Err(Failure::data(format!(
                            "input {role} ({}) differs from the manifest",
                            before.path.display()
                        )))
                    }
                }
            }
            (command, cfg)
        }
        None => {
            let mut cfg = RunConfig::load(g.config.as_deref())?;
            cfg.apply(overrides);
            (command.expect("not a rerun"), cfg)
        }
    };
    cfg.validate()?;
    Ok((command, cfg))
}

/// Runs one command; `Ok(true)` means it finished with warnings.
fn execute(command: Command, cfg: RunConfig) -> Result<bool, Failure> {
    let inputs = commands::hash_inputs(command, &cfg)?;
    let stage = Staging::new(&cfg.out, command.name())?;
    let threads = cfg.threads;
    let outcome = tiltsr::par::with_threads(threads, || commands::run(command, &cfg, &stage))?;
    for w in &outcome.warnings {
        log::warn!("{w}");
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.name().into(),
        inputs,
        outputs: stage.hashes()?,
        warnings: outcome.warnings.clone(),
        config: cfg.clone(),
    };
    let name = manifest_name(command.name());
    std::fs::write(stage.path(&name), serde_json::to_string_pretty(&manifest)?)?;
    stage.commit()?;
    let warned = !outcome.warnings.is_empty();
    println!(
        "{}",
        json!({
            "status": if warned { "convergence_warning" } else { "ok" },
            "command": command.name(),
            "out": cfg.out,
            "manifest": cfg.out.join(name),
            "warnings": outcome.warnings,
            "summary": outcome.summary,
        })
    );
    Ok(warned)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let f = Failure::config(e.to_string().trim_end());
            eprintln!("{}", f.to_json());
            return ExitCode::from(f.exit_code() as u8);
        }
    };
    match prepare(cli).and_then(|(command, cfg)| execute(command, cfg)) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(4),
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
