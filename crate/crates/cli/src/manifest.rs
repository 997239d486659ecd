//! Run manifests and the staging directory that keeps failed runs from
//! leaving partial outputs behind.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::failure::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    /// Role to artifact, hashed over every file the artifact consists of.
    pub inputs: BTreeMap<String, Hashed>,
    /// Output file name (relative to `config.out`) to sha256.
    pub outputs: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hashed {
    pub path: PathBuf,
    pub sha256: String,
}

pub fn manifest_name(command: &str) -> String {
    format!("{command}.manifest.json")
}

/// Every file making up the artifact named by `path`: `<stem>.json`,
/// `<stem>.raw` and any `<stem>_*` siblings (per-view images, masks).
pub fn artifact_files(path: &Path) -> Result<Vec<PathBuf>, Failure> {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("raw") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let base = stem
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Failure::config(format!("bad artifact path {}", path.display())))?
        .to_owned();
    let dir = match stem.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let header = dir.join(format!("{base}.json"));
    if !header.is_file() {
        return Err(Failure::data(format!("input {} not found", header.display())));
    }
    let prefix = format!("{base}_");
    let mut files = Vec::new();
    for entry in fs::read_dir(&dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let ours = name == format!("{base}.json") || name == format!("{base}.raw") || name.starts_with(&prefix);
        if ours && entry.file_type()?.is_file() {
            files.push(entry.path());
        }
    }
    files.sort();
    Ok(files)
}

pub fn hash_files(files: &[PathBuf]) -> Result<String, Failure> {
    let mut h = Sha256::new();
    for f in files {
        let bytes = fs::read(f)?;
        let name = f
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        h.update(name.as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(format!("{:x}", h.finalize()))
}

pub fn hash_artifact(path: &Path) -> Result<Hashed, Failure> {
    Ok(Hashed {
        path: path.to_path_buf(),
        sha256: hash_files(&artifact_files(path)?)?,
    })
}

pub fn read_manifest(path: &Path) -> Result<Manifest, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::data(format!("cannot read manifest {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::data(format!("manifest {}: {e}", path.display())))
}

/// Outputs are written here first and moved into place only when the run succeeds.
pub struct Staging {
    dir: PathBuf,
    out: PathBuf,
    committed: bool,
}

impl Staging {
    pub fn new(out: &Path, command: &str) -> Result<Self, Failure> {
        fs::create_dir_all(out)?;
        let dir = out.join(format!(".partial-{command}-{}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            out: out.to_path_buf(),
            committed: false,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Hashes of every staged file, keyed by path relative to the output directory.
    pub fn hashes(&self) -> Result<BTreeMap<String, String>, Failure> {
        let mut out = BTreeMap::new();
        let mut stack = vec![self.dir.clone()];
        while let Some(d) = stack.pop() {
            for entry in fs::read_dir(&d)? {
                let p = entry?.path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    let rel = p
                        .strip_prefix(&self.dir)
                        .expect("inside staging")
                        .to_string_lossy()
                        .into_owned();
                    let mut h = Sha256::new();
                    h.update(fs::read(&p)?);
                    out.insert(rel, format!("{:x}", h.finalize()));
                }
            }
        }
        Ok(out)
    }

    /// Moves every staged entry into the output directory, replacing older files.
    pub fn commit(mut self) -> Result<(), Failure> {
        for entry in fs::read_dir(&self.dir)? {
            let entry = entry?;
            let target = self.out.join(entry.file_name());
            if target.is_dir() {
                fs::remove_dir_all(&target)?;
            }
            fs::rename(entry.path(), &target)?;
        }
        fs::remove_dir(&self.dir)?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}
