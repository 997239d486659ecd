//! TV1 view sets: a JSON manifest plus one VV1 image and one bitmask per
//! (section, angle).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::views::SNR_DEFINITION;
use super::{TiltAngle, TiltViewSet};
use crate::error::{Error, Result};
use crate::volume::{read_bitmask, read_image, stem, with_suffix, write_bitmask, write_image};

pub const TV1: &str = "TV1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    dims: [usize; 2],
    n_sections: usize,
    layers_per_section: usize,
    angles: Vec<TiltAngle>,
    snr_db: Option<f64>,
    noise_sigma: f64,
    noise_seed: Option<u64>,
    snr_definition: String,
    images: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    section: usize,
    angle: TiltAngle,
    image: String,
    mask: String,
}

fn sibling(manifest: &Path, name: &str) -> PathBuf {
    manifest.parent().map_or_else(|| PathBuf::from(name), |d| d.join(name))
}

/// Writes `<stem>.json` and the per-view files next to it.
pub fn write_views(views: &TiltViewSet, path: impl AsRef<Path>) -> Result<()> {
    views.validate()?;
    let stem = stem(path.as_ref());
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let base = stem.file_name().and_then(|s| s.to_str()).unwrap_or("views").to_string();
    let manifest_path = with_suffix(&stem, ".json");
    let mut entries = Vec::new();
    for s in 0..views.n_sections {
        for (ai, &angle) in views.angles.iter().enumerate() {
            let name = format!("{base}_s{s:03}_{}", angle.file_tag());
            let slot = s * views.angles.len() + ai;
            write_image(&views.images[slot], sibling(&manifest_path, &name))?;
            let mask = format!("{name}.mask");
            write_bitmask(&sibling(&manifest_path, &mask), &views.masks[slot])?;
            entries.push(Entry {
                section: s,
                angle,
                image: format!("{name}.json"),
                mask,
            });
        }
    }
    let manifest = Manifest {
        format: TV1.into(),
        dims: [views.nx, views.ny],
        n_sections: views.n_sections,
        layers_per_section: views.layers_per_section,
        angles: views.angles.clone(),
        snr_db: views.snr_db,
        noise_sigma: views.noise_sigma,
        noise_seed: views.noise_seed,
        snr_definition: SNR_DEFINITION.into(),
        images: entries,
    };
    fs::write(manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_views(path: impl AsRef<Path>) -> Result<TiltViewSet> {
    let manifest_path = with_suffix(&stem(path.as_ref()), ".json");
    let text = fs::read_to_string(&manifest_path)?;
    let bad = |reason: String| Error::MalformedHeader {
        path: manifest_path.clone(),
        reason,
    };
    let m: Manifest = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if m.format != TV1 {
        return Err(bad(format!("format {:?}, expected {TV1:?}", m.format)));
    }
    let [nx, ny] = m.dims;
    let n_angles = m.angles.len();
    if m.images.len() != m.n_sections * n_angles {
        return Err(bad(format!(
            "{} image entries for {} sections x {n_angles} angles",
            m.images.len(),
            m.n_sections
        )));
    }
    let mut images = vec![None; m.images.len()];
    let mut masks = vec![None; m.images.len()];
    for e in &m.images {
        let ai = m
            .angles
            .iter()
            .position(|a| *a == e.angle)
            .ok_or_else(|| bad(format!("entry angle {} not in angle list", e.angle)))?;
        if e.section >= m.n_sections {
            return Err(bad(format!("entry section {} out of range", e.section)));
        }
        let slot = e.section * n_angles + ai;
        let img = read_image(sibling(&manifest_path, &e.image))?;
        if img.nx != nx || img.ny != ny {
            return Err(Error::shape(format!("{nx} x {ny}"), format!("{} x {}", img.nx, img.ny)));
        }
        images[slot] = Some(img);
        masks[slot] = Some(read_bitmask(&sibling(&manifest_path, &e.mask), nx * ny)?);
    }
    let images = images
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| bad("duplicate entries".into()))?;
    let masks = masks
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| bad("duplicate entries".into()))?;
    let views = TiltViewSet {
        nx,
        ny,
        n_sections: m.n_sections,
        layers_per_section: m.layers_per_section,
        angles: m.angles,
        images,
        masks,
        snr_db: m.snr_db,
        noise_sigma: m.noise_sigma,
        noise_seed: m.noise_seed,
    };
    views.validate()?;
    Ok(views)
}
