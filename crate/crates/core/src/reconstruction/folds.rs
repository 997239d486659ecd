//! Fold detection on section images and the per-section fold mask.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tomography::{TiltAngle, TiltViewSet};
use crate::volume::{read_bitmask, stem, with_suffix, write_bitmask, Image2D};

/// One boolean image per section; `true` marks a fold pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldMask {
    pub nx: usize,
    pub ny: usize,
    sections: Vec<Vec<bool>>,
}

impl FoldMask {
    pub fn empty(nx: usize, ny: usize, n_sections: usize) -> Self {
        Self {
            nx,
            ny,
            sections: vec![vec![false; nx * ny]; n_sections],
        }
    }

    pub fn from_sections(nx: usize, ny: usize, sections: Vec<Vec<bool>>) -> Result<Self> {
        if let Some(s) = sections.iter().find(|s| s.len() != nx * ny) {
            return Err(Error::shape(nx * ny, s.len()));
        }
        Ok(Self { nx, ny, sections })
    }

    pub fn n_sections(&self) -> usize {
        self.sections.len()
    }

    pub fn section(&self, s: usize) -> &[bool] {
        &self.sections[s]
    }

    pub fn section_mut(&mut self, s: usize) -> &mut [bool] {
        &mut self.sections[s]
    }

    pub fn count(&self) -> usize {
        self.sections.iter().flatten().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub(crate) fn check_matches(&self, views: &TiltViewSet) -> Result<()> {
        if (self.nx, self.ny, self.n_sections()) != (views.nx, views.ny, views.n_sections) {
            return Err(Error::shape(
                format!("{}x{} x {} sections", views.nx, views.ny, views.n_sections),
                format!("{}x{} x {} sections", self.nx, self.ny, self.n_sections()),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FoldParams {
    /// Threshold distance from the mean, in standard deviations.
    pub sigma_k: f64,
    /// Non-fold regions smaller than this are absorbed into the mask.
    pub min_region: usize,
    /// Fold regions smaller than this are discarded as dust.
    pub min_fold: usize,
    /// Folds are bright instead of dark.
    pub reversed_contrast: bool,
}

impl Default for FoldParams {
    fn default() -> Self {
        Self {
            sigma_k: 4.0,
            min_region: 64,
            min_fold: 16,
            reversed_contrast: false,
        }
    }
}

const NEIGHBOURS: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

/// 3x3 dilation (`outside = false`) or erosion (`outside = true`).
fn morph(mask: &[bool], nx: usize, ny: usize, dilate: bool) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for y in 0..ny {
        for x in 0..nx {
            let mut hit = mask[x + nx * y];
            for &(dx, dy) in &NEIGHBOURS {
                let (qx, qy) = (x as isize + dx, y as isize + dy);
                let inside = qx >= 0 && qy >= 0 && (qx as usize) < nx && (qy as usize) < ny;
                let v = if inside {
                    mask[qx as usize + nx * qy as usize]
                } else {
                    !dilate
                };
                if dilate {
                    hit |= v;
                } else {
                    hit &= v;
                }
            }
            out[x + nx * y] = hit;
        }
    }
    out
}

/// 8-connected components of pixels equal to `value`.
fn components(mask: &[bool], nx: usize, ny: usize, value: bool) -> Vec<Vec<usize>> {
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if seen[start] || mask[start] != value {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(p) = queue.pop_front() {
            comp.push(p);
            let (x, y) = ((p % nx) as isize, (p / nx) as isize);
            for &(dx, dy) in &NEIGHBOURS {
                let (qx, qy) = (x + dx, y + dy);
                if qx < 0 || qy < 0 || qx as usize >= nx || qy as usize >= ny {
                    continue;
                }
                let q = qx as usize + nx * qy as usize;
                if !seen[q] && mask[q] == value {
                    seen[q] = true;
                    queue.push_back(q);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Fold pixels of one section image: threshold at `mean - k sigma`, close
/// with a 3x3 element, absorb small non-fold regions, drop small fold regions.
pub fn detect_folds(image: &Image2D, params: &FoldParams) -> Result<Vec<bool>> {
    let (nx, ny) = (image.nx, image.ny);
    if let Some(index) = image.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let (mean, sd) = image.mean_std();
    if sd == 0.0 {
        log::warn!("fold detection: image has zero variance; no folds marked");
        return Ok(vec![false; nx * ny]);
    }
    let mask: Vec<bool> = if params.reversed_contrast {
        let t = mean + params.sigma_k * sd;
        image.data.iter().map(|&v| v > t).collect()
    } else {
        let t = mean - params.sigma_k * sd;
        image.data.iter().map(|&v| v < t).collect()
    };
    let mut mask = morph(&morph(&mask, nx, ny, true), nx, ny, false);
    for comp in components(&mask, nx, ny, false) {
        if comp.len() < params.min_region {
            comp.iter().for_each(|&p| mask[p] = true);
        }
    }
    for comp in components(&mask, nx, ny, true) {
        if comp.len() < params.min_fold {
            comp.iter().for_each(|&p| mask[p] = false);
        }
    }
    Ok(mask)
}

/// Runs `detect_folds` on the normal view of every section.
pub fn detect_fold_mask(views: &TiltViewSet, params: &FoldParams) -> Result<FoldMask> {
    let angle = if views.angle_index(TiltAngle::Normal).is_some() {
        TiltAngle::Normal
    } else {
        *views
            .angles
            .first()
            .ok_or_else(|| Error::config("view set has no angles"))?
    };
    let sections = crate::par::map_range(views.n_sections, |s| {
        detect_folds(views.image(s, angle).expect("angle present"), params)
    });
    FoldMask::from_sections(views.nx, views.ny, sections.into_iter().collect::<Result<_>>()?)
}

const FM1: &str = "FM1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    dims: [usize; 2],
    n_sections: usize,
    sections: Vec<SectionEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SectionEntry {
    section: usize,
    file: String,
    count: usize,
}

/// Writes `<stem>.json` and one packed bitmap `<stem>_sNNN.mask` per section.
pub fn write_fold_mask(mask: &FoldMask, path: impl AsRef<Path>) -> Result<()> {
    let stem = stem(path.as_ref());
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let base = stem.file_name().and_then(|n| n.to_str()).unwrap_or("folds").to_owned();
    let mut sections = Vec::new();
    for (s, bits) in mask.sections.iter().enumerate() {
        let file = format!("{base}_s{s:03}.mask");
        write_bitmask(&stem.with_file_name(&file), bits)?;
        sections.push(SectionEntry {
            section: s,
            file,
            count: bits.iter().filter(|b| **b).count(),
        });
    }
    let manifest = Manifest {
        format: FM1.into(),
        dims: [mask.nx, mask.ny],
        n_sections: mask.n_sections(),
        sections,
    };
    fs::write(with_suffix(&stem, ".json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_fold_mask(path: impl AsRef<Path>) -> Result<FoldMask> {
    let stem = stem(path.as_ref());
    let json = with_suffix(&stem, ".json");
    let bad = |reason: String| Error::MalformedHeader {
        path: json.clone(),
        reason,
    };
    let m: Manifest = serde_json::from_str(&fs::read_to_string(&json)?).map_err(|e| bad(e.to_string()))?;
    if m.format != FM1 {
        return Err(bad(format!("format {:?}, expected {FM1:?}", m.format)));
    }
    if m.sections.len() != m.n_sections || m.sections.iter().enumerate().any(|(i, e)| e.section != i) {
        return Err(bad("sections must be listed once each, in order".into()));
    }
    let [nx, ny] = m.dims;
    let sections = m
        .sections
        .iter()
        .map(|e| read_bitmask(&stem.with_file_name(&e.file), nx * ny))
        .collect::<Result<Vec<_>>>()?;
    FoldMask::from_sections(nx, ny, sections)
}
