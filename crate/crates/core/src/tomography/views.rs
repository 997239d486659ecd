use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ProjectionModel, TiltAngle, TiltGeometry};
use crate::error::{Error, Result};
use crate::volume::{mean_std, Image2D, Volume3D};

/// Description of the noise model recorded with every noisy view set.
pub const SNR_DEFINITION: &str = "amplitude SNR in dB: sigma = std(valid pixels of all views) * 10^(-snr_db/20)";

/// Optional additive Gaussian noise. `snr_db: None` (or +inf) is noiseless.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn snr(snr_db: f64, seed: u64) -> Self {
        Self {
            snr_db: Some(snr_db),
            seed,
        }
    }
}

/// Per-section, per-angle measurement images with validity masks.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltViewSet {
    pub nx: usize,
    pub ny: usize,
    pub n_sections: usize,
    pub layers_per_section: usize,
    pub angles: Vec<TiltAngle>,
    /// `n_sections * angles.len()` images, section-major.
    pub images: Vec<Image2D>,
    /// Same layout as `images`; `true` marks a usable pixel.
    pub masks: Vec<Vec<bool>>,
    pub snr_db: Option<f64>,
    pub noise_sigma: f64,
    pub noise_seed: Option<u64>,
}

impl TiltViewSet {
    #[inline]
    fn slot(&self, section: usize, angle_idx: usize) -> usize {
        section * self.angles.len() + angle_idx
    }

    pub fn angle_index(&self, angle: TiltAngle) -> Option<usize> {
        self.angles.iter().position(|a| *a == angle)
    }

    pub fn image(&self, section: usize, angle: TiltAngle) -> Option<&Image2D> {
        let a = self.angle_index(angle)?;
        (section < self.n_sections).then(|| &self.images[self.slot(section, a)])
    }

    pub fn mask(&self, section: usize, angle: TiltAngle) -> Option<&[bool]> {
        let a = self.angle_index(angle)?;
        (section < self.n_sections).then(|| self.masks[self.slot(section, a)].as_slice())
    }

    pub fn nz(&self) -> usize {
        self.n_sections * self.layers_per_section
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.n_sections * self.angles.len();
        if self.images.len() != expected || self.masks.len() != expected {
            return Err(Error::shape(
                format!("{expected} images and masks"),
                format!("{} images, {} masks", self.images.len(), self.masks.len()),
            ));
        }
        for (img, mask) in self.images.iter().zip(&self.masks) {
            if img.nx != self.nx || img.ny != self.ny || img.data.len() != self.nx * self.ny {
                return Err(Error::shape(
                    format!("{} x {}", self.nx, self.ny),
                    format!("{} x {}", img.nx, img.ny),
                ));
            }
            if mask.len() != self.nx * self.ny {
                return Err(Error::shape(self.nx * self.ny, mask.len()));
            }
        }
        if self.layers_per_section == 0 || self.n_sections == 0 {
            return Err(Error::config("empty view set"));
        }
        Ok(())
    }

    /// Keeps only `angles` (in the given order).
    pub fn restrict_angles(&self, angles: &[TiltAngle]) -> Result<TiltViewSet> {
        let idx: Vec<usize> = angles
            .iter()
            .map(|a| {
                self.angle_index(*a)
                    .ok_or_else(|| Error::config(format!("views lack angle {a}")))
            })
            .collect::<Result<_>>()?;
        let mut images = Vec::new();
        let mut masks = Vec::new();
        for s in 0..self.n_sections {
            for &a in &idx {
                images.push(self.images[self.slot(s, a)].clone());
                masks.push(self.masks[self.slot(s, a)].clone());
            }
        }
        Ok(TiltViewSet {
            angles: angles.to_vec(),
            images,
            masks,
            ..self.clone()
        })
    }

    /// Invalidates every ray of `section` that crosses an occluded lateral position.
    pub fn occlude(&mut self, section: usize, occluded: &[bool]) -> Result<()> {
        if section >= self.n_sections {
            return Err(Error::config(format!("section {section} out of range")));
        }
        if occluded.len() != self.nx * self.ny {
            return Err(Error::shape(self.nx * self.ny, occluded.len()));
        }
        let l = self.layers_per_section;
        for ai in 0..self.angles.len() {
            let angle = self.angles[ai];
            let slot = self.slot(section, ai);
            for y in 0..self.ny {
                for x in 0..self.nx {
                    let hit = (0..l).any(|layer| {
                        let (dx, dy) = angle.offset(layer, l);
                        let (qx, qy) = (x + dx, y + dy);
                        qx < self.nx && qy < self.ny && occluded[qx + self.nx * qy]
                    });
                    if hit {
                        self.masks[slot][x + self.nx * y] = false;
                    }
                }
            }
        }
        Ok(())
    }

    /// Replaces the pixel values of `section` under `occluded` with `value` in every view,
    /// leaving the masks untouched.
    pub fn fill_occluded(&mut self, section: usize, occluded: &[bool], value: f64) -> Result<()> {
        let mut probe = self.clone();
        probe
            .masks
            .iter_mut()
            .for_each(|m| m.iter_mut().for_each(|v| *v = true));
        probe.occlude(section, occluded)?;
        for ai in 0..self.angles.len() {
            let slot = self.slot(section, ai);
            for (p, ok) in probe.masks[slot].iter().enumerate() {
                if !ok {
                    self.images[slot].data[p] = value;
                }
            }
        }
        Ok(())
    }

    /// Values of all valid pixels, in storage order.
    pub(crate) fn valid_values(&self) -> Vec<f64> {
        self.images
            .iter()
            .zip(&self.masks)
            .flat_map(|(img, m)| img.data.iter().zip(m).filter(|(_, ok)| **ok).map(|(v, _)| *v))
            .collect()
    }
}

/// Projects every `L`-layer section of `volume` along each angle of `geometry`.
///
/// Pixels whose ray leaves the lateral bounds are set to 0 and marked invalid.
pub fn simulate_views(volume: &Volume3D, geometry: &TiltGeometry, noise: NoiseSpec) -> Result<TiltViewSet> {
    geometry.validate()?;
    let (nx, ny, nz) = volume.dims();
    let l = geometry.layers_per_section;
    if nz % l != 0 {
        return Err(Error::config(format!(
            "volume depth {nz} is not a multiple of {l} layers per section"
        )));
    }
    let n_sections = nz / l;
    let angles = geometry.angles.clone();
    let slots: Vec<(usize, TiltAngle)> = (0..n_sections)
        .flat_map(|s| angles.iter().map(move |&a| (s, a)))
        .collect();
    let w = 1.0 / l as f64;
    let rendered = crate::par::map_slice(&slots, |&(s, angle)| {
        let mut img = Image2D::filled(nx, ny, 0.0);
        let mut mask = vec![false; nx * ny];
        let (wx, wy) = angle.footprint(l);
        for y in 0..ny {
            for x in 0..nx {
                if x + wx > nx || y + wy > ny {
                    continue;
                }
                let sum: f64 = (0..l)
                    .map(|layer| {
                        let (dx, dy) = angle.offset(layer, l);
                        volume.get(x + dx, y + dy, s * l + layer)
                    })
                    .sum();
                img.set(x, y, sum * w);
                mask[x + nx * y] = true;
            }
        }
        (img, mask)
    });
    let (images, masks) = rendered.into_iter().unzip();
    let views = TiltViewSet {
        nx,
        ny,
        n_sections,
        layers_per_section: l,
        angles,
        images,
        masks,
        snr_db: None,
        noise_sigma: 0.0,
        noise_seed: None,
    };
    match noise.snr_db {
        Some(snr) => add_noise(&views, snr, noise.seed),
        None => Ok(views),
    }
}

/// Adds i.i.d. Gaussian noise at the given amplitude SNR to every valid pixel.
pub fn add_noise(views: &TiltViewSet, snr_db: f64, seed: u64) -> Result<TiltViewSet> {
    if snr_db.is_nan() {
        return Err(Error::config("snr_db is NaN"));
    }
    if snr_db == f64::INFINITY {
        return Ok(views.clone());
    }
    let (_, signal_std) = mean_std(&views.valid_values());
    if signal_std == 0.0 {
        return Err(Error::DegenerateData(
            "views have zero variance; SNR is undefined".into(),
        ));
    }
    let sigma = signal_std * 10f64.powf(-snr_db / 20.0);
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = views.clone();
    for (img, mask) in out.images.iter_mut().zip(&out.masks) {
        for (v, ok) in img.data.iter_mut().zip(mask) {
            if *ok {
                *v += normal.sample(&mut rng);
            }
        }
    }
    out.snr_db = Some(snr_db);
    out.noise_sigma = sigma;
    out.noise_seed = Some(seed);
    Ok(out)
}

/// Reads the measurements of the patch at lateral `(x, y)` starting at `section`,
/// in the row order of `model`, together with a per-row validity flag.
pub fn gather_patch_measurements(
    views: &TiltViewSet,
    model: &ProjectionModel,
    origin: (usize, usize, usize),
) -> Result<(Vec<f64>, Vec<bool>)> {
    let mut values = vec![0.0; model.rows()];
    let mut valid = vec![false; model.rows()];
    gather_into(views, model, origin, &mut values, &mut valid)?;
    Ok((values, valid))
}

pub(crate) fn gather_into(
    views: &TiltViewSet,
    model: &ProjectionModel,
    (x0, y0, s0): (usize, usize, usize),
    values: &mut [f64],
    valid: &mut [bool],
) -> Result<()> {
    let g = model.geometry();
    if views.layers_per_section != g.layers_per_section {
        return Err(Error::shape(
            format!("{} layers per section", g.layers_per_section),
            format!("{} layers per section", views.layers_per_section),
        ));
    }
    if x0 + g.h > views.nx || y0 + g.h > views.ny || s0 + g.sections_per_patch() > views.n_sections {
        return Err(Error::OutOfRange { origin: (x0, y0, s0) });
    }
    let mut angle_slot = [usize::MAX; 5];
    for &a in &g.angles {
        let i = views
            .angle_index(a)
            .ok_or_else(|| Error::config(format!("views lack angle {a} required by the projection model")))?;
        angle_slot[a as usize] = i;
    }
    for (r, info) in model.row_info().iter().enumerate() {
        let slot = views.slot(s0 + info.section, angle_slot[info.angle as usize]);
        let p = (x0 + info.px) + views.nx * (y0 + info.py);
        values[r] = views.images[slot].data[p];
        valid[r] = views.masks[slot][p];
    }
    Ok(())
}
