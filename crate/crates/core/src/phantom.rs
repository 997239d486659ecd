//! Synthetic membrane volumes used as ground truth.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dims, Volume3D};

/// Oblique membranes make an angle above this with the depth axis.
pub const OBLIQUE_DEG: f64 = 30.0;

/// Fraction of membranes forced oblique in mixed mode.
pub const MIXED_OBLIQUE_FRACTION: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrientationMode {
    RandomPlanes,
    AxisAligned,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub seed: u64,
    pub n_membranes: usize,
    pub thickness_voxels: f64,
    pub orientation_mode: OrientationMode,
    pub membrane_value: f64,
    pub background_value: f64,
    pub smoothing_sigma: f64,
    /// Upper bound on the sinusoidal bending of each sheet, in voxels.
    pub curvature_amplitude: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: (60, 60, 60),
            seed: 0,
            n_membranes: 8,
            thickness_voxels: 2.0,
            orientation_mode: OrientationMode::Mixed,
            membrane_value: 1.0,
            background_value: 0.0,
            smoothing_sigma: 0.8,
            curvature_amplitude: 3.0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let (nx, ny, nz) = self.dims;
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::config(format!("phantom dims must be >= 1, got {:?}", self.dims)));
        }
        let finite = [
            self.thickness_voxels,
            self.membrane_value,
            self.background_value,
            self.smoothing_sigma,
            self.curvature_amplitude,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("phantom parameters must be finite"));
        }
        if !(0.0 <= self.background_value && self.background_value < self.membrane_value) {
            return Err(Error::config(format!(
                "need 0 <= background ({}) < membrane ({})",
                self.background_value, self.membrane_value
            )));
        }
        if self.thickness_voxels <= 0.0 || self.smoothing_sigma < 0.0 {
            return Err(Error::config("thickness must be > 0 and smoothing_sigma >= 0"));
        }
        if !(0.0..=3.0).contains(&self.curvature_amplitude) {
            return Err(Error::config("curvature_amplitude must lie in [0, 3]"));
        }
        Ok(())
    }
}

/// A sheet `{c : (c - point) . normal = amplitude * sin(2 pi (c . wave) + phase)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Membrane {
    pub point: [f64; 3],
    pub normal: [f64; 3],
    pub amplitude: f64,
    /// In-plane wave vector in cycles per voxel.
    pub wave: [f64; 3],
    pub phase: f64,
}

impl Membrane {
    pub fn plane(point: [f64; 3], normal: [f64; 3]) -> Self {
        Self {
            point,
            normal: unit(normal),
            amplitude: 0.0,
            wave: [0.0; 3],
            phase: 0.0,
        }
    }

    pub fn signed_distance(&self, c: [f64; 3]) -> f64 {
        let d = dot(sub(c, self.point), self.normal);
        if self.amplitude == 0.0 {
            d
        } else {
            d - self.amplitude * (2.0 * PI * dot(c, self.wave) + self.phase).sin()
        }
    }

    /// Angle between the sheet and the depth (z) axis, in degrees.
    pub fn tilt_from_vertical_deg(&self) -> f64 {
        self.normal[2].abs().clamp(0.0, 1.0).asin().to_degrees()
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn unit(a: [f64; 3]) -> [f64; 3] {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
        if dot(v, v) > 1e-12 {
            return unit(v);
        }
    }
}

/// Normal whose sheet is tilted from the depth axis by an angle in `[lo, hi]` degrees.
fn normal_with_tilt(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    let tilt = rng.random_range(lo..hi).to_radians();
    let az = rng.random_range(0.0..2.0 * PI);
    let (s, c) = (tilt.sin(), tilt.cos());
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    [c * az.cos(), c * az.sin(), sign * s]
}

/// The membranes `generate_phantom` rasterizes for `spec`.
pub fn draw_membranes(spec: &PhantomSpec) -> Result<Vec<Membrane>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (nx, ny, nz) = spec.dims;
    let n_oblique = (spec.n_membranes as f64 * MIXED_OBLIQUE_FRACTION).ceil() as usize;
    let mut out = Vec::with_capacity(spec.n_membranes);
    for i in 0..spec.n_membranes {
        let point = [
            rng.random_range(0.0..nx as f64) - 0.5,
            rng.random_range(0.0..ny as f64) - 0.5,
            rng.random_range(0.0..nz as f64) - 0.5,
        ];
        let normal = match spec.orientation_mode {
            OrientationMode::RandomPlanes => random_unit(&mut rng),
            OrientationMode::AxisAligned => {
                let mut n = [0.0; 3];
                n[rng.random_range(0..3)] = 1.0;
                n
            }
            OrientationMode::Mixed if i < n_oblique => normal_with_tilt(&mut rng, OBLIQUE_DEG + 5.0, 75.0),
            OrientationMode::Mixed => normal_with_tilt(&mut rng, 0.0, OBLIQUE_DEG),
        };
        let mut m = Membrane::plane(point, normal);
        if spec.orientation_mode != OrientationMode::AxisAligned && spec.curvature_amplitude > 0.0 {
            // Low-frequency bending along a direction inside the sheet.
            let mut t = cross(m.normal, random_unit(&mut rng));
            if dot(t, t) < 1e-12 {
                t = cross(m.normal, [1.0, 0.0, 0.0]);
            }
            let period = rng.random_range(20.0..40.0);
            let t = unit(t);
            m.wave = [t[0] / period, t[1] / period, t[2] / period];
            m.amplitude = rng.random_range(0.0..spec.curvature_amplitude);
            m.phase = rng.random_range(0.0..2.0 * PI);
        }
        out.push(m);
    }
    Ok(out)
}

/// Rasterizes `membranes` as slabs `-t/2 <= d < t/2`, blurs and clamps.
pub fn rasterize(spec: &PhantomSpec, membranes: &[Membrane]) -> Result<Volume3D> {
    spec.validate()?;
    let (lo, hi) = (spec.background_value, spec.membrane_value);
    let half = spec.thickness_voxels / 2.0;
    let vol = Volume3D::from_fn(spec.dims, |x, y, z| {
        let c = [x as f64, y as f64, z as f64];
        let hit = membranes.iter().any(|m| {
            let d = m.signed_distance(c);
            -half <= d && d < half
        });
        if hit {
            hi
        } else {
            lo
        }
    })?;
    if vol.data().iter().all(|&v| v == lo) {
        return Ok(vol);
    }
    let mut vol = gaussian_blur(&vol, spec.smoothing_sigma);
    vol.data_mut().iter_mut().for_each(|v| *v = v.clamp(lo, hi));
    Ok(vol)
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Volume3D> {
    let membranes = draw_membranes(spec)?;
    rasterize(spec, &membranes)
}

/// Separable Gaussian blur truncated at `ceil(3 sigma)`, edge samples replicated.
pub fn gaussian_blur(volume: &Volume3D, sigma: f64) -> Volume3D {
    if sigma <= 0.0 {
        return volume.clone();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= total);

    let (nx, ny, nz) = volume.dims();
    let mut cur = volume.data().to_vec();
    let mut next = vec![0.0; cur.len()];
    let strides = [1, nx, nx * ny];
    let lens = [nx, ny, nz];
    for axis in 0..3 {
        let (stride, len) = (strides[axis], lens[axis]);
        for (idx, out) in next.iter_mut().enumerate() {
            let pos = (idx / stride) % len;
            let base = idx - pos * stride;
            let mut acc = 0.0;
            for (t, w) in kernel.iter().enumerate() {
                let p = (pos as isize + t as isize - r).clamp(0, len as isize - 1) as usize;
                acc += w * cur[base + p * stride];
            }
            *out = acc;
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Volume3D::with_voxel_size(volume.dims(), volume.voxel_size(), cur).expect("blur preserves shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small(seed: u64) -> PhantomSpec {
        PhantomSpec {
            dims: (20, 18, 16),
            seed,
            n_membranes: 5,
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn no_membranes_gives_constant_background() {
        let spec = PhantomSpec {
            n_membranes: 0,
            background_value: 0.25,
            ..small(1)
        };
        let v = generate_phantom(&spec).unwrap();
        assert!(v.data().iter().all(|&x| x == 0.25));
    }

    #[test]
    fn same_seed_is_bit_identical_and_seeds_differ() {
        let a = generate_phantom(&small(3)).unwrap();
        let b = generate_phantom(&small(3)).unwrap();
        let c = generate_phantom(&small(4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn z_normal_membrane_occupies_its_layer_band() {
        let spec = PhantomSpec {
            orientation_mode: OrientationMode::AxisAligned,
            ..small(0)
        };
        let m = Membrane::plane([0.0, 0.0, 8.0], [0.0, 0.0, 1.0]);
        let v = rasterize(&spec, &[m]).unwrap();
        let blur = (3.0 * spec.smoothing_sigma).ceil() as usize;
        let (nx, ny, nz) = spec.dims;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let val = v.get(x, y, z);
                    if z == 7 || z == 8 {
                        assert!(val > 0.5, "z={z}: {val}");
                    } else if z + blur < 7 || z > 8 + blur {
                        assert!(val.abs() <= 1e-9, "z={z}: {val}");
                    }
                }
            }
        }
    }

    #[test]
    fn unblurred_slab_has_exact_thickness() {
        let spec = PhantomSpec {
            smoothing_sigma: 0.0,
            thickness_voxels: 3.0,
            ..small(0)
        };
        let v = rasterize(&spec, &[Membrane::plane([5.0, 0.0, 0.0], [1.0, 0.0, 0.0])]).unwrap();
        let lit: Vec<usize> = (0..20).filter(|&x| v.get(x, 0, 0) == 1.0).collect();
        assert_eq!(lit, vec![4, 5, 6]);
    }

    #[test]
    fn mixed_mode_has_enough_oblique_sheets() {
        for seed in 0..5 {
            let ms = draw_membranes(&PhantomSpec {
                seed,
                ..PhantomSpec::default()
            })
            .unwrap();
            let oblique = ms.iter().filter(|m| m.tilt_from_vertical_deg() > OBLIQUE_DEG).count();
            assert!(oblique as f64 >= 0.3 * ms.len() as f64, "{oblique} of {}", ms.len());
            assert!(ms.iter().all(|m| m.amplitude <= 3.0));
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad = [
            PhantomSpec {
                dims: (0, 4, 4),
                ..small(0)
            },
            PhantomSpec {
                background_value: 1.0,
                ..small(0)
            },
            PhantomSpec {
                background_value: -0.1,
                ..small(0)
            },
            PhantomSpec {
                curvature_amplitude: 4.0,
                ..small(0)
            },
            PhantomSpec {
                smoothing_sigma: f64::NAN,
                ..small(0)
            },
        ];
        for spec in bad {
            assert!(generate_phantom(&spec).unwrap_err().is_config(), "{spec:?}");
        }
    }

    #[test]
    fn blur_preserves_constants_and_mass_in_the_interior() {
        let v = Volume3D::filled((7, 6, 5), 2.5).unwrap();
        let b = gaussian_blur(&v, 1.3);
        assert!(b.data().iter().all(|x| (x - 2.5).abs() < 1e-12));
        let mut spike = Volume3D::zeros((15, 15, 15)).unwrap();
        spike.set(7, 7, 7, 1.0);
        let total: f64 = gaussian_blur(&spike, 0.8).data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn values_stay_in_range(seed in 0u64..1000, mode in 0usize..3, bg in 0.0f64..0.5) {
            let orientation_mode = [OrientationMode::RandomPlanes, OrientationMode::AxisAligned, OrientationMode::Mixed][mode];
            let spec = PhantomSpec { dims: (12, 12, 10), seed, orientation_mode, background_value: bg, ..PhantomSpec::default() };
            let v = generate_phantom(&spec).unwrap();
            prop_assert!(v.data().iter().all(|&x| (bg..=1.0).contains(&x)));
        }
    }
}
