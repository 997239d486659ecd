use crate::error::{Error, Result};
use crate::tomography::{TiltAngle, TiltGeometry, TiltViewSet};
use crate::volume::Volume3D;

/// Natural cubic spline through the normal view of every section, sampled at
/// each section's axial centre and clamped outside the first and last centre.
/// With two sections this is linear interpolation.
pub fn cubic_z_interpolate(views: &TiltViewSet) -> Result<Volume3D> {
    views.validate()?;
    let s = views.n_sections;
    if s < 2 {
        return Err(Error::config(format!(
            "cubic interpolation needs >= 2 sections, got {s}"
        )));
    }
    if views.angle_index(TiltAngle::Normal).is_none() {
        return Err(Error::config("cubic interpolation needs the normal view"));
    }
    let l = views.layers_per_section;
    let (nx, ny, nz) = (views.nx, views.ny, views.nz());
    let h = l as f64;
    let center = |i: usize| (l * i) as f64 + (l as f64 - 1.0) / 2.0;
    let images: Vec<&[f64]> = (0..s)
        .map(|i| {
            views
                .image(i, TiltAngle::Normal)
                .expect("normal present")
                .data
                .as_slice()
        })
        .collect();

    let mut out = vec![0.0; nx * ny * nz];
    let mut y = vec![0.0; s];
    let mut m = vec![0.0; s];
    let mut cp = vec![0.0; s];
    for p in 0..nx * ny {
        for i in 0..s {
            y[i] = images[i][p];
        }
        // Second derivatives with m[0] = m[s-1] = 0 (Thomas algorithm on the interior).
        m.iter_mut().for_each(|v| *v = 0.0);
        if s > 2 {
            let rhs = |i: usize| 6.0 * (y[i + 1] - 2.0 * y[i] + y[i - 1]) / (h * h);
            let mut dp = vec![0.0; s];
            for i in 1..s - 1 {
                let prev_c = if i > 1 { cp[i - 1] } else { 0.0 };
                let prev_d = if i > 1 { dp[i - 1] } else { 0.0 };
                let denom = 4.0 - prev_c;
                cp[i] = 1.0 / denom;
                dp[i] = (rhs(i) - prev_d) / denom;
            }
            for i in (1..s - 1).rev() {
                m[i] = dp[i] - if i + 1 < s - 1 { cp[i] * m[i + 1] } else { 0.0 };
            }
        }
        for z in 0..nz {
            let t = z as f64;
            let v = if t <= center(0) {
                y[0]
            } else if t >= center(s - 1) {
                y[s - 1]
            } else {
                let i = (((t - center(0)) / h).floor() as usize).min(s - 2);
                let a = (center(i + 1) - t) / h;
                let b = 1.0 - a;
                a * y[i] + b * y[i + 1] + ((a * a * a - a) * m[i] + (b * b * b - b) * m[i + 1]) * h * h / 6.0
            };
            out[p + nx * ny * z] = v;
        }
    }
    Volume3D::new((nx, ny, nz), out)
}

/// Unfiltered backprojection and the voxels no valid ray reached.
#[derive(Debug, Clone, PartialEq)]
pub struct Backprojection {
    pub volume: Volume3D,
    /// Voxels without ray coverage, filled from the section's normal view (or zero).
    pub uncovered: Vec<(usize, usize, usize)>,
}

/// Smears every valid view pixel uniformly along its ray; each voxel is the
/// mean of the contributions it receives.
pub fn backproject(views: &TiltViewSet, geometry: &TiltGeometry) -> Result<Backprojection> {
    views.validate()?;
    geometry.validate()?;
    let l = views.layers_per_section;
    if geometry.layers_per_section != l {
        return Err(Error::shape(
            format!("{} layers per section", geometry.layers_per_section),
            format!("{l} layers per section"),
        ));
    }
    let (nx, ny, nz) = (views.nx, views.ny, views.nz());
    let plane = nx * ny;
    let sections = crate::par::map_range(views.n_sections, |s| {
        let mut sum = vec![0.0; plane * l];
        let mut count = vec![0u32; plane * l];
        for &angle in &geometry.angles {
            let (Some(img), Some(mask)) = (views.image(s, angle), views.mask(s, angle)) else {
                continue;
            };
            for py in 0..ny {
                for px in 0..nx {
                    let p = px + nx * py;
                    if !mask[p] {
                        continue;
                    }
                    let v = img.data[p];
                    for layer in 0..l {
                        let (dx, dy) = angle.offset(layer, l);
                        let i = (px + dx) + nx * (py + dy) + plane * layer;
                        sum[i] += v;
                        count[i] += 1;
                    }
                }
            }
        }
        (sum, count)
    });
    let mut data = vec![0.0; nx * ny * nz];
    let mut uncovered = Vec::new();
    for (s, (sum, count)) in sections.into_iter().enumerate() {
        let normal = views.image(s, TiltAngle::Normal);
        for layer in 0..l {
            for p in 0..plane {
                let i = p + plane * layer;
                let z = s * l + layer;
                data[p + plane * z] = if count[i] > 0 {
                    sum[i] / count[i] as f64
                } else {
                    uncovered.push((p % nx, p / nx, z));
                    normal.map_or(0.0, |img| img.data[p])
                };
            }
        }
    }
    if !uncovered.is_empty() {
        log::warn!("backprojection: {} voxels had no ray coverage", uncovered.len());
    }
    Ok(Backprojection {
        volume: Volume3D::new((nx, ny, nz), data)?,
        uncovered,
    })
}
