use std::path::Path;

use image::{GrayImage, Luma};
use tiltsr::volume::Volume3D;

use crate::failure::Failure;

/// Writes the x-z slice at the middle y as an 8-bit PNG, mapping `[lo, hi]`
/// linearly onto `[0, 255]` and clamping outside it. Depth runs downwards.
pub fn write_xz_slice(volume: &Volume3D, (lo, hi): (f64, f64), path: &Path) -> Result<(), Failure> {
    let (nx, ny, nz) = volume.dims();
    let y = ny / 2;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let img = GrayImage::from_fn(nx as u32, nz as u32, |x, z| {
        let v = (volume.get(x as usize, y, z as usize) - lo) / span;
        Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    img.save(path)
        .map_err(|e| Failure::data(format!("writing {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_maps_extremes_to_black_and_white() {
        let dir = tempfile::tempdir().unwrap();
        let v = Volume3D::from_fn((3, 2, 2), |x, _, z| x as f64 + 10.0 * z as f64).unwrap();
        let p = dir.path().join("s.png");
        write_xz_slice(&v, (0.0, 2.0), &p).unwrap();
        let img = image::open(&p).unwrap().to_luma8();
        assert_eq!(img.dimensions(), (3, 2));
        assert_eq!(img.get_pixel(0, 0)[0], 0);
        assert_eq!(img.get_pixel(1, 0)[0], 128);
        assert_eq!(img.get_pixel(2, 0)[0], 255);
        assert_eq!(img.get_pixel(0, 1)[0], 255);
    }
}
