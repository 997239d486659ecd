use super::*;
use crate::tomography::{simulate_views, NoiseSpec, TiltGeometry, TiltViewSet};
use proptest::prelude::*;

fn ramp(dims: (usize, usize, usize)) -> Volume3D {
    Volume3D::from_fn(dims, |x, y, z| (x + 2 * y) as f64 * 0.1 + (z as f64).sin()).unwrap()
}

#[test]
fn normalized_dot_basics() {
    let v = ramp((4, 5, 6));
    assert_eq!(normalized_dot(&v, &v).unwrap(), 1.0);
    let scaled = Volume3D::from_fn((4, 5, 6), |x, y, z| 3.5 * v.get(x, y, z)).unwrap();
    assert!((normalized_dot(&v, &scaled).unwrap() - 1.0).abs() < 1e-12);
    let e1 = Volume3D::from_fn((3, 3, 3), |x, _, _| (x == 0) as u8 as f64).unwrap();
    let e2 = Volume3D::from_fn((3, 3, 3), |x, _, _| (x == 2) as u8 as f64).unwrap();
    assert_eq!(normalized_dot(&e1, &e2).unwrap(), 0.0);
}

#[test]
fn normalized_dot_errors() {
    let z = Volume3D::zeros((3, 3, 3)).unwrap();
    let v = ramp((3, 3, 3));
    assert!(matches!(normalized_dot(&z, &v), Err(Error::ZeroNorm(_))));
    assert!(matches!(
        normalized_dot(&v, &ramp((3, 3, 4))),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn centered_variant_ignores_offsets() {
    let v = ramp((4, 4, 4));
    let shifted = Volume3D::from_fn((4, 4, 4), |x, y, z| v.get(x, y, z) + 10.0).unwrap();
    assert!((normalized_dot_centered(&v, &shifted).unwrap() - 1.0).abs() < 1e-12);
    assert!(normalized_dot(&v, &shifted).unwrap() < 1.0);
}

#[test]
fn gradient_metrics_of_identical_and_offset_volumes() {
    let v = ramp((5, 5, 5));
    assert_eq!(gradient_metrics(&v, &v).unwrap(), (1.0, 1.0));
    let shifted = Volume3D::from_fn((5, 5, 5), |x, y, z| v.get(x, y, z) - 4.0).unwrap();
    let (xy, z) = gradient_metrics(&v, &shifted).unwrap();
    assert!((xy - 1.0).abs() < 1e-12 && (z - 1.0).abs() < 1e-12);
}

#[test]
fn gradient_z_matches_one_dimensional_oracle() {
    // f(z) = z^2 on 12 layers; g = 5-wide box average of f, truncated at the ends.
    let nz = 12usize;
    let f = |z: usize| (z * z) as f64;
    let g = |z: usize| {
        let lo = z.saturating_sub(2);
        let hi = (z + 2).min(nz - 1);
        (lo..=hi).map(f).sum::<f64>() / (hi - lo + 1) as f64
    };
    let truth = Volume3D::from_fn((4, 4, nz), |_, _, z| f(z)).unwrap();
    let recon = Volume3D::from_fn((4, 4, nz), |_, _, z| g(z)).unwrap();
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for z in 1..nz - 1 {
        let a = (f(z + 1) - f(z - 1)) / 2.0;
        let b = (g(z + 1) - g(z - 1)) / 2.0;
        ab += a * b;
        aa += a * a;
        bb += b * b;
    }
    let oracle = ab / (aa * bb).sqrt();
    let (xy, gz) = gradient_metrics(&truth, &recon).unwrap();
    assert!((gz - oracle).abs() < 1e-12, "{gz} vs {oracle}");
    assert_eq!(xy, 1.0, "both lateral gradient fields vanish");
}

#[test]
fn gradient_metrics_need_three_voxels_per_axis() {
    let v = ramp((3, 2, 3));
    assert!(matches!(
        gradient_metrics(&v, &v),
        Err(Error::DimensionTooSmall { axis: 'y', .. })
    ));
}

#[test]
fn report_serializes_flat() {
    let v = ramp((4, 4, 4));
    let meta = ReportMeta {
        method: "sparse".into(),
        snr_db: Some(10.0),
        angles: vec!["normal".into()],
        lambda: Some(0.1),
    };
    let r = evaluate(&v, &v, meta).unwrap();
    let json: serde_json::Value = serde_json::to_value(&r).unwrap();
    assert_eq!(json["volume_ndp"], 1.0);
    assert_eq!(json["method"], "sparse");
    let back: MetricReport = serde_json::from_value(json).unwrap();
    assert_eq!(back, r);
}

fn views_of(v: &Volume3D, geometry: &TiltGeometry) -> TiltViewSet {
    simulate_views(v, geometry, NoiseSpec::noiseless()).unwrap()
}

#[test]
fn cubic_of_identical_sections_is_constant_in_z() {
    let v = Volume3D::from_fn((6, 5, 20), |x, y, _| (x * y) as f64).unwrap();
    let views = views_of(
        &v,
        &TiltGeometry::new(5, vec![crate::tomography::TiltAngle::Normal], 5, 15).unwrap(),
    );
    let out = cubic_z_interpolate(&views).unwrap();
    assert!(out.data().iter().zip(v.data()).all(|(a, b)| (a - b).abs() < 1e-12));
}

#[test]
fn cubic_reproduces_linear_ramps_and_clamps() {
    let l = 5;
    let v = Volume3D::from_fn((3, 3, 25), |x, _, z| z as f64 + x as f64).unwrap();
    let views = views_of(&v, &TiltGeometry::standard());
    let out = cubic_z_interpolate(&views).unwrap();
    for z in 0..25 {
        let expect = (z as f64).clamp(2.0, 22.0) + 1.0;
        assert!((out.get(1, 0, z) - expect).abs() < 1e-10, "z={z}: {}", out.get(1, 0, z));
    }
    // Two sections: straight line between the centres.
    let v2 = Volume3D::from_fn((2, 2, 2 * l), |_, _, z| if z < l { 1.0 } else { 3.0 }).unwrap();
    let out2 = cubic_z_interpolate(&views_of(&v2, &TiltGeometry::standard())).unwrap();
    for z in 2..=7 {
        assert!((out2.get(0, 0, z) - (1.0 + 2.0 * (z as f64 - 2.0) / 5.0)).abs() < 1e-12);
    }
}

#[test]
fn cubic_needs_two_sections() {
    let v = ramp((3, 3, 5));
    assert!(cubic_z_interpolate(&views_of(&v, &TiltGeometry::standard()))
        .unwrap_err()
        .is_config());
}

#[test]
fn backprojection_of_constant_is_constant() {
    let v = Volume3D::filled((12, 11, 10), 0.7).unwrap();
    let g = TiltGeometry::standard();
    let bp = backproject(&views_of(&v, &g), &g).unwrap();
    assert!(bp.uncovered.is_empty());
    assert!(bp.volume.data().iter().all(|x| (x - 0.7).abs() < 1e-12));
}

#[test]
fn normal_only_backprojection_repeats_the_view() {
    let v = ramp((6, 6, 10));
    let g = TiltGeometry::standard().normal_only();
    let views = views_of(&v, &g);
    let bp = backproject(&views, &g).unwrap();
    for s in 0..2 {
        let img = views.image(s, crate::tomography::TiltAngle::Normal).unwrap();
        for layer in 0..5 {
            assert_eq!(bp.volume.slice_z(s * 5 + layer).data, img.data);
        }
    }
}

#[test]
fn occluded_pixels_leave_uncovered_voxels_filled_from_normal() {
    let v = Volume3D::filled((6, 6, 5), 2.0).unwrap();
    let g = TiltGeometry::standard().normal_only();
    let mut views = views_of(&v, &g);
    views.masks[0][7] = false;
    let bp = backproject(&views, &g).unwrap();
    assert_eq!(bp.uncovered.len(), 5);
    assert_eq!(bp.volume.get(1, 1, 3), 2.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn metrics_are_symmetric_and_bounded(seed in 0u64..10_000) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = Volume3D::from_fn((4, 5, 4), |_, _, _| rng.random_range(-1.0..1.0)).unwrap();
        let b = Volume3D::from_fn((4, 5, 4), |_, _, _| rng.random_range(-1.0..1.0)).unwrap();
        let ab = normalized_dot(&a, &b).unwrap();
        prop_assert_eq!(ab, normalized_dot(&b, &a).unwrap());
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert_eq!(gradient_metrics(&a, &b).unwrap(), gradient_metrics(&b, &a).unwrap());
        let c: f64 = rng.random_range(0.1..10.0);
        let ca = Volume3D::from_fn((4, 5, 4), |x, y, z| c * a.get(x, y, z)).unwrap();
        prop_assert!((normalized_dot(&ca, &b).unwrap() - ab).abs() <= 1e-12);
    }
}
