use std::sync::OnceLock;

use super::*;
use crate::dictionary::{learn_dictionary, Init, LearnConfig};
use crate::evaluation::normalized_dot;
use crate::phantom::{generate_phantom, PhantomSpec};
use crate::tomography::{simulate_views, NoiseSpec, TiltGeometry};
use crate::volume::extract_patches;

const L: usize = 3;

fn geometry() -> TiltGeometry {
    TiltGeometry::new(L, TiltAngle::ALL.to_vec(), 3, 6).unwrap()
}

fn phantom(seed: u64) -> Volume3D {
    generate_phantom(&PhantomSpec {
        dims: (14, 14, 12),
        seed,
        n_membranes: 6,
        ..PhantomSpec::default()
    })
    .unwrap()
}

fn dictionary() -> &'static Dictionary {
    static D: OnceLock<Dictionary> = OnceLock::new();
    D.get_or_init(|| {
        let batch = extract_patches(&phantom(100), &PatchSpec::new(3, 6, [1, 1, 2]).unwrap()).unwrap();
        let cfg = LearnConfig {
            k: 108,
            lambda: 0.05,
            n_epochs: 4,
            batch_size: usize::MAX,
            seed: 1,
            init: Init::RandomPatches,
            plateau_tol: 1e-5,
            coding_tol: 1e-6,
            coding_max_iter: 1000,
            algorithm: crate::solver::Algorithm::ActiveSet,
        };
        learn_dictionary(&batch, &cfg).unwrap()
    })
}

fn model() -> ProjectionModel {
    build_projection_model(&geometry()).unwrap()
}

fn fast() -> ReconConfig {
    ReconConfig {
        lambda_recover: 0.01,
        smooth_enabled: false,
        ..ReconConfig::default()
    }
}

fn views(v: &Volume3D) -> TiltViewSet {
    simulate_views(v, &geometry(), NoiseSpec::noiseless()).unwrap()
}

#[test]
fn zero_views_give_zero_volume() {
    let v = Volume3D::zeros((8, 8, 12)).unwrap();
    let cfg = ReconConfig {
        smooth_stride: [2, 2, 3],
        ..ReconConfig::default()
    };
    let r = reconstruct_volume(&views(&v), dictionary(), &model(), &cfg, None).unwrap();
    assert!(r.volume.data().iter().all(|x| *x == 0.0));
    assert_eq!(r.volume.dims(), (8, 8, 12));
    assert_eq!(r.report.skipped.len(), 0);
}

#[test]
fn sparse_tiled_volume_is_recovered() {
    // Every 3x3x6 tile is a combination of at most 3 atoms.
    let d = dictionary();
    let spec = PatchSpec::new(3, 6, [3, 3, 6]).unwrap();
    let dims = (9, 9, 12);
    let origins = crate::volume::patch_origins(dims, &spec).unwrap();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
    let mut acc = OverlapAccumulator::new(dims, spec);
    for o in &origins {
        use rand::Rng;
        let mut patch = vec![0.0; d.n()];
        for _ in 0..3 {
            let j = rng.random_range(0..d.k());
            let a: f64 = rng.random_range(0.5..1.5);
            for (p, v) in patch.iter_mut().zip(d.atom(j).iter()) {
                *p += a * v;
            }
        }
        acc.add(*o, &patch).unwrap();
    }
    let truth = acc.finish().unwrap();
    let cfg = ReconConfig {
        lambda_recover: 1e-4,
        recover_stride: Some([3, 3, 6]),
        smooth_enabled: false,
        tol: 1e-9,
        max_iter: 20_000,
        ..ReconConfig::default()
    };
    let r = reconstruct_volume(&views(&truth), d, &model(), &cfg, None).unwrap();
    let diff: f64 = r
        .volume
        .data()
        .iter()
        .zip(truth.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    let norm: f64 = truth.data().iter().map(|b| b * b).sum();
    let rel = (diff / norm).sqrt();
    assert!(rel <= 0.05, "relative error {rel}");
}

#[test]
fn more_angles_score_at_least_as_well() {
    let truth = phantom(7);
    let v = views(&truth);
    let d = dictionary();
    let score = |angles: Vec<TiltAngle>| {
        let g = TiltGeometry::new(L, angles.clone(), 3, 6).unwrap();
        let m = build_projection_model(&g).unwrap();
        let r = reconstruct_volume(&v.restrict_angles(&angles).unwrap(), d, &m, &fast(), None).unwrap();
        normalized_dot(&truth, &r.volume).unwrap()
    };
    let one = score(vec![TiltAngle::Normal]);
    let three = score(vec![TiltAngle::Normal, TiltAngle::PlusX, TiltAngle::MinusX]);
    let five = score(TiltAngle::ALL.to_vec());
    assert!(one <= three + 1e-6 && three <= five + 1e-6, "{one} {three} {five}");
}

#[test]
fn single_view_flag_matches_normal_only_model() {
    let truth = phantom(8);
    let v = views(&truth);
    let d = dictionary();
    let cfg = ReconConfig {
        single_view: true,
        ..fast()
    };
    let a = reconstruct_volume(&v, d, &model(), &cfg, None).unwrap();
    let normal = build_projection_model(&geometry().normal_only()).unwrap();
    let b = reconstruct_volume(&v, d, &normal, &fast(), None).unwrap();
    assert_eq!(a.volume, b.volume);
}

#[test]
fn empty_fold_mask_is_bit_identical() {
    let v = views(&phantom(9));
    let a = reconstruct_volume(&v, dictionary(), &model(), &fast(), None).unwrap();
    let b = inpaint(&v, dictionary(), &model(), &fast(), &FoldMask::empty(14, 14, 4)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn folds_only_affect_patches_that_see_them() {
    let v = views(&phantom(10));
    let mut folds = FoldMask::empty(14, 14, 4);
    for y in 0..14 {
        folds.section_mut(2)[y * 14] = true;
        folds.section_mut(2)[1 + y * 14] = true;
    }
    let a = reconstruct_volume(&v, dictionary(), &model(), &fast(), None).unwrap();
    let b = inpaint(&v, dictionary(), &model(), &fast(), &folds).unwrap();
    assert!(b.report.partial_patches > 0);
    let mut changed = false;
    for z in 0..12 {
        for y in 0..14 {
            for x in 0..14 {
                let (p, q) = (a.volume.get(x, y, z), b.volume.get(x, y, z));
                if x >= 4 {
                    assert_eq!(p, q, "({x},{y},{z})");
                }
                changed |= p != q;
            }
        }
    }
    assert!(changed);
}

#[test]
fn fully_folded_stack_skips_every_patch() {
    let v = views(&phantom(11));
    let mut folds = FoldMask::empty(14, 14, 4);
    for s in 0..4 {
        folds.section_mut(s).iter_mut().for_each(|b| *b = true);
    }
    let r = inpaint(&v, dictionary(), &model(), &fast(), &folds).unwrap();
    assert_eq!(r.report.patches_recovered, 0);
    assert_eq!(r.report.uncovered_voxels, 14 * 14 * 12);
    assert!(r.volume.data().iter().all(|x| *x == 0.0));
}

#[test]
fn threads_do_not_change_the_result() {
    let v = views(&phantom(12));
    let cfg = ReconConfig {
        smooth_stride: [2, 2, 2],
        ..fast()
    };
    let one = crate::par::with_threads(1, || reconstruct_volume(&v, dictionary(), &model(), &cfg, None)).unwrap();
    let four = crate::par::with_threads(4, || reconstruct_volume(&v, dictionary(), &model(), &cfg, None)).unwrap();
    assert_eq!(one, four);
}

#[test]
fn smoothing_is_a_denoising_projection() {
    // Re-coding over D can only lower each patch's own lasso objective
    // compared with leaving the patch uncoded.
    let v = views(&phantom(13));
    let cfg = ReconConfig {
        smooth_enabled: true,
        smooth_stride: [1, 1, 1],
        ..fast()
    };
    let r = reconstruct_volume(&v, dictionary(), &model(), &cfg, None).unwrap();
    assert_eq!(r.report.patches_smoothed, 12 * 12 * 7);
    let batch = extract_patches(&r.recovered, &PatchSpec::dense(3, 6)).unwrap();
    let codes = crate::dictionary::encode(dictionary(), batch.matrix.view(), 0.1).unwrap();
    for (i, c) in codes.iter().enumerate() {
        let x = batch.matrix.column(i);
        assert!(c.objective <= 0.5 * x.dot(&x) + 1e-12);
    }
    assert!(normalized_dot(&r.recovered, &r.volume).unwrap() > 0.9);
}

#[test]
fn invalid_configs_are_rejected() {
    let v = views(&phantom(14));
    for cfg in [
        ReconConfig {
            recover_stride: Some([1, 1, 2]),
            ..fast()
        },
        ReconConfig {
            lambda_recover: -1.0,
            ..fast()
        },
        ReconConfig {
            smooth_stride: [0, 1, 1],
            ..fast()
        },
    ] {
        assert!(reconstruct_volume(&v, dictionary(), &model(), &cfg, None)
            .unwrap_err()
            .is_config());
    }
}

#[test]
fn mismatched_dictionary_is_rejected() {
    let v = views(&phantom(15));
    let m = build_projection_model(&TiltGeometry::new(L, TiltAngle::ALL.to_vec(), 3, 3).unwrap()).unwrap();
    assert!(matches!(
        reconstruct_volume(&v, dictionary(), &m, &fast(), None),
        Err(Error::ShapeMismatch { .. })
    ));
}

mod fold_detection {
    use super::*;

    fn image(nx: usize, ny: usize, f: impl Fn(usize, usize) -> f64) -> Image2D {
        let mut img = Image2D::filled(nx, ny, 0.0);
        for y in 0..ny {
            for x in 0..nx {
                img.set(x, y, f(x, y));
            }
        }
        img
    }

    use crate::volume::Image2D;

    #[test]
    fn uniform_image_has_no_folds() {
        let m = detect_folds(&Image2D::filled(20, 20, 3.0), &FoldParams::default()).unwrap();
        assert!(m.iter().all(|b| !b));
    }

    #[test]
    fn dark_stripe_is_detected_exactly() {
        let img = image(100, 100, |x, _| if (40..45).contains(&x) { 0.0 } else { 100.0 });
        let m = detect_folds(&img, &FoldParams::default()).unwrap();
        for y in 0..100 {
            for x in 0..100 {
                assert_eq!(m[x + 100 * y], (40..45).contains(&x), "({x},{y})");
            }
        }
    }

    #[test]
    fn isolated_dark_pixel_is_dust() {
        let img = image(30, 30, |x, y| if (x, y) == (10, 12) { 0.0 } else { 100.0 });
        let m = detect_folds(&img, &FoldParams::default()).unwrap();
        assert!(m.iter().all(|b| !b));
    }

    #[test]
    fn reversed_contrast_finds_bright_folds() {
        let img = image(100, 100, |_, y| if (20..24).contains(&y) { 200.0 } else { 10.0 });
        let normal = detect_folds(&img, &FoldParams::default()).unwrap();
        assert!(normal.iter().all(|b| !b));
        let params = FoldParams {
            reversed_contrast: true,
            ..FoldParams::default()
        };
        let m = detect_folds(&img, &params).unwrap();
        assert_eq!(m.iter().filter(|b| **b).count(), 4 * 100);
    }

    #[test]
    fn small_enclosed_regions_are_absorbed() {
        // A dark ring around a 3x3 bright hole: the hole joins the fold.
        let img = image(100, 100, |x, y| {
            let ring = (45..54).contains(&x) && (45..54).contains(&y);
            let hole = (48..51).contains(&x) && (48..51).contains(&y);
            if ring && !hole {
                0.0
            } else {
                100.0
            }
        });
        let m = detect_folds(&img, &FoldParams::default()).unwrap();
        assert!(m[49 + 100 * 49]);
        assert_eq!(m.iter().filter(|b| **b).count(), 81);
    }

    #[test]
    fn closing_bridges_single_pixel_gaps() {
        let img = image(100, 100, |x, y| {
            if (30..70).contains(&x) && y == 50 && x != 50 {
                0.0
            } else {
                100.0
            }
        });
        let m = detect_folds(&img, &FoldParams::default()).unwrap();
        assert!(m[50 + 100 * 50]);
    }

    #[test]
    fn non_finite_pixels_are_rejected() {
        let img = image(5, 5, |x, _| if x == 2 { f64::NAN } else { 1.0 });
        assert!(matches!(
            detect_folds(&img, &FoldParams::default()),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn fold_mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = FoldMask::empty(7, 5, 3);
        m.section_mut(1)[3] = true;
        m.section_mut(2)[34] = true;
        let path = dir.path().join("folds");
        write_fold_mask(&m, &path).unwrap();
        assert_eq!(read_fold_mask(path.with_extension("json")).unwrap(), m);
    }
}
