//! One worker against the full pool on the two hot loops: batch sparse
//! coding and patch-wise recovery. Build with `--no-default-features` to
//! time the sequential fallback instead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use tiltsr::dictionary::{encode, learn_dictionary, LearnConfig};
use tiltsr::par;
use tiltsr::phantom::{generate_phantom, PhantomSpec};
use tiltsr::reconstruction::{reconstruct_volume, ReconConfig};
use tiltsr::tomography::{build_projection_model, simulate_views, NoiseSpec, TiltGeometry};
use tiltsr::volume::{extract_patches, PatchSpec};

fn bench(c: &mut Criterion) {
    let volume = generate_phantom(&PhantomSpec {
        dims: (32, 32, 32),
        n_membranes: 5,
        ..PhantomSpec::default()
    })
    .unwrap();
    let geometry = TiltGeometry::new(4, TiltGeometry::standard().angles, 5, 8).unwrap();
    let patches = extract_patches(&volume, &PatchSpec::new(5, 8, [2, 2, 2]).unwrap()).unwrap();
    let mut cfg = LearnConfig::for_patch(&patches.spec);
    cfg.n_epochs = 1;
    let dictionary = learn_dictionary(&patches, &cfg).unwrap();
    let model = build_projection_model(&geometry).unwrap();
    let views = simulate_views(&volume, &geometry, NoiseSpec::noiseless()).unwrap();
    let recon = ReconConfig {
        smooth_enabled: false,
        ..ReconConfig::default()
    };

    let pool = par::current_threads().max(2);
    let mut group = c.benchmark_group("threads");
    group.sample_size(10);
    for threads in [1, pool] {
        group.bench_with_input(BenchmarkId::new("encode", threads), &threads, |b, &t| {
            b.iter(|| par::with_threads(t, || encode(&dictionary, patches.matrix.view(), 0.1).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("reconstruct", threads), &threads, |b, &t| {
            b.iter(|| {
                par::with_threads(t, || {
                    reconstruct_volume(&views, &dictionary, &model, &recon, None).unwrap()
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
