use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nlos_autocal::forward::{all_scans, ForwardWorkspace};
use nlos_autocal::gradient::{compute, Blocks};
use nlos_autocal::sim::{make_phantom, synthesize, PhantomKind, Setup};

// Without the `parallel` feature the pools are inert and the kernels run the
// sequential fallback; run once with `--no-default-features` to compare.
fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    if cfg!(feature = "parallel") {
        vec![
            ("rayon-1-thread", rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
            ("rayon-all-threads", rayon::ThreadPoolBuilder::new().build().unwrap()),
        ]
    } else {
        vec![("sequential", rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap())]
    }
}

fn kernels(c: &mut Criterion) {
    let setup = Setup::desk();
    let cal = setup.calibration();
    let vol = make_phantom(PhantomKind::Hemisphere, &setup.volume, setup.phantom_depth).unwrap();
    let measured = synthesize(&cal, &vol, &setup.scene).unwrap();
    let scans = all_scans(cal.scan_count());
    let batch: Vec<usize> = (0..cal.scan_count()).step_by(10).collect();

    let mut g = c.benchmark_group("desk");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::new("forward_all_scans", name), |b| {
            pool.install(|| {
                b.iter(|| {
                    let ws = ForwardWorkspace::new(&setup.scene, &cal, &setup.volume).unwrap();
                    ws.evaluate(&vol.albedo, &scans).unwrap()
                })
            })
        });
        g.bench_function(BenchmarkId::new("gradient_batch", name), |b| {
            pool.install(|| {
                b.iter(|| compute(&cal, &vol, &setup.scene, &measured, &batch, Blocks::ALL).unwrap())
            })
        });
    }
    g.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
