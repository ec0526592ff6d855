use nlos_autocal::analysis::{normalized_cross_correlation, scan_rmse};
use nlos_autocal::forward::{all_scans, loss};
use nlos_autocal::init::{backproject, initial_albedo, InitOptions};
use nlos_autocal::optim::{autocal, autocal_with, reconstruct_only, AutocalSchedule};
use nlos_autocal::sim::{make_phantom, random_scene, scenario, synthesize, GridSpec, PhantomKind, ScenarioKind, Setup};
use nlos_autocal::types::{AxisMask, OptimizationReport, Vec3, Volume, VolumeGrid};

/// Desk geometry shrunk to 8x8 scans and 8^3 voxels so tests stay quick.
fn small_desk() -> Setup {
    let mut s = Setup::desk();
    s.grid = GridSpec::square(8, 1.28);
    s.volume = VolumeGrid::cube(Vec3::new(0.0, 0.0, 1.0), 0.08, 8);
    s
}

#[test]
fn full_batch_reconstruction_never_increases_loss() {
    for seed in 0..4u64 {
        let rs = random_scene(seed).unwrap();
        let v0 = Volume::zeros(rs.volume.grid.clone());
        let (_, report) = reconstruct_only(&rs.calibration, &v0, &rs.scene, &rs.measured, &AutocalSchedule::reconstruction(200, 1e-3)).unwrap();
        let l = report.losses();
        assert_eq!(l.len(), 200);
        for w in l.windows(2) {
            assert!(w[1] <= w[0], "seed {seed}: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn exact_start_does_not_move() {
    let setup = small_desk();
    let truth = setup.calibration();
    let vol = make_phantom(PhantomKind::Hemisphere, &setup.volume, setup.phantom_depth).unwrap();
    let measured = synthesize(&truth, &vol, &setup.scene).unwrap();
    let out = autocal(&truth.clone().with_mask(AxisMask::Z), &vol, &setup.scene, &measured, &AutocalSchedule::default()).unwrap();
    assert_eq!(scan_rmse(&out.calibration, &truth, AxisMask::ALL).unwrap(), 0.0);
    assert_eq!(out.volume, vol);
    assert_eq!(loss(&out.calibration, &out.volume, &setup.scene, &measured, &all_scans(64)).unwrap(), 0.0);
}

#[test]
fn z_noise_is_reduced_on_small_desk() {
    let setup = small_desk();
    let vol = make_phantom(PhantomKind::Hemisphere, &setup.volume, setup.phantom_depth).unwrap();
    let data = scenario(ScenarioKind::NoisyToGrid, &setup.grid, &setup.detection_positions, &vol, &setup.scene, 0.05, 1).unwrap();
    let est = data.estimate.clone().with_mask(AxisMask::Z);
    let v0 = initial_albedo(&est, &setup.scene, &data.measured, &setup.volume, InitOptions::default()).unwrap();
    let mut report = OptimizationReport::default();
    let sched = AutocalSchedule { scan_subsample_fraction: 0.25, ..Default::default() };
    let (cal, _) = autocal_with(&est, &v0, &setup.scene, &data.measured, &sched, Some(&data.truth), &mut report).unwrap();
    let before = scan_rmse(&est, &data.truth, AxisMask::Z).unwrap();
    let after = scan_rmse(&cal, &data.truth, AxisMask::Z).unwrap();
    assert!(after < before, "{before} -> {after}");
    let iters: Vec<usize> = report.records.iter().map(|r| r.iteration).collect();
    assert!(iters.windows(2).all(|w| w[1] == w[0] + 1));
    assert!(report.records.iter().all(|r| r.scan_rmse.is_some()));
}

#[test]
fn backprojection_peaks_at_single_voxel() {
    let setup = small_desk();
    let cal = setup.calibration();
    let vol = make_phantom(PhantomKind::SingleVoxel, &setup.volume, setup.phantom_depth).unwrap();
    let measured = synthesize(&cal, &vol, &setup.scene).unwrap();
    let bp = backproject(&cal, &setup.scene, &measured, &setup.volume).unwrap();
    let argmax = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert_eq!(argmax(&bp.albedo), argmax(&vol.albedo));
    assert!(normalized_cross_correlation(&bp.albedo, &vol.albedo).unwrap() > 0.0);
}

#[cfg(feature = "parallel")]
#[test]
fn thread_count_does_not_change_results() {
    let setup = small_desk();
    let vol = make_phantom(PhantomKind::Hemisphere, &setup.volume, setup.phantom_depth).unwrap();
    let data = scenario(ScenarioKind::NoisyToGrid, &setup.grid, &setup.detection_positions, &vol, &setup.scene, 0.03, 4).unwrap();
    let est = data.estimate.clone().with_mask(AxisMask::ALL);
    let sched = AutocalSchedule { total_iterations: 2, calib_iterations: 5, reconstruction_iterations: 5, ..Default::default() };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let v0 = initial_albedo(&est, &setup.scene, &data.measured, &setup.volume, InitOptions::default()).unwrap();
            autocal(&est, &v0, &setup.scene, &data.measured, &sched).unwrap()
        })
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a.calibration, b.calibration);
    assert_eq!(a.volume, b.volume);
    assert_eq!(a.report.losses(), b.report.losses());
}

#[test]
fn scan_subsets_give_unbiased_gradients() {
    use nlos_autocal::gradient::grad_loss;
    use nlos_autocal::optim::BatchSampler;
    let shape = nlos_autocal::sim::SceneShape { scans: 4, detections: 2, dims: [4, 4, 4], bins: 48 };
    let rs = nlos_autocal::sim::random_scene_with(3, Some(shape)).unwrap();
    let full = grad_loss(&rs.calibration, &rs.volume, &rs.scene, &rs.measured, &all_scans(4)).unwrap();
    let b = 2;
    let pairs: Vec<Vec<usize>> = (0..4).flat_map(|i| (i + 1..4).map(move |j| vec![i, j])).collect();
    let mut mean = vec![0.0; full.d_rho.len()];
    for subset in &pairs {
        let g = grad_loss(&rs.calibration, &rs.volume, &rs.scene, &rs.measured, subset).unwrap();
        for (m, v) in mean.iter_mut().zip(&g.d_rho) {
            *m += v / pairs.len() as f64;
        }
    }
    let scale = full.d_rho.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (m, f) in mean.iter().zip(&full.d_rho) {
        assert!((m - f * b as f64 / 4.0).abs() <= 1e-12 * scale);
    }

    // every scan is drawn equally often across whole epochs
    let mut sampler = BatchSampler::new(4, 9);
    let mut counts = [0usize; 4];
    for _ in 0..200 {
        for j in sampler.next_batch(b) {
            counts[j] += 1;
        }
    }
    assert_eq!(counts, [100; 4]);
}
