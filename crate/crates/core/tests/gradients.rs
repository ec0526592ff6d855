use nlos_autocal::analysis::{directional_check, gradient_check, CheckSettings};
use nlos_autocal::forward::all_scans;
use nlos_autocal::gradient::{grad_loss, grad_rho_only};
use nlos_autocal::sim::{random_scene, random_scene_with, SceneShape};
use nlos_autocal::types::{AxisMask, Vec3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn analytic_gradients_match_central_differences() {
    let mut worst = (0.0, String::new());
    for seed in 0..100u64 {
        let rs = random_scene(seed).unwrap();
        let n = rs.volume.voxel_count();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let voxels = sample(&mut rng, n, n.min(24)).into_vec();
        // 1e-4 m leaves O(h^2) truncation near 1e-4 on components that nearly cancel
        let settings = CheckSettings { position_step: 1e-5, voxels: Some(voxels), ..Default::default() };
        let subset = all_scans(rs.calibration.scan_count());
        let r = gradient_check(&rs.calibration, &rs.volume, &rs.scene, &rs.measured, &subset, &settings).unwrap();
        assert!(r.max_relative_error < 1e-4, "seed {seed}: {} off by {:e}", r.worst, r.max_relative_error);
        if r.max_relative_error > worst.0 {
            worst = (r.max_relative_error, format!("seed {seed} {}", r.worst));
        }
    }
    println!("worst relative error {:e} at {}", worst.0, worst.1);
}

#[test]
fn six_cubed_four_scans_default_steps() {
    let shape = SceneShape { scans: 4, detections: 1, dims: [6, 6, 6], bins: 64 };
    let rs = random_scene_with(7, Some(shape)).unwrap();
    let subset = all_scans(rs.calibration.scan_count());
    let r = gradient_check(&rs.calibration, &rs.volume, &rs.scene, &rs.measured, &subset, &CheckSettings::default()).unwrap();
    assert!(r.max_relative_error < 1e-4, "{} off by {:e}", r.worst, r.max_relative_error);
}

#[test]
fn directional_derivatives_match_loss_slope() {
    for seed in 200..220u64 {
        let rs = random_scene(seed).unwrap();
        let subset = all_scans(rs.calibration.scan_count());
        let err = directional_check(&rs.calibration, &rs.volume, &rs.scene, &rs.measured, &subset, 20, 1e-5, seed).unwrap();
        assert!(err < 1e-4, "seed {seed}: {err:e}");
    }
}

#[test]
fn rho_only_equals_full_bundle_rho_block() {
    for seed in 300..310u64 {
        let rs = random_scene(seed).unwrap();
        let subset = all_scans(rs.calibration.scan_count());
        let full = grad_loss(&rs.calibration, &rs.volume, &rs.scene, &rs.measured, &subset).unwrap();
        let rho = grad_rho_only(&rs.calibration, &rs.volume, &rs.scene, &rs.measured, &subset).unwrap();
        assert_eq!(full.d_rho, rho);
    }
}

#[test]
fn masked_axes_are_exactly_zero() {
    let rs = random_scene(7).unwrap();
    let cal = rs.calibration.clone().with_mask(AxisMask::Z);
    let subset = all_scans(cal.scan_count());
    let g = grad_loss(&cal, &rs.volume, &rs.scene, &rs.measured, &subset).unwrap();
    for v in g.d_scan.iter().chain(&g.d_detect) {
        assert_eq!(v.x, 0.0);
        assert_eq!(v.y, 0.0);
    }
    assert!(g.d_scan.iter().any(|v| v.z != 0.0));
}

#[test]
fn unselected_scans_get_no_gradient() {
    let rs = (0..50).map(|s| random_scene(s).unwrap()).find(|r| r.calibration.scan_count() >= 3).unwrap();
    let g = grad_loss(&rs.calibration, &rs.volume, &rs.scene, &rs.measured, &[1]).unwrap();
    for (j, v) in g.d_scan.iter().enumerate() {
        if j != 1 {
            assert_eq!(*v, Vec3::zeros());
        }
    }
}

#[test]
fn subset_gradients_add_up() {
    let rs = (0..50).map(|s| random_scene(s).unwrap()).find(|r| r.calibration.scan_count() >= 4).unwrap();
    let p = rs.calibration.scan_count();
    let all = grad_loss(&rs.calibration, &rs.volume, &rs.scene, &rs.measured, &all_scans(p)).unwrap();
    let a = grad_loss(&rs.calibration, &rs.volume, &rs.scene, &rs.measured, &(0..2).collect::<Vec<_>>()).unwrap();
    let b = grad_loss(&rs.calibration, &rs.volume, &rs.scene, &rs.measured, &(2..p).collect::<Vec<_>>()).unwrap();
    assert!((a.loss + b.loss - all.loss).abs() <= 1e-12 * all.loss.abs().max(1.0));
    for ((x, y), z) in a.d_rho.iter().zip(&b.d_rho).zip(&all.d_rho) {
        assert!((x + y - z).abs() <= 1e-10 * z.abs().max(1e-6));
    }
    for ((x, y), z) in a.d_detect.iter().zip(&b.d_detect).zip(&all.d_detect) {
        assert!((x + y - z).norm() <= 1e-10 * z.norm().max(1e-6));
    }
}
