//! Reference implementations shared by integration tests.

use nlos_autocal::types::{total_path_length, CalibrationState, SceneConfig, Vec3, Volume, VolumeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct evaluation of the Gaussian model: one loop per pair, voxel and bin,
/// no kernel truncation, no recurrences, nothing cached.
pub fn naive_forward(cal: &CalibrationState, vol: &Volume, scene: &SceneConfig, subset: &[usize]) -> Vec<f64> {
    let c = scene.speed_of_light;
    let sm = c * scene.gaussian_sigma;
    let nk = scene.bin_count;
    let nd = cal.detection_positions.len();
    let mut out = vec![0.0; subset.len() * nd * nk];
    for (row, &j) in subset.iter().enumerate() {
        let l = cal.scan_positions[j];
        for (m, s) in cal.detection_positions.iter().enumerate() {
            for (i, rho) in vol.albedo.iter().enumerate() {
                let o = vol.grid.voxel_center(i).unwrap();
                let rl = (l - o).norm();
                let rs = (s - o).norm();
                let d = (scene.source_pos - l).norm() + rl + rs + (s - scene.detector_pos).norm();
                for k in 0..nk {
                    let u = c * ((k as f64 + 0.5) * scene.bin_width + scene.time_offset) - d;
                    out[(row * nd + m) * nk + k] += rho * (-(u * u) / (sm * sm)).exp() / (rl * rl * rs * rs);
                }
            }
        }
    }
    out
}

/// `max |a - b| / max |b|`.
#[allow(dead_code)]
pub fn max_relative_difference(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[allow(dead_code)]
/// One voxel whose path lands on the centre of `bin`, with `sigma = dt / 8`.
pub fn centred_single_voxel(seed: u64, bin: usize) -> (SceneConfig, CalibrationState, Volume) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 0.0);
    let s = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 0.0);
    let o = Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(0.5..1.5));
    let dt = rng.random_range(16e-12..64e-12);
    let mut scene = SceneConfig::new(Vec3::new(1.0, 0.0, 0.8), Vec3::new(1.2, 0.1, 0.7), dt, 2 * bin);
    scene.gaussian_sigma = dt / 8.0;
    let cal = CalibrationState::new(vec![l], vec![s]);
    let d = total_path_length(&l, &s, &o, &scene).unwrap();
    scene.time_offset = d / scene.speed_of_light - (bin as f64 + 0.5) * dt;
    let grid = VolumeGrid::cube(o, 0.04, 1);
    let vol = Volume::from_albedo(grid, vec![rng.random_range(0.5..2.0)]).unwrap();
    (scene, cal, vol)
}
