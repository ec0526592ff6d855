//! Calibration metrics and diagnostic sweeps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{all_scans, forward_gaussian, loss};
use crate::gradient::{self, Blocks};
use crate::init::{initial_albedo, InitOptions};
use crate::optim::{autocal, reconstruct_only, AutocalSchedule};
use crate::par;
use crate::sim::{perturb, radial_direction, scenario, synthesize, PerturbationSpec, ScenarioKind, Setup};
use crate::types::{AxisMask, CalibrationState, SceneConfig, Vec3, Volume};

/// Root-mean-square scan-position error restricted to the `axes` components.
pub fn scan_rmse(est: &CalibrationState, truth: &CalibrationState, axes: AxisMask) -> Result<f64> {
    if est.scan_count() != truth.scan_count() {
        return Err(Error::DimensionMismatch {
            context: "scan_rmse scan count",
            expected: truth.scan_count(),
            actual: est.scan_count(),
        });
    }
    if est.scan_count() == 0 {
        return Ok(0.0);
    }
    let ss: f64 = est
        .scan_positions
        .iter()
        .zip(&truth.scan_positions)
        .map(|(a, b)| axes.apply(&(a - b)).norm_squared())
        .sum();
    Ok((ss / est.scan_count() as f64).sqrt())
}

/// RMSE of the scan-position error projected on each truth position's
/// transmitter direction.
pub fn radial_rmse(est: &CalibrationState, truth: &CalibrationState, scene: &SceneConfig) -> Result<f64> {
    if est.scan_count() != truth.scan_count() {
        return Err(Error::DimensionMismatch {
            context: "radial_rmse scan count",
            expected: truth.scan_count(),
            actual: est.scan_count(),
        });
    }
    let ss: f64 = est
        .scan_positions
        .iter()
        .zip(&truth.scan_positions)
        .map(|(a, b)| (a - b).dot(&radial_direction(b, scene)).powi(2))
        .sum();
    Ok((ss / est.scan_count().max(1) as f64).sqrt())
}

/// Normalized cross-correlation of two equally sized arrays; zero if either
/// is constant.
pub fn normalized_cross_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { context: "cross-correlation", expected: a.len(), actual: b.len() });
    }
    let n = a.len().max(1) as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(0.0);
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Fraction of total `|rho|` on the outermost voxel shell.
pub fn boundary_energy(volume: &Volume) -> f64 {
    let [nx, ny, nz] = volume.grid.dims;
    let mut total = 0.0;
    let mut shell = 0.0;
    for (i, a) in volume.albedo.iter().enumerate() {
        let (ix, iy, iz) = (i % nx, (i / nx) % ny, i / (nx * ny));
        let on_shell = ix == 0 || iy == 0 || iz == 0 || ix + 1 == nx || iy + 1 == ny || iz + 1 == nz;
        total += a.abs();
        if on_shell {
            shell += a.abs();
        }
    }
    if total == 0.0 {
        0.0
    } else {
        shell / total
    }
}

/// One scan position and the measurement it produced under the true calibration.
struct SingleScan {
    truth: CalibrationState,
    measured: crate::types::TransientSet,
    direction: Vec3,
}

impl SingleScan {
    fn new(scene: &SceneConfig, cal_true: &CalibrationState, volume_true: &Volume, scan_index: usize) -> Result<Self> {
        if scan_index >= cal_true.scan_count() {
            return Err(Error::IndexOutOfRange { what: "scan", index: scan_index, len: cal_true.scan_count() });
        }
        let l = cal_true.scan_positions[scan_index];
        let truth = CalibrationState::new(vec![l], cal_true.detection_positions.clone());
        let measured = forward_gaussian(&truth, volume_true, scene, &[0])?;
        Ok(SingleScan { truth, measured, direction: radial_direction(&l, scene) })
    }

    /// `dL/dl . u` with the scan displaced by `delta * u`.
    fn projected_gradient(&self, scene: &SceneConfig, volume_true: &Volume, delta: f64) -> Result<f64> {
        let mut cal = self.truth.clone();
        cal.scan_positions[0] += delta * self.direction;
        let g = gradient::compute(&cal, volume_true, scene, &self.measured, &[0], Blocks::POSITIONS)?;
        Ok(g.d_scan[0].dot(&self.direction))
    }

    fn restoring(&self, scene: &SceneConfig, volume_true: &Volume, delta: f64) -> Result<bool> {
        let g = self.projected_gradient(scene, volume_true, delta)?;
        Ok(g != 0.0 && g.signum() == delta.signum())
    }
}

/// Loss gradient along the transmitter direction as scan `scan_index` is
/// displaced radially by each `delta`, everything else at the truth.
pub fn recoverability_profile(
    scene: &SceneConfig,
    cal_true: &CalibrationState,
    volume_true: &Volume,
    scan_index: usize,
    deltas: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if !deltas.iter().all(|d| d.is_finite()) {
        return Err(Error::invariant("deltas", "must be finite"));
    }
    let probe = SingleScan::new(scene, cal_true, volume_true, scan_index)?;
    deltas
        .iter()
        .map(|&d| Ok((d, probe.projected_gradient(scene, volume_true, d)?)))
        .collect()
}

/// Bisection resolution of the recovery-range search, meters.
pub const RECOVERY_RESOLUTION: f64 = 0.002;

/// Largest `|delta|` for which both `+delta` and `-delta` still produce a
/// restoring gradient, per scan position. `delta_grid` gives the coarse
/// magnitudes probed before bisecting to [`RECOVERY_RESOLUTION`].
pub fn recoverability_heatmap(
    scene: &SceneConfig,
    cal_true: &CalibrationState,
    volume_true: &Volume,
    delta_grid: &[f64],
) -> Result<Vec<f64>> {
    let mut mags: Vec<f64> = delta_grid.iter().map(|d| d.abs()).filter(|d| *d > 0.0).collect();
    if mags.iter().any(|d| !d.is_finite()) {
        return Err(Error::invariant("delta_grid", "must be finite"));
    }
    mags.sort_by(f64::total_cmp);
    mags.dedup();
    par::try_map(cal_true.scan_count(), |j| {
        if mags.is_empty() {
            return Ok(0.0);
        }
        let probe = SingleScan::new(scene, cal_true, volume_true, j)?;
        let ok = |d: f64| -> Result<bool> {
            Ok(probe.restoring(scene, volume_true, d)? && probe.restoring(scene, volume_true, -d)?)
        };
        let mut good = 0.0;
        let mut bad = None;
        for &m in &mags {
            if ok(m)? {
                good = m;
            } else {
                bad = Some(m);
                break;
            }
        }
        let Some(mut bad) = bad else { return Ok(good) };
        while bad - good > RECOVERY_RESOLUTION {
            let mid = 0.5 * (good + bad);
            if ok(mid)? {
                good = mid;
            } else {
                bad = mid;
            }
        }
        Ok(good)
    })
}

/// Reconstruction method used by the sweeps.
#[derive(Debug, Clone, PartialEq)]
pub enum Reconstructor {
    /// Backprojection alone.
    Backprojection(InitOptions),
    /// Backprojection followed by gradient descent; `calibrate` switches
    /// position updates on.
    Gradient { init: InitOptions, schedule: AutocalSchedule, calibrate: bool },
    /// Autocal with `calibration`, then a fresh albedo-only run with
    /// `reconstruction` on the recovered positions.
    Recalibrated { init: InitOptions, calibration: AutocalSchedule, reconstruction: AutocalSchedule },
}

impl Reconstructor {
    /// Runs the method on `measured` starting from `cal`; returns the final
    /// calibration and volume.
    pub fn run(
        &self,
        setup: &Setup,
        cal: &CalibrationState,
        measured: &crate::types::TransientSet,
    ) -> Result<(CalibrationState, Volume)> {
        match self {
            Reconstructor::Backprojection(init) => {
                Ok((cal.clone(), initial_albedo(cal, &setup.scene, measured, &setup.volume, *init)?))
            }
            Reconstructor::Gradient { init, schedule, calibrate } => {
                let v0 = initial_albedo(cal, &setup.scene, measured, &setup.volume, *init)?;
                if *calibrate {
                    let out = autocal(cal, &v0, &setup.scene, measured, schedule)?;
                    Ok((out.calibration, out.volume))
                } else {
                    let (v, _) = reconstruct_only(cal, &v0, &setup.scene, measured, schedule)?;
                    Ok((cal.clone(), v))
                }
            }
            Reconstructor::Recalibrated { init, calibration, reconstruction } => {
                let v0 = initial_albedo(cal, &setup.scene, measured, &setup.volume, *init)?;
                let out = autocal(cal, &v0, &setup.scene, measured, calibration)?;
                let v1 = initial_albedo(&out.calibration, &setup.scene, measured, &setup.volume, *init)?;
                let (v, _) = reconstruct_only(&out.calibration, &v1, &setup.scene, measured, reconstruction)?;
                Ok((out.calibration, v))
            }
        }
    }

    /// Backprojection start, then 400 albedo steps at lr 0.01 on 10% batches
    /// with the non-negativity projection.
    pub fn sweep_default() -> Self {
        Reconstructor::Gradient { init: InitOptions::default(), schedule: sweep_schedule(), calibrate: false }
    }

    /// Default autocal schedule with the non-negativity projection, followed
    /// by [`Reconstructor::sweep_default`] on the recovered calibration.
    pub fn recalibrated_default() -> Self {
        Reconstructor::Recalibrated {
            init: InitOptions::default(),
            calibration: AutocalSchedule { nonnegativity_projection: true, ..Default::default() },
            reconstruction: sweep_schedule(),
        }
    }
}

fn sweep_schedule() -> AutocalSchedule {
    AutocalSchedule {
        scan_subsample_fraction: 0.1,
        nonnegativity_projection: true,
        ..AutocalSchedule::reconstruction(400, 0.01)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub std: f64,
    pub seed: u64,
    pub final_loss: f64,
    pub correlation: f64,
}

/// For each noise level and seed: scenario-1 miscalibration, reconstruction,
/// residual loss and correlation with the true volume.
pub fn noise_sensitivity_sweep(
    setup: &Setup,
    volume_true: &Volume,
    stds: &[f64],
    seeds: &[u64],
    reconstructor: &Reconstructor,
) -> Result<Vec<SensitivityRow>> {
    let mut rows = Vec::with_capacity(stds.len() * seeds.len());
    for &std in stds {
        for &seed in seeds {
            let data = scenario(
                ScenarioKind::NoisyToGrid,
                &setup.grid,
                &setup.detection_positions,
                volume_true,
                &setup.scene,
                std,
                seed,
            )?;
            let mut est = data.estimate.clone();
            est.update_mask = AxisMask::Z;
            let (cal, vol) = reconstructor.run(setup, &est, &data.measured)?;
            let final_loss = loss(&cal, &vol, &setup.scene, &data.measured, &all_scans(cal.scan_count()))?;
            let correlation = normalized_cross_correlation(&vol.albedo, &volume_true.albedo)?;
            rows.push(SensitivityRow { std, seed, final_loss, correlation });
        }
    }
    Ok(rows)
}

/// Perturbs the true grid with a spatial pattern, runs autocal and returns
/// `(initial, final)` RMSE along the perturbation direction.
pub fn pattern_recovery_test(
    setup: &Setup,
    volume_true: &Volume,
    spec: &PerturbationSpec,
    schedule: &AutocalSchedule,
    mask: AxisMask,
    init: InitOptions,
) -> Result<(f64, f64)> {
    let truth = setup.calibration();
    let measured = synthesize(&truth, volume_true, &setup.scene)?;
    let est = perturb(&truth, spec, &setup.scene)?.with_mask(mask);
    let initial = radial_rmse(&est, &truth, &setup.scene)?;
    if initial == 0.0 {
        return Ok((0.0, 0.0));
    }
    let v0 = initial_albedo(&est, &setup.scene, &measured, &setup.volume, init)?;
    let out = autocal(&est, &v0, &setup.scene, &measured, schedule)?;
    Ok((initial, radial_rmse(&out.calibration, &truth, &setup.scene)?))
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|)`, taken as
    /// the absolute difference when both are below the floor.
    pub max_relative_error: f64,
    /// Parameter where it occurred, e.g. `scan[3].z`.
    pub worst: String,
    pub checked: usize,
}

/// Parameters compared by [`gradient_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct CheckSettings {
    pub position_step: f64,
    pub albedo_step: f64,
    /// Voxels to compare; `None` compares all of them.
    pub voxels: Option<Vec<usize>>,
    /// Magnitude below which entries are compared absolutely.
    pub floor: f64,
}

impl Default for CheckSettings {
    fn default() -> Self {
        CheckSettings { position_step: 1e-4, albedo_step: 1e-5, voxels: None, floor: 1e-12 }
    }
}

/// Compares [`gradient::grad_loss`] with central finite differences of the
/// loss for every unmasked position axis and the selected voxels.
pub fn gradient_check(
    cal: &CalibrationState,
    volume: &Volume,
    scene: &SceneConfig,
    measured: &crate::types::TransientSet,
    scan_subset: &[usize],
    settings: &CheckSettings,
) -> Result<GradientCheck> {
    let g = gradient::grad_loss(cal, volume, scene, measured, scan_subset)?;
    let f = |c: &CalibrationState, v: &Volume| loss(c, v, scene, measured, scan_subset);
    let mut worst = (0.0, String::new());
    let mut checked = 0;
    let mut compare = |name: String, a: f64, n: f64, worst: &mut (f64, String)| {
        let scale = a.abs().max(n.abs());
        let err = if scale < settings.floor { (a - n).abs() } else { (a - n).abs() / scale };
        checked += 1;
        if err > worst.0 || worst.1.is_empty() {
            *worst = (err, name);
        }
    };

    let voxels: Vec<usize> = settings.voxels.clone().unwrap_or_else(|| (0..volume.voxel_count()).collect());
    for &i in &voxels {
        if i >= volume.voxel_count() {
            return Err(Error::IndexOutOfRange { what: "voxel", index: i, len: volume.voxel_count() });
        }
        let h = settings.albedo_step;
        let mut vp = volume.clone();
        vp.albedo[i] += h;
        let mut vm = volume.clone();
        vm.albedo[i] -= h;
        let n = (f(cal, &vp)? - f(cal, &vm)?) / (2.0 * h);
        compare(format!("rho[{i}]"), g.d_rho[i], n, &mut worst);
    }

    let axes = cal.update_mask.as_array();
    let h = settings.position_step;
    for (block, grads) in [("scan", &g.d_scan), ("detection", &g.d_detect)] {
        for (idx, grad) in grads.iter().enumerate() {
            for (axis, &on) in axes.iter().enumerate() {
                if !on {
                    continue;
                }
                let shifted = |sign: f64| {
                    let mut c = cal.clone();
                    let list = if block == "scan" { &mut c.scan_positions } else { &mut c.detection_positions };
                    list[idx][axis] += sign * h;
                    c
                };
                let n = (f(&shifted(1.0), volume)? - f(&shifted(-1.0), volume)?) / (2.0 * h);
                let name = format!("{block}[{idx}].{}", ["x", "y", "z"][axis]);
                compare(name, grad[axis], n, &mut worst);
            }
        }
    }
    Ok(GradientCheck { max_relative_error: worst.0, worst: worst.1, checked })
}

/// Largest relative gap between `<grad, v>` and the central difference
/// `(L(theta + h v) - L(theta - h v)) / 2h` over `directions` random unit
/// vectors `v` spanning the albedo and every unmasked position axis.
#[allow(clippy::too_many_arguments)]
pub fn directional_check(
    cal: &CalibrationState,
    volume: &Volume,
    scene: &SceneConfig,
    measured: &crate::types::TransientSet,
    scan_subset: &[usize],
    directions: usize,
    step: f64,
    seed: u64,
) -> Result<f64> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invariant("step", "must be > 0"));
    }
    let g = gradient::grad_loss(cal, volume, scene, measured, scan_subset)?;
    let mask = cal.update_mask;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
        let mut d_rho: Vec<f64> = (0..volume.voxel_count()).map(|_| draw()).collect();
        let mut vec3 = || mask.apply(&Vec3::new(draw(), draw(), draw()));
        let mut d_scan: Vec<Vec3> = (0..cal.scan_count()).map(|_| vec3()).collect();
        let mut d_det: Vec<Vec3> = (0..cal.detection_count()).map(|_| vec3()).collect();
        let norm = (d_rho.iter().map(|v| v * v).sum::<f64>()
            + d_scan.iter().chain(&d_det).map(|v| v.norm_squared()).sum::<f64>())
        .sqrt();
        d_rho.iter_mut().for_each(|v| *v /= norm);
        d_scan.iter_mut().chain(d_det.iter_mut()).for_each(|v| *v /= norm);

        let predicted = g.d_rho.iter().zip(&d_rho).map(|(a, b)| a * b).sum::<f64>()
            + g.d_scan.iter().zip(&d_scan).map(|(a, b)| a.dot(b)).sum::<f64>()
            + g.d_detect.iter().zip(&d_det).map(|(a, b)| a.dot(b)).sum::<f64>();
        let at = |t: f64| {
            let mut c = cal.clone();
            let mut v = volume.clone();
            for (p, d) in c.scan_positions.iter_mut().zip(&d_scan) {
                *p += t * d;
            }
            for (p, d) in c.detection_positions.iter_mut().zip(&d_det) {
                *p += t * d;
            }
            for (a, d) in v.albedo.iter_mut().zip(&d_rho) {
                *a += t * d;
            }
            loss(&c, &v, scene, measured, scan_subset)
        };
        let numeric = (at(step)? - at(-step)?) / (2.0 * step);
        let scale = predicted.abs().max(numeric.abs());
        let err = if scale < 1e-12 { (numeric - predicted).abs() } else { (numeric - predicted).abs() / scale };
        worst = worst.max(err);
    }
    Ok(worst)
}
