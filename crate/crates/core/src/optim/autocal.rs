use serde::{Deserialize, Serialize};

use super::{AdamConfig, AdamState, BatchSampler};
use crate::analysis::scan_rmse;
use crate::error::{Error, Result};
use crate::gradient::{self, Blocks};
use crate::types::{
    AxisMask, CalibrationState, IterationRecord, OptimizationReport, Phase, SceneConfig, Snapshot,
    TransientSet, Vec3, Volume,
};

/// Alternating schedule: `total_iterations` repeats of `calib_iterations`
/// position updates followed by `reconstruction_iterations` albedo updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutocalSchedule {
    pub total_iterations: usize,
    pub calib_iterations: usize,
    pub reconstruction_iterations: usize,
    /// Fraction of scans drawn per iteration, in (0, 1].
    pub scan_subsample_fraction: f64,
    /// Overrides the batch size implied by the fraction.
    #[serde(default)]
    pub batch_size: Option<usize>,
    pub rng_seed: u64,
    /// Project albedo onto `rho >= 0` after every update.
    #[serde(default)]
    pub nonnegativity_projection: bool,
    /// Clamp albedo to at most this value after every update.
    #[serde(default)]
    pub albedo_upper_bound: Option<f64>,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Keep a copy of the volume at the end of each repeat.
    #[serde(default)]
    pub snapshot_volumes: bool,
}

impl Default for AutocalSchedule {
    fn default() -> Self {
        AutocalSchedule {
            total_iterations: 4,
            calib_iterations: 20,
            reconstruction_iterations: 20,
            scan_subsample_fraction: 0.1,
            batch_size: None,
            rng_seed: 0,
            nonnegativity_projection: false,
            albedo_upper_bound: None,
            adam: AdamConfig::default(),
            snapshot_volumes: false,
        }
    }
}

impl AutocalSchedule {
    /// Full-batch reconstruction-only schedule with `iterations` albedo steps.
    pub fn reconstruction(iterations: usize, learning_rate: f64) -> Self {
        AutocalSchedule {
            total_iterations: 1,
            calib_iterations: 0,
            reconstruction_iterations: iterations,
            scan_subsample_fraction: 1.0,
            adam: AdamConfig::default().with_lr(learning_rate),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scan_subsample_fraction > 0.0 && self.scan_subsample_fraction <= 1.0) {
            return Err(Error::invariant(
                "scan_subsample_fraction",
                format!("must lie in (0, 1], got {}", self.scan_subsample_fraction),
            ));
        }
        if self.batch_size == Some(0) {
            return Err(Error::invariant("batch_size", "must be >= 1"));
        }
        if let Some(b) = self.albedo_upper_bound {
            if !b.is_finite() {
                return Err(Error::invariant("albedo_upper_bound", "must be finite"));
            }
        }
        self.adam.validate()
    }

    /// Batch size for `scan_count` scans: `ceil(fraction * p)`, at least one.
    pub fn batch_size_for(&self, scan_count: usize) -> usize {
        let b = self
            .batch_size
            .unwrap_or_else(|| (self.scan_subsample_fraction * scan_count as f64).ceil() as usize);
        b.clamp(1, scan_count.max(1))
    }
}

#[derive(Debug, Clone)]
pub struct AutocalOutput {
    pub calibration: CalibrationState,
    pub volume: Volume,
    pub report: OptimizationReport,
}

/// Jointly refines scan/detection positions and albedo.
pub fn autocal(
    cal0: &CalibrationState,
    volume0: &Volume,
    scene: &SceneConfig,
    measured: &TransientSet,
    schedule: &AutocalSchedule,
) -> Result<AutocalOutput> {
    let mut report = OptimizationReport::default();
    let (calibration, volume) = autocal_with(cal0, volume0, scene, measured, schedule, None, &mut report)?;
    Ok(AutocalOutput { calibration, volume, report })
}

/// [`autocal`] writing into a caller-owned report, so that the records of a
/// failed run remain available. `truth` enables per-iteration z-RMSE.
pub fn autocal_with(
    cal0: &CalibrationState,
    volume0: &Volume,
    scene: &SceneConfig,
    measured: &TransientSet,
    schedule: &AutocalSchedule,
    truth: Option<&CalibrationState>,
    report: &mut OptimizationReport,
) -> Result<(CalibrationState, Volume)> {
    Runner::new(cal0, volume0, scene, measured, schedule, truth)?.run(report, true)
}

/// Albedo-only updates with the calibration held fixed. Runs
/// `total_iterations * reconstruction_iterations` steps.
pub fn reconstruct_only(
    cal: &CalibrationState,
    volume0: &Volume,
    scene: &SceneConfig,
    measured: &TransientSet,
    schedule: &AutocalSchedule,
) -> Result<(Volume, OptimizationReport)> {
    let mut report = OptimizationReport::default();
    let volume = reconstruct_only_with(cal, volume0, scene, measured, schedule, &mut report)?;
    Ok((volume, report))
}

pub fn reconstruct_only_with(
    cal: &CalibrationState,
    volume0: &Volume,
    scene: &SceneConfig,
    measured: &TransientSet,
    schedule: &AutocalSchedule,
    report: &mut OptimizationReport,
) -> Result<Volume> {
    let (_, volume) = Runner::new(cal, volume0, scene, measured, schedule, None)?.run(report, false)?;
    Ok(volume)
}

struct Runner<'a> {
    cal: CalibrationState,
    volume: Volume,
    scene: &'a SceneConfig,
    measured: &'a TransientSet,
    schedule: &'a AutocalSchedule,
    truth: Option<&'a CalibrationState>,
    sampler: BatchSampler,
    batch: usize,
    adam_rho: AdamState,
    adam_scan: AdamState,
    adam_detect: AdamState,
}

impl<'a> Runner<'a> {
    fn new(
        cal0: &CalibrationState,
        volume0: &Volume,
        scene: &'a SceneConfig,
        measured: &'a TransientSet,
        schedule: &'a AutocalSchedule,
        truth: Option<&'a CalibrationState>,
    ) -> Result<Self> {
        scene.validate()?;
        cal0.validate()?;
        volume0.validate()?;
        schedule.validate()?;
        measured.check_matches(cal0, scene)?;
        if let Some(t) = truth {
            if t.scan_count() != cal0.scan_count() {
                return Err(Error::DimensionMismatch {
                    context: "ground-truth scan count",
                    expected: cal0.scan_count(),
                    actual: t.scan_count(),
                });
            }
        }
        let p = cal0.scan_count();
        Ok(Runner {
            cal: cal0.clone(),
            volume: volume0.clone(),
            scene,
            measured,
            schedule,
            truth,
            sampler: BatchSampler::new(p, schedule.rng_seed),
            batch: schedule.batch_size_for(p),
            adam_rho: AdamState::new(volume0.voxel_count(), schedule.adam),
            adam_scan: AdamState::new(3 * p, schedule.adam),
            adam_detect: AdamState::new(3 * cal0.detection_count(), schedule.adam),
        })
    }

    fn run(mut self, report: &mut OptimizationReport, calibrate: bool) -> Result<(CalibrationState, Volume)> {
        let s = self.schedule;
        if calibrate && s.total_iterations > 0 && s.calib_iterations > 0 && !self.cal.update_mask.any() {
            return Err(Error::invariant(
                "update_mask",
                "calibration updates requested with every axis disabled",
            ));
        }
        for _ in 0..s.total_iterations {
            if calibrate {
                for _ in 0..s.calib_iterations {
                    self.calibration_step(report)?;
                }
            }
            for _ in 0..s.reconstruction_iterations {
                self.reconstruction_step(report)?;
            }
            if calibrate || s.snapshot_volumes {
                report.snapshots.push(Snapshot {
                    after_iteration: report.next_iteration().saturating_sub(1),
                    calibration: self.cal.clone(),
                    volume: s.snapshot_volumes.then(|| self.volume.clone()),
                });
            }
        }
        report.final_calibration = Some(self.cal.clone());
        report.final_volume = Some(self.volume.clone());
        Ok((self.cal, self.volume))
    }

    fn record(&self, report: &mut OptimizationReport, phase: Phase, loss: f64, batch_size: usize) -> Result<()> {
        let scan_rmse = match self.truth {
            Some(t) => Some(scan_rmse(&self.cal, t, AxisMask::Z)?),
            None => None,
        };
        report.push(IterationRecord {
            iteration: report.next_iteration(),
            phase,
            loss,
            batch_size,
            scan_rmse,
        })
    }

    fn calibration_step(&mut self, report: &mut OptimizationReport) -> Result<()> {
        let batch = self.sampler.next_batch(self.batch);
        let g = gradient::compute(&self.cal, &self.volume, self.scene, self.measured, &batch, Blocks::POSITIONS)?;
        self.record(report, Phase::Calibration, g.loss, batch.len())?;

        let mut flat = flatten(&self.cal.scan_positions);
        self.adam_scan.step("scan_positions", &mut flat, &flatten(&g.d_scan))?;
        unflatten_into(&flat, &mut self.cal.scan_positions);

        let mut flat = flatten(&self.cal.detection_positions);
        self.adam_detect.step("detection_positions", &mut flat, &flatten(&g.d_detect))?;
        unflatten_into(&flat, &mut self.cal.detection_positions);
        Ok(())
    }

    fn reconstruction_step(&mut self, report: &mut OptimizationReport) -> Result<()> {
        let batch = self.sampler.next_batch(self.batch);
        let g = gradient::compute(&self.cal, &self.volume, self.scene, self.measured, &batch, Blocks::ALBEDO)?;
        self.record(report, Phase::Reconstruction, g.loss, batch.len())?;
        self.adam_rho.step("albedo", &mut self.volume.albedo, &g.d_rho)?;
        if self.schedule.nonnegativity_projection {
            for a in self.volume.albedo.iter_mut() {
                *a = a.max(0.0);
            }
        }
        if let Some(hi) = self.schedule.albedo_upper_bound {
            for a in self.volume.albedo.iter_mut() {
                *a = a.min(hi);
            }
        }
        Ok(())
    }
}

fn flatten(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

fn unflatten_into(flat: &[f64], out: &mut [Vec3]) {
    for (p, c) in out.iter_mut().zip(flat.chunks_exact(3)) {
        *p = Vec3::new(c[0], c[1], c[2]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::forward_gaussian;
    use crate::types::VolumeGrid;

    fn small_problem() -> (SceneConfig, CalibrationState, Volume) {
        let mut scene = SceneConfig::new(Vec3::new(0.6, 0.0, 0.4), Vec3::new(0.6, 0.0, 0.4), 100e-12, 160);
        scene.time_offset = 1.0 / scene.speed_of_light;
        let mut scans = Vec::new();
        for iy in 0..3 {
            for ix in 0..3 {
                scans.push(Vec3::new(-0.2 + 0.2 * ix as f64, -0.2 + 0.2 * iy as f64, 0.0));
            }
        }
        let cal = CalibrationState::new(scans, vec![Vec3::new(0.05, 0.0, 0.0)]);
        let grid = VolumeGrid::cube(Vec3::new(0.0, 0.0, 0.8), 0.1, 3);
        let n = grid.voxel_count();
        let albedo = (0..n).map(|i| if i % 4 == 0 { 1.0 } else { 0.0 }).collect();
        (scene, cal, Volume::from_albedo(grid, albedo).unwrap())
    }

    #[test]
    fn empty_schedule_returns_inputs() {
        let (scene, cal, vol) = small_problem();
        let m = forward_gaussian(&cal, &vol, &scene, &crate::forward::all_scans(9)).unwrap();
        let sched = AutocalSchedule { calib_iterations: 0, reconstruction_iterations: 0, ..Default::default() };
        let out = autocal(&cal, &vol, &scene, &m, &sched).unwrap();
        assert_eq!(out.calibration, cal);
        assert_eq!(out.volume, vol);
        assert!(out.report.records.is_empty());
    }

    #[test]
    fn perfect_start_is_a_fixed_point() {
        let (scene, cal, vol) = small_problem();
        let m = forward_gaussian(&cal, &vol, &scene, &crate::forward::all_scans(9)).unwrap();
        let sched = AutocalSchedule { total_iterations: 2, calib_iterations: 3, reconstruction_iterations: 3, ..Default::default() };
        let out = autocal(&cal, &vol, &scene, &m, &sched).unwrap();
        assert_eq!(out.calibration, cal);
        assert_eq!(out.volume, vol);
        assert!(out.report.records.iter().all(|r| r.loss == 0.0));
        let idx: Vec<usize> = out.report.records.iter().map(|r| r.iteration).collect();
        assert_eq!(idx, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn masked_axes_never_move() {
        let (scene, cal, vol) = small_problem();
        let m = forward_gaussian(&cal, &vol, &scene, &crate::forward::all_scans(9)).unwrap();
        let mut start = cal.clone().with_mask(AxisMask::Z);
        for (k, p) in start.scan_positions.iter_mut().enumerate() {
            p.z += 0.01 * ((k % 3) as f64 - 1.0);
            p.x += 0.003;
        }
        let sched = AutocalSchedule { total_iterations: 2, calib_iterations: 5, reconstruction_iterations: 2, scan_subsample_fraction: 0.5, ..Default::default() };
        let out = autocal(&start, &vol, &scene, &m, &sched).unwrap();
        for (a, b) in out.calibration.scan_positions.iter().zip(&start.scan_positions) {
            assert_eq!(a.x, b.x);
            assert_eq!(a.y, b.y);
        }
        assert!(out.calibration.scan_positions.iter().zip(&start.scan_positions).any(|(a, b)| a.z != b.z));
    }

    #[test]
    fn all_axes_masked_with_calibration_is_rejected() {
        let (scene, cal, vol) = small_problem();
        let m = forward_gaussian(&cal, &vol, &scene, &crate::forward::all_scans(9)).unwrap();
        let cal = cal.with_mask(AxisMask::NONE);
        assert!(autocal(&cal, &vol, &scene, &m, &AutocalSchedule::default()).is_err());
        // reconstruction alone is fine
        assert!(reconstruct_only(&cal, &vol, &scene, &m, &AutocalSchedule::reconstruction(2, 1e-3)).is_ok());
    }

    #[test]
    fn batch_size_rules() {
        let s = AutocalSchedule::default();
        assert_eq!(s.batch_size_for(256), 26);
        assert_eq!(s.batch_size_for(4), 1);
        assert_eq!(s.batch_size_for(1), 1);
        let s = AutocalSchedule { batch_size: Some(7), ..Default::default() };
        assert_eq!(s.batch_size_for(100), 7);
        assert!(AutocalSchedule { scan_subsample_fraction: 0.0, ..Default::default() }.validate().is_err());
        assert!(AutocalSchedule { scan_subsample_fraction: 1.5, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn zero_start_moves_albedo_upward_under_projection() {
        let (scene, cal, vol) = small_problem();
        let m = forward_gaussian(&cal, &vol, &scene, &crate::forward::all_scans(9)).unwrap();
        let zero = Volume::zeros(vol.grid.clone());
        let d = gradient::grad_rho_only(&cal, &zero, &scene, &m, &crate::forward::all_scans(9)).unwrap();
        assert!(d.iter().all(|&v| v <= 0.0));
        let mut sched = AutocalSchedule::reconstruction(1, 1e-2);
        sched.nonnegativity_projection = true;
        let (v, _) = reconstruct_only(&cal, &zero, &scene, &m, &sched).unwrap();
        assert!(v.albedo.iter().all(|&a| a >= 0.0));
        assert!(v.albedo.iter().any(|&a| a > 0.0));
    }
}
