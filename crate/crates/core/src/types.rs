//! Shared domain types: instrument geometry, calibration estimates, voxel
//! volumes, transient histograms and optimization reports.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Which instant of a time bin is taken as its nominal arrival time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinConvention {
    /// `t_k = (k + 0.5) * bin_width + time_offset`
    #[default]
    Center,
    /// `t_k = k * bin_width + time_offset`, the literal `c Δt k` form.
    LeftEdge,
}

fn default_speed_of_light() -> f64 {
    SPEED_OF_LIGHT
}

fn default_truncation() -> Option<f64> {
    Some(5.0)
}

fn default_min_distance() -> f64 {
    1e-9
}

/// Instrument geometry and timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Laser source position `i`, meters.
    pub source_pos: Vec3,
    /// Detector position `d`, meters.
    pub detector_pos: Vec3,
    /// Time bin width, seconds.
    pub bin_width: f64,
    pub bin_count: usize,
    /// Global shift added to every bin time, seconds.
    #[serde(default)]
    pub time_offset: f64,
    /// Width of the Gaussian impulse, seconds.
    pub gaussian_sigma: f64,
    #[serde(default = "default_speed_of_light")]
    pub speed_of_light: f64,
    #[serde(default)]
    pub bin_convention: BinConvention,
    /// Kernel support in units of sigma; `None` evaluates every bin.
    #[serde(default = "default_truncation")]
    pub truncation_sigmas: Option<f64>,
    /// Voxel-to-wall distances below this are rejected, meters.
    #[serde(default = "default_min_distance")]
    pub min_distance: f64,
}

impl SceneConfig {
    /// Scene with zero time offset and `gaussian_sigma = 2 * bin_width`.
    pub fn new(source_pos: Vec3, detector_pos: Vec3, bin_width: f64, bin_count: usize) -> Self {
        SceneConfig {
            source_pos,
            detector_pos,
            bin_width,
            bin_count,
            time_offset: 0.0,
            gaussian_sigma: 2.0 * bin_width,
            speed_of_light: SPEED_OF_LIGHT,
            bin_convention: BinConvention::Center,
            truncation_sigmas: default_truncation(),
            min_distance: default_min_distance(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bin_width > 0.0 && self.bin_width.is_finite()) {
            return Err(Error::invariant("bin_width", format!("must be > 0, got {}", self.bin_width)));
        }
        if self.bin_count == 0 {
            return Err(Error::invariant("bin_count", "must be >= 1"));
        }
        if !(self.gaussian_sigma > 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(Error::invariant(
                "gaussian_sigma",
                format!("must be > 0, got {}", self.gaussian_sigma),
            ));
        }
        if !(self.speed_of_light > 0.0 && self.speed_of_light.is_finite()) {
            return Err(Error::invariant(
                "speed_of_light",
                format!("must be > 0, got {}", self.speed_of_light),
            ));
        }
        if !self.time_offset.is_finite() {
            return Err(Error::invariant("time_offset", "must be finite"));
        }
        if !(self.min_distance >= 0.0 && self.min_distance.is_finite()) {
            return Err(Error::invariant("min_distance", "must be finite and >= 0"));
        }
        if let Some(t) = self.truncation_sigmas {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::invariant("truncation_sigmas", "must be finite and > 0 when set"));
            }
        }
        if !finite3(&self.source_pos) {
            return Err(Error::invariant("source_pos", "must be finite"));
        }
        if !finite3(&self.detector_pos) {
            return Err(Error::invariant("detector_pos", "must be finite"));
        }
        Ok(())
    }

    /// Gaussian width expressed as a path length, meters.
    pub fn sigma_path(&self) -> f64 {
        self.speed_of_light * self.gaussian_sigma
    }

    /// Path length covered by one bin, meters.
    pub fn bin_path_width(&self) -> f64 {
        self.speed_of_light * self.bin_width
    }

    /// Nominal path length of bin 0, meters.
    pub fn first_bin_path(&self) -> f64 {
        let lead = match self.bin_convention {
            BinConvention::Center => 0.5 * self.bin_width,
            BinConvention::LeftEdge => 0.0,
        };
        self.speed_of_light * (lead + self.time_offset)
    }

    /// Nominal path length `c * t_k` of bin `k`, meters.
    pub fn bin_path(&self, k: usize) -> f64 {
        self.first_bin_path() + k as f64 * self.bin_path_width()
    }

    /// Bin whose nominal path length is closest to `path`, if recorded.
    pub fn nearest_bin(&self, path: f64) -> Option<usize> {
        let x = ((path - self.first_bin_path()) / self.bin_path_width()).round();
        if x >= 0.0 && x < self.bin_count as f64 {
            Some(x as usize)
        } else {
            None
        }
    }
}

/// Per-axis switch applied to position gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisMask {
    pub x: bool,
    pub y: bool,
    pub z: bool,
}

impl AxisMask {
    pub const ALL: AxisMask = AxisMask { x: true, y: true, z: true };
    pub const NONE: AxisMask = AxisMask { x: false, y: false, z: false };
    pub const Z: AxisMask = AxisMask { x: false, y: false, z: true };

    pub fn any(&self) -> bool {
        self.x || self.y || self.z
    }

    pub fn as_array(&self) -> [bool; 3] {
        [self.x, self.y, self.z]
    }

    /// Zeroes the disabled components of `v`.
    pub fn apply(&self, v: &Vec3) -> Vec3 {
        Vec3::new(
            if self.x { v.x } else { 0.0 },
            if self.y { v.y } else { 0.0 },
            if self.z { v.z } else { 0.0 },
        )
    }
}

impl Default for AxisMask {
    fn default() -> Self {
        AxisMask::ALL
    }
}

impl fmt::Display for AxisMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.any() {
            return f.write_str("none");
        }
        for (on, c) in [(self.x, 'x'), (self.y, 'y'), (self.z, 'z')] {
            if on {
                write!(f, "{c}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for AxisMask {
    type Err = Error;

    /// Accepts axis letters (`"z"`, `"xz"`, `"xyz"`), `"none"`, or three
    /// binary digits in z-y-x order (`"100"` is z only).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "none" {
            return Ok(AxisMask::NONE);
        }
        if s.len() == 3 && s.chars().all(|c| c == '0' || c == '1') {
            let b: Vec<bool> = s.chars().map(|c| c == '1').collect();
            return Ok(AxisMask { z: b[0], y: b[1], x: b[2] });
        }
        let mut mask = AxisMask::NONE;
        for c in s.chars() {
            match c {
                'x' => mask.x = true,
                'y' => mask.y = true,
                'z' => mask.z = true,
                _ => {
                    return Err(Error::UnknownName {
                        what: "axis mask",
                        name: s.clone(),
                    })
                }
            }
        }
        if s.is_empty() {
            return Err(Error::UnknownName { what: "axis mask", name: s });
        }
        Ok(mask)
    }
}

/// Current estimates of the relay-wall scan and detection positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationState {
    pub scan_positions: Vec<Vec3>,
    pub detection_positions: Vec<Vec3>,
    #[serde(default)]
    pub update_mask: AxisMask,
}

impl CalibrationState {
    pub fn new(scan_positions: Vec<Vec3>, detection_positions: Vec<Vec3>) -> Self {
        CalibrationState {
            scan_positions,
            detection_positions,
            update_mask: AxisMask::ALL,
        }
    }

    pub fn with_mask(mut self, mask: AxisMask) -> Self {
        self.update_mask = mask;
        self
    }

    pub fn scan_count(&self) -> usize {
        self.scan_positions.len()
    }

    pub fn detection_count(&self) -> usize {
        self.detection_positions.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.scan_positions.is_empty() {
            return Err(Error::invariant("scan_positions", "must not be empty"));
        }
        if self.detection_positions.is_empty() {
            return Err(Error::invariant("detection_positions", "must not be empty"));
        }
        if !self.scan_positions.iter().all(finite3) {
            return Err(Error::invariant("scan_positions", "all coordinates must be finite"));
        }
        if !self.detection_positions.iter().all(finite3) {
            return Err(Error::invariant(
                "detection_positions",
                "all coordinates must be finite",
            ));
        }
        Ok(())
    }
}

/// Axis-aligned voxel lattice without albedo values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeGrid {
    /// Corner of voxel (0, 0, 0), meters.
    pub origin: Vec3,
    /// Voxel edge lengths, meters.
    pub voxel_pitch: Vec3,
    pub dims: [usize; 3],
}

impl VolumeGrid {
    pub fn new(origin: Vec3, voxel_pitch: Vec3, dims: [usize; 3]) -> Self {
        VolumeGrid { origin, voxel_pitch, dims }
    }

    /// Cubic grid of `n^3` voxels of edge `pitch` centred at `center`.
    pub fn cube(center: Vec3, pitch: f64, n: usize) -> Self {
        let half = 0.5 * pitch * n as f64;
        VolumeGrid {
            origin: center - Vec3::repeat(half),
            voxel_pitch: Vec3::repeat(pitch),
            dims: [n, n, n],
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::invariant("dims", "all dimensions must be >= 1"));
        }
        if !self.voxel_pitch.iter().all(|&p| p > 0.0 && p.is_finite()) {
            return Err(Error::invariant("voxel_pitch", "all components must be > 0"));
        }
        if !finite3(&self.origin) {
            return Err(Error::invariant("origin", "must be finite"));
        }
        Ok(())
    }

    /// Splits a flat x-fastest index into `(ix, iy, iz)`.
    pub fn unflatten(&self, flat: usize) -> Result<[usize; 3]> {
        let n = self.voxel_count();
        if flat >= n {
            return Err(Error::IndexOutOfRange { what: "voxel", index: flat, len: n });
        }
        let [nx, ny, _] = self.dims;
        Ok([flat % nx, (flat / nx) % ny, flat / (nx * ny)])
    }

    pub fn flatten(&self, idx: [usize; 3]) -> Result<usize> {
        for (&i, &n) in idx.iter().zip(&self.dims) {
            if i >= n {
                return Err(Error::IndexOutOfRange { what: "voxel axis", index: i, len: n });
            }
        }
        let [nx, ny, _] = self.dims;
        Ok(idx[0] + nx * (idx[1] + ny * idx[2]))
    }

    pub fn voxel_center(&self, flat: usize) -> Result<Vec3> {
        let idx = self.unflatten(flat)?;
        Ok(self.center_of(idx))
    }

    fn center_of(&self, idx: [usize; 3]) -> Vec3 {
        Vec3::new(
            self.origin.x + (idx[0] as f64 + 0.5) * self.voxel_pitch.x,
            self.origin.y + (idx[1] as f64 + 0.5) * self.voxel_pitch.y,
            self.origin.z + (idx[2] as f64 + 0.5) * self.voxel_pitch.z,
        )
    }

    /// All voxel centers in flat-index order.
    pub fn centers(&self) -> Vec<Vec3> {
        let [nx, ny, nz] = self.dims;
        let mut out = Vec::with_capacity(self.voxel_count());
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    out.push(self.center_of([ix, iy, iz]));
                }
            }
        }
        out
    }
}

/// Voxel grid with one albedo value per voxel, stored x-fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Volume {
    pub grid: VolumeGrid,
    pub albedo: Vec<f64>,
}

impl Volume {
    pub fn zeros(grid: VolumeGrid) -> Self {
        let n = grid.voxel_count();
        Volume { grid, albedo: vec![0.0; n] }
    }

    pub fn from_albedo(grid: VolumeGrid, albedo: Vec<f64>) -> Result<Self> {
        let v = Volume { grid, albedo };
        v.validate()?;
        Ok(v)
    }

    pub fn voxel_count(&self) -> usize {
        self.albedo.len()
    }

    pub fn voxel_center(&self, flat: usize) -> Result<Vec3> {
        self.grid.voxel_center(flat)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.albedo.len() != self.grid.voxel_count() {
            return Err(Error::DimensionMismatch {
                context: "volume albedo",
                expected: self.grid.voxel_count(),
                actual: self.albedo.len(),
            });
        }
        if !self.albedo.iter().all(|a| a.is_finite()) {
            return Err(Error::invariant("albedo", "all values must be finite"));
        }
        Ok(())
    }
}

/// Histograms indexed `[scan][detection][bin]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransientSet {
    pub scan_count: usize,
    pub detection_count: usize,
    pub bin_count: usize,
    pub data: Vec<f64>,
}

impl TransientSet {
    pub fn zeros(scan_count: usize, detection_count: usize, bin_count: usize) -> Self {
        TransientSet {
            scan_count,
            detection_count,
            bin_count,
            data: vec![0.0; scan_count * detection_count * bin_count],
        }
    }

    pub fn from_data(
        scan_count: usize,
        detection_count: usize,
        bin_count: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        let t = TransientSet { scan_count, detection_count, bin_count, data };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.scan_count * self.detection_count * self.bin_count;
        if self.data.len() != n {
            return Err(Error::DimensionMismatch {
                context: "transient data",
                expected: n,
                actual: self.data.len(),
            });
        }
        if !self.data.iter().all(|v| v.is_finite()) {
            return Err(Error::invariant("transients", "all values must be finite"));
        }
        Ok(())
    }

    fn offset(&self, scan: usize, detection: usize) -> usize {
        (scan * self.detection_count + detection) * self.bin_count
    }

    pub fn histogram(&self, scan: usize, detection: usize) -> &[f64] {
        let o = self.offset(scan, detection);
        &self.data[o..o + self.bin_count]
    }

    pub fn histogram_mut(&mut self, scan: usize, detection: usize) -> &mut [f64] {
        let o = self.offset(scan, detection);
        let n = self.bin_count;
        &mut self.data[o..o + n]
    }

    pub fn get(&self, scan: usize, detection: usize, bin: usize) -> f64 {
        self.data[self.offset(scan, detection) + bin]
    }

    /// Checks that this set has one histogram per (scan, detection) of `cal`.
    pub fn check_matches(&self, cal: &CalibrationState, scene: &SceneConfig) -> Result<()> {
        if self.scan_count != cal.scan_count() {
            return Err(Error::DimensionMismatch {
                context: "transient scan count",
                expected: cal.scan_count(),
                actual: self.scan_count,
            });
        }
        if self.detection_count != cal.detection_count() {
            return Err(Error::DimensionMismatch {
                context: "transient detection count",
                expected: cal.detection_count(),
                actual: self.detection_count,
            });
        }
        if self.bin_count != scene.bin_count {
            return Err(Error::DimensionMismatch {
                context: "transient bin count",
                expected: scene.bin_count,
                actual: self.bin_count,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Calibration,
    Reconstruction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub phase: Phase,
    /// Loss over the scans drawn for this iteration, before the update.
    pub loss: f64,
    /// Number of scans in the batch.
    pub batch_size: usize,
    /// z-axis scan-position RMSE against ground truth, meters.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub scan_rmse: Option<f64>,
}

/// Calibration estimate captured at the end of an outer repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub after_iteration: usize,
    pub calibration: CalibrationState,
    #[serde(skip)]
    pub volume: Option<Volume>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    /// Free-form run provenance (flags, seeds, input paths).
    #[serde(default)]
    pub provenance: BTreeMap<String, serde_json::Value>,
    pub records: Vec<IterationRecord>,
    #[serde(default)]
    pub snapshots: Vec<Snapshot>,
    pub final_calibration: Option<CalibrationState>,
    #[serde(skip)]
    pub final_volume: Option<Volume>,
}

impl OptimizationReport {
    pub fn next_iteration(&self) -> usize {
        self.records.last().map_or(0, |r| r.iteration + 1)
    }

    pub fn push(&mut self, record: IterationRecord) -> Result<()> {
        if !record.loss.is_finite() {
            return Err(Error::NonFinite { block: "loss" });
        }
        if let Some(last) = self.records.last() {
            if record.iteration <= last.iteration {
                return Err(Error::invariant(
                    "iteration",
                    format!("{} does not follow {}", record.iteration, last.iteration),
                ));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }
}

/// Total three-bounce path `|l-o| + |s-o| + |i-l| + |d-s|`, meters.
pub fn total_path_length(l: &Vec3, s: &Vec3, o: &Vec3, scene: &SceneConfig) -> Result<f64> {
    if ![l, s, o].iter().all(|v| finite3(v)) {
        return Err(Error::NonFinite { block: "path endpoints" });
    }
    Ok(((scene.source_pos - l).norm() + (l - o).norm()) + ((s - o).norm() + (scene.detector_pos - s).norm()))
}

pub(crate) fn finite3(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_scene() -> SceneConfig {
        SceneConfig::new(Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 0.0, 1.0), 1e-10, 64)
    }

    #[test]
    fn voxel_center_unit_grid() {
        let g = VolumeGrid::new(Vec3::zeros(), Vec3::repeat(1.0), [2, 2, 2]);
        assert_eq!(g.voxel_center(0).unwrap(), Vec3::new(0.5, 0.5, 0.5));
        assert_eq!(g.voxel_center(7).unwrap(), Vec3::new(1.5, 1.5, 1.5));
        assert!(matches!(g.voxel_center(8), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn voxel_center_full_scale_grid() {
        let g = VolumeGrid::new(Vec3::new(-0.64, -0.64, 1.0), Vec3::repeat(0.04), [32, 32, 32]);
        let c = g.voxel_center(0).unwrap();
        assert_relative_eq!(c, Vec3::new(-0.62, -0.62, 1.02), epsilon = 1e-12);
    }

    #[test]
    fn flat_index_round_trip() {
        let g = VolumeGrid::new(Vec3::zeros(), Vec3::new(0.1, 0.2, 0.3), [5, 3, 4]);
        for flat in 0..g.voxel_count() {
            let idx = g.unflatten(flat).unwrap();
            assert_eq!(g.flatten(idx).unwrap(), flat);
        }
        let centers = g.centers();
        for (i, c) in centers.iter().enumerate() {
            assert_eq!(*c, g.voxel_center(i).unwrap());
        }
    }

    #[test]
    fn path_length_examples() {
        let scene = unit_scene();
        let z = Vec3::zeros();
        let d = total_path_length(&z, &z, &Vec3::new(0.0, 1.0, 0.0), &scene).unwrap();
        assert_eq!(d, 4.0);

        let mut degenerate = scene.clone();
        degenerate.source_pos = Vec3::zeros();
        degenerate.detector_pos = Vec3::zeros();
        assert_eq!(total_path_length(&z, &z, &z, &degenerate).unwrap(), 0.0);

        let mut s2 = scene.clone();
        s2.source_pos = Vec3::new(0.0, 0.0, 2.0);
        s2.detector_pos = Vec3::new(1.0, 0.0, 2.0);
        let d = total_path_length(
            &Vec3::new(0.0, 0.0, 0.0),
            &Vec3::new(1.0, 0.0, 0.0),
            &Vec3::new(0.5, 1.0, 0.0),
            &s2,
        )
        .unwrap();
        assert_relative_eq!(d, 2.0 * 1.25f64.sqrt() + 4.0, epsilon = 1e-12);
        assert_relative_eq!(d, 6.2361, epsilon = 1e-4);
    }

    #[test]
    fn path_length_rejects_nan() {
        let scene = unit_scene();
        let z = Vec3::zeros();
        let bad = Vec3::new(f64::NAN, 0.0, 0.0);
        assert!(total_path_length(&bad, &z, &z, &scene).is_err());
    }

    #[test]
    fn scene_validation_names_field() {
        let mut s = unit_scene();
        s.bin_width = 0.0;
        match s.validate() {
            Err(Error::Invariant { field, .. }) => assert_eq!(field, "bin_width"),
            other => panic!("unexpected {other:?}"),
        }
        let mut s = unit_scene();
        s.gaussian_sigma = -1.0;
        assert!(s.validate().is_err());
        let mut s = unit_scene();
        s.bin_count = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn bin_conventions() {
        let mut s = unit_scene();
        s.speed_of_light = 1.0;
        s.bin_width = 0.25;
        assert_eq!(s.bin_path(0), 0.125);
        assert_eq!(s.bin_path(4), 1.125);
        s.bin_convention = BinConvention::LeftEdge;
        assert_eq!(s.bin_path(4), 1.0);
        assert_eq!(s.nearest_bin(1.1), Some(4));
        assert_eq!(s.nearest_bin(-1.0), None);
    }

    #[test]
    fn axis_mask_parsing() {
        assert_eq!("z".parse::<AxisMask>().unwrap(), AxisMask::Z);
        assert_eq!("xyz".parse::<AxisMask>().unwrap(), AxisMask::ALL);
        assert_eq!("100".parse::<AxisMask>().unwrap(), AxisMask::Z);
        assert_eq!("001".parse::<AxisMask>().unwrap(), AxisMask { x: true, y: false, z: false });
        assert!("q".parse::<AxisMask>().is_err());
        assert_eq!(AxisMask::Z.to_string(), "z");
        let v = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(AxisMask::Z.apply(&v), Vec3::new(0.0, 0.0, 3.0));
    }

    #[test]
    fn report_rejects_non_increasing_iterations() {
        let mut r = OptimizationReport::default();
        let rec = |i| IterationRecord {
            iteration: i,
            phase: Phase::Reconstruction,
            loss: 1.0,
            batch_size: 1,
            scan_rmse: None,
        };
        r.push(rec(0)).unwrap();
        r.push(rec(1)).unwrap();
        assert!(r.push(rec(1)).is_err());
        let mut bad = rec(2);
        bad.loss = f64::NAN;
        assert!(r.push(bad).is_err());
    }
}
