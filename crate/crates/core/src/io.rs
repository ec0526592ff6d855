//! On-disk dataset layout.
//!
//! A dataset is a directory holding
//!
//! * `scene.json`: instrument, calibration estimate and volume geometry;
//! * `transients.f32`: little-endian `f32`, `[scan][detection][bin]` order;
//! * `volume.f32` (optional): little-endian `f32` albedo, x-fastest;
//! * `ground_truth.json` (optional): true calibration.
//!
//! Run outputs add `report.json` and `volume_iterNNN.f32` snapshots.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CalibrationState, OptimizationReport, SceneConfig, TransientSet, Volume, VolumeGrid};

pub const SCENE_FILE: &str = "scene.json";
pub const TRANSIENTS_FILE: &str = "transients.f32";
pub const VOLUME_FILE: &str = "volume.f32";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SceneFile {
    scene: SceneConfig,
    calibration: CalibrationState,
    volume: VolumeGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scene: SceneConfig,
    pub calibration: CalibrationState,
    pub volume_grid: VolumeGrid,
    pub transients: TransientSet,
    pub volume: Option<Volume>,
    pub ground_truth: Option<CalibrationState>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.calibration.validate()?;
        self.volume_grid.validate()?;
        self.transients.validate()?;
        self.transients.check_matches(&self.calibration, &self.scene)?;
        if let Some(v) = &self.volume {
            v.validate()?;
            if v.grid != self.volume_grid {
                return Err(Error::invariant("volume", "albedo grid differs from scene.json volume"));
            }
        }
        if let Some(t) = &self.ground_truth {
            t.validate()?;
            if t.scan_count() != self.calibration.scan_count() {
                return Err(Error::DimensionMismatch {
                    context: "ground-truth scan count",
                    expected: self.calibration.scan_count(),
                    actual: t.scan_count(),
                });
            }
        }
        Ok(())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.is_file() {
        return Err(Error::MissingFile { path: path.to_path_buf() });
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// Writes values as little-endian `f32`.
pub fn write_f32(path: &Path, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(4 * values.len());
    for v in values {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&buf).map_err(io_err(path))
}

/// Reads exactly `expected_len` little-endian `f32` values.
pub fn read_f32(path: &Path, expected_len: usize) -> Result<Vec<f64>> {
    if !path.is_file() {
        return Err(Error::MissingFile { path: path.to_path_buf() });
    }
    let bytes = fs::read(path).map_err(io_err(path))?;
    let expected = 4 * expected_len as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch { path: path.to_path_buf(), expected, actual: bytes.len() as u64 });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta: SceneFile = read_json(&dir.join(SCENE_FILE))?;
    meta.scene.validate()?;
    meta.calibration.validate()?;
    meta.volume.validate()?;
    let (np, nd, nk) = (meta.calibration.scan_count(), meta.calibration.detection_count(), meta.scene.bin_count);
    let data = read_f32(&dir.join(TRANSIENTS_FILE), np * nd * nk)?;
    let transients = TransientSet::from_data(np, nd, nk, data)?;

    let vol_path = dir.join(VOLUME_FILE);
    let volume = if vol_path.exists() {
        let albedo = read_f32(&vol_path, meta.volume.voxel_count())?;
        Some(Volume::from_albedo(meta.volume.clone(), albedo)?)
    } else {
        None
    };
    let gt_path = dir.join(GROUND_TRUTH_FILE);
    let ground_truth = if gt_path.exists() { Some(read_json(&gt_path)?) } else { None };

    let ds = Dataset {
        scene: meta.scene,
        calibration: meta.calibration,
        volume_grid: meta.volume,
        transients,
        volume,
        ground_truth,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_json(
        &dir.join(SCENE_FILE),
        &SceneFile { scene: ds.scene.clone(), calibration: ds.calibration.clone(), volume: ds.volume_grid.clone() },
    )?;
    write_f32(&dir.join(TRANSIENTS_FILE), &ds.transients.data)?;
    if let Some(v) = &ds.volume {
        write_f32(&dir.join(VOLUME_FILE), &v.albedo)?;
    }
    if let Some(t) = &ds.ground_truth {
        write_json(&dir.join(GROUND_TRUTH_FILE), t)?;
    }
    Ok(())
}

/// Path of the volume snapshot taken after `iteration`.
pub fn snapshot_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join(format!("volume_iter{iteration:03}.f32"))
}

/// Writes `report.json`, the final volume and any volume snapshots.
pub fn write_report(dir: &Path, report: &OptimizationReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_json(&dir.join(REPORT_FILE), report)?;
    for snap in &report.snapshots {
        if let Some(v) = &snap.volume {
            write_f32(&snapshot_path(dir, snap.after_iteration), &v.albedo)?;
        }
    }
    if let Some(v) = &report.final_volume {
        write_f32(&dir.join(VOLUME_FILE), &v.albedo)?;
    }
    Ok(())
}

pub fn read_report(dir: &Path) -> Result<OptimizationReport> {
    read_json(&dir.join(REPORT_FILE))
}

/// Writes a CSV file with a header row.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Per-scan delay, in bins, of the instrument-to-wall legs of a confocal
/// record: `round((|i - l_j| + |d - l_j|) / (c dt) + offset)`, with
/// `offset = 0.5` when `half_bin` is set.
pub fn confocal_shifts(cal: &CalibrationState, scene: &SceneConfig, half_bin: bool) -> Vec<i64> {
    let step = scene.bin_path_width();
    let offset = if half_bin { 0.5 } else { 0.0 };
    cal.scan_positions
        .iter()
        .map(|l| (((scene.source_pos - l).norm() + (scene.detector_pos - l).norm()) / step + offset).round() as i64)
        .collect()
}

/// Delays every histogram of scan `j` by `shifts[j]` bins (negative values
/// advance it). Bins shifted past either end are dropped; vacated bins are zero.
pub fn shift_histograms(t: &TransientSet, shifts: &[i64]) -> Result<TransientSet> {
    if shifts.len() != t.scan_count {
        return Err(Error::DimensionMismatch { context: "shift count", expected: t.scan_count, actual: shifts.len() });
    }
    let nk = t.bin_count as i64;
    let mut out = TransientSet::zeros(t.scan_count, t.detection_count, t.bin_count);
    for (j, &shift) in shifts.iter().enumerate() {
        if shift.abs() >= nk {
            return Err(Error::invariant(
                "shift",
                format!("scan {j} needs a {shift}-bin shift but histograms hold {nk} bins"),
            ));
        }
        for m in 0..t.detection_count {
            let src = t.histogram(j, m);
            let dst = out.histogram_mut(j, m);
            for (k, &v) in src.iter().enumerate() {
                let to = k as i64 + shift;
                if (0..nk).contains(&to) {
                    dst[to as usize] = v;
                }
            }
        }
    }
    Ok(out)
}

/// Converts rectified confocal histograms (time zero at the wall) into
/// histograms timed from the virtual source and detector in `scene`.
pub fn unrectify_confocal(
    rectified: &TransientSet,
    cal: &CalibrationState,
    scene: &SceneConfig,
    half_bin: bool,
) -> Result<TransientSet> {
    scene.validate()?;
    cal.validate()?;
    if rectified.scan_count != cal.scan_count() {
        return Err(Error::DimensionMismatch {
            context: "confocal scan count",
            expected: cal.scan_count(),
            actual: rectified.scan_count,
        });
    }
    shift_histograms(rectified, &confocal_shifts(cal, scene, half_bin))
}

/// Inverse of [`unrectify_confocal`] up to dropped bins.
pub fn rectify_confocal(
    unrectified: &TransientSet,
    cal: &CalibrationState,
    scene: &SceneConfig,
    half_bin: bool,
) -> Result<TransientSet> {
    let shifts: Vec<i64> = confocal_shifts(cal, scene, half_bin).into_iter().map(|s| -s).collect();
    shift_histograms(unrectified, &shifts)
}
