//! Transient forward model.
//!
//! Every voxel `o_i` contributes to histogram bin `k` of the pair `(l_j, s_m)`
//!
//! ```text
//! rho_i * exp(-(c t_k - d_i)^2 / sigma^2) / (|l_j - o_i|^2 |s_m - o_i|^2)
//! ```
//!
//! where `d_i` is the three-bounce path length and `sigma` is the impulse
//! width in meters. The sum is evaluated matrix-free, one histogram per
//! (scan, detection) pair, in parallel over pairs.

use crate::error::{Error, Result};
use crate::par;
use crate::types::{CalibrationState, SceneConfig, TransientSet, Vec3, Volume, VolumeGrid};

/// Geometry of one voxel as seen from one (scan, detection) pair.
#[derive(Debug, Clone, Copy)]
pub(crate) struct VoxelPath {
    /// `o - l`
    pub to_scan: Vec3,
    /// `o - s`
    pub to_detect: Vec3,
    pub r_scan: f64,
    pub r_detect: f64,
    /// Total path length, meters.
    pub path: f64,
    /// Inverse-square falloff `1 / (r_scan^2 r_detect^2)`.
    pub falloff: f64,
}

/// Cached geometry for repeated evaluation against a fixed calibration.
///
/// The source-to-scan and detection-to-detector legs do not depend on the
/// voxel and are computed once per construction. Build a new workspace
/// whenever the calibration changes.
#[derive(Debug, Clone)]
pub struct ForwardWorkspace<'a> {
    pub(crate) scene: &'a SceneConfig,
    pub(crate) cal: &'a CalibrationState,
    pub(crate) centers: Vec<Vec3>,
    pub(crate) scan_legs: Vec<f64>,
    pub(crate) detect_legs: Vec<f64>,
    pub(crate) inv_sigma2: f64,
    pub(crate) step: f64,
    pub(crate) first: f64,
    pub(crate) reach: Option<f64>,
}

impl<'a> ForwardWorkspace<'a> {
    pub fn new(scene: &'a SceneConfig, cal: &'a CalibrationState, grid: &VolumeGrid) -> Result<Self> {
        scene.validate()?;
        cal.validate()?;
        grid.validate()?;
        let sigma = scene.sigma_path();
        Ok(ForwardWorkspace {
            scene,
            cal,
            centers: grid.centers(),
            scan_legs: cal
                .scan_positions
                .iter()
                .map(|l| (scene.source_pos - l).norm())
                .collect(),
            detect_legs: cal
                .detection_positions
                .iter()
                .map(|s| (scene.detector_pos - s).norm())
                .collect(),
            inv_sigma2: 1.0 / (sigma * sigma),
            step: scene.bin_path_width(),
            first: scene.first_bin_path(),
            reach: scene.truncation_sigmas.map(|t| t * sigma),
        })
    }

    pub fn voxel_count(&self) -> usize {
        self.centers.len()
    }

    pub fn bin_count(&self) -> usize {
        self.scene.bin_count
    }

    pub(crate) fn voxel_path(&self, scan: usize, detection: usize, voxel: usize) -> Result<VoxelPath> {
        let o = &self.centers[voxel];
        let to_scan = o - self.cal.scan_positions[scan];
        let to_detect = o - self.cal.detection_positions[detection];
        let r_scan = to_scan.norm();
        let r_detect = to_detect.norm();
        let eps = self.scene.min_distance;
        if r_scan <= eps {
            return Err(Error::DegenerateGeometry {
                voxel,
                endpoint: "scan",
                position: scan,
                distance: r_scan,
                epsilon: eps,
            });
        }
        if r_detect <= eps {
            return Err(Error::DegenerateGeometry {
                voxel,
                endpoint: "detection",
                position: detection,
                distance: r_detect,
                epsilon: eps,
            });
        }
        let r2 = (r_scan * r_scan) * (r_detect * r_detect);
        Ok(VoxelPath {
            to_scan,
            to_detect,
            r_scan,
            r_detect,
            // grouped per side so swapping the two sides is bit-exact
            path: (self.scan_legs[scan] + r_scan) + (r_detect + self.detect_legs[detection]),
            falloff: 1.0 / r2,
        })
    }

    /// Half-open range of bins the kernel centred at `path` touches.
    pub(crate) fn window(&self, path: f64) -> (usize, usize) {
        let k = self.scene.bin_count;
        match self.reach {
            None => (0, k),
            Some(reach) => {
                let lo = ((path - reach - self.first) / self.step).ceil();
                let hi = ((path + reach - self.first) / self.step).floor() + 1.0;
                let lo = lo.clamp(0.0, k as f64) as usize;
                let hi = hi.clamp(0.0, k as f64) as usize;
                (lo, hi.max(lo))
            }
        }
    }

    /// Calls `f(k, u_k, g_k)` for every bin in the kernel window of `path`,
    /// with `u_k = c t_k - path` and `g_k = exp(-u_k^2 / sigma^2)`.
    ///
    /// The Gaussian is stepped by a multiplicative recurrence outward from
    /// the bin nearest the peak, so only three `exp` calls are made per voxel.
    #[inline]
    pub(crate) fn for_each_kernel_bin(&self, path: f64, mut f: impl FnMut(usize, f64, f64)) {
        let (lo, hi) = self.window(path);
        if lo >= hi {
            return;
        }
        let step = self.step;
        let s2 = self.inv_sigma2;
        let peak = ((path - self.first) / step).round().clamp(lo as f64, (hi - 1) as f64) as usize;
        let decay = (-2.0 * step * step * s2).exp();

        let u0 = self.first + peak as f64 * step - path;
        let g0 = (-u0 * u0 * s2).exp();
        f(peak, u0, g0);

        // upward: g_{k+1} = g_k exp(-(2 u_k h + h^2) / sigma^2)
        let mut g = g0;
        let mut ratio = (-(2.0 * u0 * step + step * step) * s2).exp();
        for k in peak + 1..hi {
            g *= ratio;
            ratio *= decay;
            f(k, self.first + k as f64 * step - path, g);
        }
        // downward: g_{k-1} = g_k exp((2 u_k h - h^2) / sigma^2)
        let mut g = g0;
        let mut ratio = ((2.0 * u0 * step - step * step) * s2).exp();
        for k in (lo..peak).rev() {
            g *= ratio;
            ratio *= decay;
            f(k, self.first + k as f64 * step - path, g);
        }
    }

    /// Adds the Gaussian model histogram of pair `(scan, detection)` to `out`.
    pub(crate) fn accumulate_histogram(
        &self,
        scan: usize,
        detection: usize,
        albedo: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        for (i, &rho) in albedo.iter().enumerate() {
            let vp = self.voxel_path(scan, detection, i)?;
            if rho == 0.0 {
                continue;
            }
            let w = rho * vp.falloff;
            self.for_each_kernel_bin(vp.path, |k, _, g| out[k] += w * g);
        }
        Ok(())
    }

    /// Model histograms for `scan_subset`, rows in subset order.
    pub fn evaluate(&self, albedo: &[f64], scan_subset: &[usize]) -> Result<TransientSet> {
        if albedo.len() != self.centers.len() {
            return Err(Error::DimensionMismatch {
                context: "albedo length",
                expected: self.centers.len(),
                actual: albedo.len(),
            });
        }
        check_subset(scan_subset, self.cal.scan_count())?;
        let nd = self.cal.detection_count();
        let nk = self.scene.bin_count;
        let mut out = TransientSet::zeros(scan_subset.len(), nd, nk);
        par::try_for_each_chunk(&mut out.data, nk, |pair, hist| {
            let scan = scan_subset[pair / nd];
            self.accumulate_histogram(scan, pair % nd, albedo, hist)
        })?;
        Ok(out)
    }
}

pub(crate) fn check_subset(subset: &[usize], scan_count: usize) -> Result<()> {
    for &j in subset {
        if j >= scan_count {
            return Err(Error::IndexOutOfRange { what: "scan", index: j, len: scan_count });
        }
    }
    Ok(())
}

/// `[0, 1, ..., n-1]`
pub fn all_scans(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Gaussian-relaxed model histograms for the scans in `scan_subset`.
pub fn forward_gaussian(
    cal: &CalibrationState,
    volume: &Volume,
    scene: &SceneConfig,
    scan_subset: &[usize],
) -> Result<TransientSet> {
    volume.validate()?;
    ForwardWorkspace::new(scene, cal, &volume.grid)?.evaluate(&volume.albedo, scan_subset)
}

/// Rectangle-window model: voxel `i` adds `rho_i / (r_l^2 r_s^2)` to the
/// bin `k` with `0 < k - (d_i - c t_0) / (c dt) < 1`.
///
/// A deliberately naive triple loop over (pair, voxel, bin). Only used as an
/// independent reference in tests.
pub fn forward_rect_oracle(
    cal: &CalibrationState,
    volume: &Volume,
    scene: &SceneConfig,
    scan_subset: &[usize],
) -> Result<TransientSet> {
    scene.validate()?;
    cal.validate()?;
    volume.validate()?;
    check_subset(scan_subset, cal.scan_count())?;
    let nd = cal.detection_count();
    let nk = scene.bin_count;
    let c = scene.speed_of_light;
    let eps = scene.min_distance;
    let mut out = TransientSet::zeros(scan_subset.len(), nd, nk);
    for (row, &j) in scan_subset.iter().enumerate() {
        let l = cal.scan_positions[j];
        for (m, s) in cal.detection_positions.iter().enumerate() {
            let hist = out.histogram_mut(row, m);
            for (i, &rho) in volume.albedo.iter().enumerate() {
                let o = volume.grid.voxel_center(i)?;
                let rl = (l - o).norm();
                let rs = (s - o).norm();
                if rl <= eps || rs <= eps {
                    return Err(Error::DegenerateGeometry {
                        voxel: i,
                        endpoint: if rl <= eps { "scan" } else { "detection" },
                        position: if rl <= eps { j } else { m },
                        distance: rl.min(rs),
                        epsilon: eps,
                    });
                }
                let d = crate::types::total_path_length(&l, s, &o, scene)?;
                let x = (d - c * scene.time_offset) / (c * scene.bin_width);
                for (k, h) in hist.iter_mut().enumerate() {
                    let arg = k as f64 - x;
                    if arg > 0.0 && arg < 1.0 {
                        *h += rho / (rl * rl * rs * rs);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Sum of squared residuals between the model and `measured` over `scan_subset`.
pub fn loss(
    cal: &CalibrationState,
    volume: &Volume,
    scene: &SceneConfig,
    measured: &TransientSet,
    scan_subset: &[usize],
) -> Result<f64> {
    measured.check_matches(cal, scene)?;
    let model = forward_gaussian(cal, volume, scene, scan_subset)?;
    Ok(subset_loss(&model, measured, scan_subset))
}

/// `sum (model - measured)^2` where `model` rows follow `scan_subset`.
pub(crate) fn subset_loss(model: &TransientSet, measured: &TransientSet, scan_subset: &[usize]) -> f64 {
    let nd = model.detection_count;
    let mut total = 0.0;
    for (row, &j) in scan_subset.iter().enumerate() {
        for m in 0..nd {
            total += model
                .histogram(row, m)
                .iter()
                .zip(measured.histogram(j, m))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
    }
    total
}
