//! Closed-form gradients of the least-squares loss.
//!
//! With residual `r_k = I_k - m_k`, kernel `g = exp(-u^2/sigma^2)` where
//! `u = c t_k - d`, and falloff `f = 1/(|l-o|^2 |s-o|^2)`:
//!
//! ```text
//! dL/drho_i = sum_k 2 r_k g_ik f_i
//! dL/dl     = sum_i 2 rho_i f_i [ H_i dd/dl + 2 G_i (o_i - l) / |l-o_i|^2 ]
//! G_i = sum_k r_k g_ik        H_i = sum_k r_k g_ik 2 u_ik / sigma^2
//! dd/dl = (l - o_i)/|l - o_i| + (l - i)/|l - i|
//! ```
//!
//! and symmetrically for `s` with the detector `d`. The albedo block is
//! gathered per voxel and the position blocks per (scan, detection) pair, so
//! every sum runs in a fixed order and results do not depend on the number
//! of worker threads.

use crate::error::{Error, Result};
use crate::forward::{check_subset, subset_loss, ForwardWorkspace};
use crate::par;
use crate::types::{CalibrationState, SceneConfig, TransientSet, Vec3, Volume};

/// Loss value and its gradient with respect to every parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub loss: f64,
    pub d_rho: Vec<f64>,
    pub d_scan: Vec<Vec3>,
    pub d_detect: Vec<Vec3>,
}

impl GradientBundle {
    pub fn is_finite(&self) -> bool {
        self.loss.is_finite()
            && self.d_rho.iter().all(|v| v.is_finite())
            && self.d_scan.iter().chain(&self.d_detect).all(|v| v.iter().all(|c| c.is_finite()))
    }
}

/// Which gradient blocks to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Blocks {
    pub albedo: bool,
    pub positions: bool,
}

impl Blocks {
    pub const ALL: Blocks = Blocks { albedo: true, positions: true };
    pub const ALBEDO: Blocks = Blocks { albedo: true, positions: false };
    pub const POSITIONS: Blocks = Blocks { albedo: false, positions: true };
}

/// Gradients of the loss over `scan_subset` with respect to albedo, scan
/// positions and detection positions. Masked position axes are zero.
pub fn grad_loss(
    cal: &CalibrationState,
    volume: &Volume,
    scene: &SceneConfig,
    measured: &TransientSet,
    scan_subset: &[usize],
) -> Result<GradientBundle> {
    compute(cal, volume, scene, measured, scan_subset, Blocks::ALL)
}

/// The albedo block of [`grad_loss`] alone.
pub fn grad_rho_only(
    cal: &CalibrationState,
    volume: &Volume,
    scene: &SceneConfig,
    measured: &TransientSet,
    scan_subset: &[usize],
) -> Result<Vec<f64>> {
    Ok(compute(cal, volume, scene, measured, scan_subset, Blocks::ALBEDO)?.d_rho)
}

/// Computes the requested blocks; skipped blocks are returned as zeros.
pub fn compute(
    cal: &CalibrationState,
    volume: &Volume,
    scene: &SceneConfig,
    measured: &TransientSet,
    scan_subset: &[usize],
    blocks: Blocks,
) -> Result<GradientBundle> {
    volume.validate()?;
    measured.check_matches(cal, scene)?;
    check_subset(scan_subset, cal.scan_count())?;
    let ws = ForwardWorkspace::new(scene, cal, &volume.grid)?;

    let mut residual = ws.evaluate(&volume.albedo, scan_subset)?;
    let loss = subset_loss(&residual, measured, scan_subset);
    let nd = cal.detection_count();
    for (row, &j) in scan_subset.iter().enumerate() {
        for m in 0..nd {
            let meas = measured.histogram(j, m);
            for (r, y) in residual.histogram_mut(row, m).iter_mut().zip(meas) {
                *r -= y;
            }
        }
    }

    let d_rho = if blocks.albedo {
        albedo_gradient(&ws, &residual, scan_subset)?
    } else {
        vec![0.0; volume.voxel_count()]
    };

    let mut d_scan = vec![Vec3::zeros(); cal.scan_count()];
    let mut d_detect = vec![Vec3::zeros(); nd];
    if blocks.positions {
        let per_pair = par::try_map(scan_subset.len() * nd, |pair| {
            let row = pair / nd;
            let m = pair % nd;
            pair_position_gradient(&ws, &volume.albedo, residual.histogram(row, m), scan_subset[row], m)
        })?;
        for (pair, (dl, ds)) in per_pair.into_iter().enumerate() {
            d_scan[scan_subset[pair / nd]] += dl;
            d_detect[pair % nd] += ds;
        }
        let mask = cal.update_mask;
        for v in d_scan.iter_mut().chain(d_detect.iter_mut()) {
            *v = mask.apply(v);
        }
    }

    let bundle = GradientBundle { loss, d_rho, d_scan, d_detect };
    if !bundle.is_finite() {
        return Err(Error::NonFinite { block: "gradient" });
    }
    Ok(bundle)
}

fn albedo_gradient(ws: &ForwardWorkspace<'_>, residual: &TransientSet, scan_subset: &[usize]) -> Result<Vec<f64>> {
    let nd = residual.detection_count;
    par::try_map(ws.voxel_count(), |i| {
        let mut acc = 0.0;
        for (row, &j) in scan_subset.iter().enumerate() {
            for m in 0..nd {
                let vp = ws.voxel_path(j, m, i)?;
                let r = residual.histogram(row, m);
                let mut g_sum = 0.0;
                ws.for_each_kernel_bin(vp.path, |k, _, g| g_sum += r[k] * g);
                acc += 2.0 * vp.falloff * g_sum;
            }
        }
        Ok(acc)
    })
}

fn unit_or_zero(v: Vec3) -> Vec3 {
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        Vec3::zeros()
    }
}

fn pair_position_gradient(
    ws: &ForwardWorkspace<'_>,
    albedo: &[f64],
    residual: &[f64],
    scan: usize,
    detection: usize,
) -> Result<(Vec3, Vec3)> {
    let l = ws.cal.scan_positions[scan];
    let s = ws.cal.detection_positions[detection];
    let scan_leg_dir = unit_or_zero(l - ws.scene.source_pos);
    let detect_leg_dir = unit_or_zero(s - ws.scene.detector_pos);
    let two_inv_s2 = 2.0 * ws.inv_sigma2;

    let mut dl = Vec3::zeros();
    let mut ds = Vec3::zeros();
    for (i, &rho) in albedo.iter().enumerate() {
        let vp = ws.voxel_path(scan, detection, i)?;
        if rho == 0.0 {
            continue;
        }
        let mut g_sum = 0.0;
        let mut h_sum = 0.0;
        ws.for_each_kernel_bin(vp.path, |k, u, g| {
            let rg = residual[k] * g;
            g_sum += rg;
            h_sum += rg * u;
        });
        if g_sum == 0.0 && h_sum == 0.0 {
            continue;
        }
        h_sum *= two_inv_s2;
        let coef = 2.0 * rho * vp.falloff;
        let dd_dl = scan_leg_dir - vp.to_scan / vp.r_scan;
        let dd_ds = detect_leg_dir - vp.to_detect / vp.r_detect;
        dl += coef * (h_sum * dd_dl + (2.0 * g_sum / (vp.r_scan * vp.r_scan)) * vp.to_scan);
        ds += coef * (h_sum * dd_ds + (2.0 * g_sum / (vp.r_detect * vp.r_detect)) * vp.to_detect);
    }
    Ok((dl, ds))
}
