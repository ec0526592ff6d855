//! Time-gated backprojection used to seed the albedo estimate.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::forward::{all_scans, ForwardWorkspace};
use crate::par;
use crate::types::{CalibrationState, SceneConfig, TransientSet, Volume, VolumeGrid};

/// `rho_i = sum_{j,m} m_jm[k(i,j,m)] |l_j - o_i|^2 |s_m - o_i|^2`, where `k` is
/// the bin whose nominal path length is closest to the voxel's path length.
/// Paths outside the recorded range contribute nothing.
pub fn backproject(
    cal: &CalibrationState,
    scene: &SceneConfig,
    measured: &TransientSet,
    template: &VolumeGrid,
) -> Result<Volume> {
    measured.check_matches(cal, scene)?;
    let ws = ForwardWorkspace::new(scene, cal, template)?;
    let (np, nd) = (cal.scan_count(), cal.detection_count());
    let albedo = par::try_map(ws.voxel_count(), |i| {
        let mut acc = 0.0;
        for j in 0..np {
            for m in 0..nd {
                let vp = ws.voxel_path(j, m, i)?;
                if let Some(k) = scene.nearest_bin(vp.path) {
                    acc += measured.get(j, m, k) / vp.falloff;
                }
            }
        }
        Ok(acc)
    })?;
    Ok(Volume { grid: template.clone(), albedo })
}

/// Zero-mean, unit-L2 Morlet wavelet sampled on the bin grid.
///
/// `center_wavelength` is a path length in meters; `cycles` sets the
/// envelope FWHM in wavelengths. The returned kernel has odd length with its
/// centre tap in the middle.
pub fn morlet_kernel(scene: &SceneConfig, center_wavelength: f64, cycles: f64) -> Result<Vec<f64>> {
    if !(center_wavelength > 0.0 && center_wavelength.is_finite()) {
        return Err(Error::invariant("center_wavelength", "must be > 0"));
    }
    if !(cycles > 0.0 && cycles.is_finite()) {
        return Err(Error::invariant("cycles", "must be > 0"));
    }
    let period = center_wavelength / scene.bin_path_width();
    if period < 2.0 {
        return Err(Error::invariant(
            "center_wavelength",
            format!("spans {period:.3} bins; at least 2 are needed"),
        ));
    }
    let std = cycles * period / (2.0 * (2.0 * 2f64.ln()).sqrt());
    let half = (4.0 * std).ceil() as i64;
    let env: Vec<f64> = (-half..=half).map(|n| (-(n * n) as f64 / (2.0 * std * std)).exp()).collect();
    let carrier: Vec<f64> = (-half..=half).map(|n| (2.0 * PI * n as f64 / period).cos()).collect();
    let kappa = env.iter().zip(&carrier).map(|(e, c)| e * c).sum::<f64>() / env.iter().sum::<f64>();
    let mut h: Vec<f64> = env.iter().zip(&carrier).map(|(e, c)| e * (c - kappa)).collect();
    let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in h.iter_mut() {
        *v /= norm;
    }
    Ok(h)
}

/// Circularly convolves every histogram with [`morlet_kernel`].
pub fn bandpass_filter(
    measured: &TransientSet,
    scene: &SceneConfig,
    center_wavelength: f64,
    cycles: f64,
) -> Result<TransientSet> {
    let h = morlet_kernel(scene, center_wavelength, cycles)?;
    let nk = measured.bin_count;
    if h.len() > nk {
        return Err(Error::invariant(
            "center_wavelength",
            format!("kernel spans {} bins but histograms hold {nk}", h.len()),
        ));
    }
    let half = (h.len() / 2) as i64;
    let mut out = measured.clone();
    par::try_for_each_chunk(&mut out.data, nk, |pair, hist| {
        let src = &measured.data[pair * nk..(pair + 1) * nk];
        for (n, o) in hist.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (t, &w) in h.iter().enumerate() {
                let lag = t as i64 - half;
                let idx = (n as i64 - lag).rem_euclid(nk as i64) as usize;
                acc += w * src[idx];
            }
            *o = acc;
        }
        Ok(())
    })?;
    Ok(out)
}

/// How to build the starting albedo for an optimization run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitOptions {
    /// Band-pass `(wavelength in meters, cycles)` applied before backprojection;
    /// the result is then taken in absolute value.
    pub filter: Option<(f64, f64)>,
    /// Rescale so that the model best matches the measurement in least squares.
    pub fit_scale: bool,
}

impl Default for InitOptions {
    fn default() -> Self {
        InitOptions { filter: None, fit_scale: true }
    }
}

/// Default band-pass wavelength: eight bins of path length.
pub fn default_wavelength(scene: &SceneConfig) -> f64 {
    8.0 * scene.bin_path_width()
}

/// Backprojection clamped to `rho >= 0`, optionally filtered and rescaled.
pub fn initial_albedo(
    cal: &CalibrationState,
    scene: &SceneConfig,
    measured: &TransientSet,
    template: &VolumeGrid,
    options: InitOptions,
) -> Result<Volume> {
    let mut vol = match options.filter {
        Some((wavelength, cycles)) => {
            let filtered = bandpass_filter(measured, scene, wavelength, cycles)?;
            let mut v = backproject(cal, scene, &filtered, template)?;
            for a in v.albedo.iter_mut() {
                *a = a.abs();
            }
            v
        }
        None => backproject(cal, scene, measured, template)?,
    };
    for a in vol.albedo.iter_mut() {
        *a = a.max(0.0);
    }
    if options.fit_scale {
        let ws = ForwardWorkspace::new(scene, cal, template)?;
        let model = ws.evaluate(&vol.albedo, &all_scans(cal.scan_count()))?;
        let num: f64 = model.data.iter().zip(&measured.data).map(|(a, b)| a * b).sum();
        let den: f64 = model.data.iter().map(|a| a * a).sum();
        if den > 0.0 && num.is_finite() {
            let scale = num / den;
            for a in vol.albedo.iter_mut() {
                *a *= scale;
            }
        }
    }
    Ok(vol)
}
