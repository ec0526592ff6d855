//! Synthetic measurements, miscalibration scenarios and analytic phantoms.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{all_scans, forward_gaussian};
use crate::types::{CalibrationState, SceneConfig, TransientSet, Vec3, Volume, VolumeGrid};

/// Planar scan grid on the relay wall, row-major with x fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub width: f64,
    pub height: f64,
    pub center: Vec3,
}

impl GridSpec {
    pub fn square(n: usize, size: f64) -> Self {
        GridSpec { nx: n, ny: n, width: size, height: size, center: Vec3::zeros() }
    }

    /// Sample centres of an `nx * ny` tiling of the `width * height` square.
    pub fn positions(&self) -> Vec<Vec3> {
        let dx = self.width / self.nx as f64;
        let dy = self.height / self.ny as f64;
        let mut out = Vec::with_capacity(self.nx * self.ny);
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                out.push(Vec3::new(
                    self.center.x - 0.5 * self.width + (ix as f64 + 0.5) * dx,
                    self.center.y - 0.5 * self.height + (iy as f64 + 0.5) * dy,
                    self.center.z,
                ));
            }
        }
        out
    }
}

/// Complete simulated apparatus: wall sampling, instrument and volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Setup {
    pub grid: GridSpec,
    pub detection_positions: Vec<Vec3>,
    pub scene: SceneConfig,
    pub volume: VolumeGrid,
    /// Depth of phantom centres, meters.
    pub phantom_depth: f64,
}

impl Setup {
    /// Desk-scale apparatus: 16x16 scans over 1.28 m, 16^3 voxels of 4 cm
    /// centred 1 m behind the wall, 512 bins of 32 ps, transmitter and
    /// receiver to the right of the scan array.
    pub fn desk() -> Self {
        let c = crate::types::SPEED_OF_LIGHT;
        let bin_width = 32e-12;
        let mut scene = SceneConfig::new(Vec3::new(1.0, 0.0, 0.8), Vec3::new(1.0, 0.0, 0.8), bin_width, 512);
        scene.time_offset = 2.5 / c;
        Setup {
            grid: GridSpec::square(16, 1.28),
            detection_positions: vec![Vec3::new(0.2, 0.0, 0.0)],
            scene,
            volume: VolumeGrid::cube(Vec3::new(0.0, 0.0, 1.0), 0.04, 16),
            phantom_depth: 1.0,
        }
    }

    /// Geometry of the full-size simulation: 32x32 scans over 1.28 m and
    /// 32^3 voxels of 4 cm.
    pub fn full_scale() -> Self {
        let mut s = Setup::desk();
        s.grid = GridSpec::square(32, 1.28);
        s.volume = VolumeGrid::cube(Vec3::new(0.0, 0.0, 1.0), 0.04, 32);
        s.scene.bin_count = 1024;
        s
    }

    /// Ground-truth calibration: the planar grid and the fixed detection spots.
    pub fn calibration(&self) -> CalibrationState {
        CalibrationState::new(self.grid.positions(), self.detection_positions.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    GaussianZ,
    GaussianXyz,
    SinusoidalRadial,
    ParabolicRadial,
}

impl FromStr for PerturbationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_z" => Ok(PerturbationKind::GaussianZ),
            "gaussian_xyz" => Ok(PerturbationKind::GaussianXyz),
            "sinusoidal_radial" | "sinusoidal" => Ok(PerturbationKind::SinusoidalRadial),
            "parabolic_radial" | "parabolic" => Ok(PerturbationKind::ParabolicRadial),
            _ => Err(Error::UnknownName { what: "perturbation kind", name: s.into() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    /// Gaussian kinds, meters.
    #[serde(default)]
    pub std_dev: f64,
    /// Pattern kinds, meters.
    #[serde(default)]
    pub amplitude: f64,
    /// Sinusoid period along x, meters; zero means the scan grid's x extent.
    #[serde(default)]
    pub period: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

impl PerturbationSpec {
    pub fn gaussian_z(std_dev: f64, rng_seed: u64) -> Self {
        PerturbationSpec { kind: PerturbationKind::GaussianZ, std_dev, amplitude: 0.0, period: 0.0, rng_seed }
    }

    pub fn gaussian_xyz(std_dev: f64, rng_seed: u64) -> Self {
        PerturbationSpec { kind: PerturbationKind::GaussianXyz, ..Self::gaussian_z(std_dev, rng_seed) }
    }

    pub fn sinusoidal(amplitude: f64, period: f64) -> Self {
        PerturbationSpec { kind: PerturbationKind::SinusoidalRadial, std_dev: 0.0, amplitude, period, rng_seed: 0 }
    }

    pub fn parabolic(amplitude: f64) -> Self {
        PerturbationSpec { kind: PerturbationKind::ParabolicRadial, std_dev: 0.0, amplitude, period: 0.0, rng_seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.std_dev >= 0.0 && self.std_dev.is_finite()) {
            return Err(Error::invariant("std_dev", "must be finite and >= 0"));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::invariant("amplitude", "must be finite and >= 0"));
        }
        if !(self.period >= 0.0 && self.period.is_finite()) {
            return Err(Error::invariant("period", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Unit vector from the transmitter to scan position `l`.
pub fn radial_direction(l: &Vec3, scene: &SceneConfig) -> Vec3 {
    let v = l - scene.source_pos;
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        Vec3::z()
    }
}

/// Applies `spec` to a calibration estimate.
///
/// Gaussian kinds perturb scan and detection positions with iid noise.
/// Pattern kinds move each scan position along the line to the transmitter
/// by `amplitude * pattern(x)`, with `x` normalised over the scan extent.
pub fn perturb(cal: &CalibrationState, spec: &PerturbationSpec, scene: &SceneConfig) -> Result<CalibrationState> {
    spec.validate()?;
    let mut out = cal.clone();
    match spec.kind {
        PerturbationKind::GaussianZ | PerturbationKind::GaussianXyz => {
            if spec.std_dev == 0.0 {
                return Ok(out);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
            let normal = Normal::new(0.0, spec.std_dev).map_err(|e| Error::invariant("std_dev", e.to_string()))?;
            let xyz = spec.kind == PerturbationKind::GaussianXyz;
            for p in out.scan_positions.iter_mut().chain(out.detection_positions.iter_mut()) {
                if xyz {
                    p.x += normal.sample(&mut rng);
                    p.y += normal.sample(&mut rng);
                }
                p.z += normal.sample(&mut rng);
            }
        }
        PerturbationKind::SinusoidalRadial | PerturbationKind::ParabolicRadial => {
            if spec.amplitude == 0.0 {
                return Ok(out);
            }
            let (xmin, xmax) = cal
                .scan_positions
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.x), b.max(p.x)));
            let span = (xmax - xmin).max(f64::MIN_POSITIVE);
            let period = if spec.period > 0.0 { spec.period } else { span };
            for p in out.scan_positions.iter_mut() {
                let shape = match spec.kind {
                    PerturbationKind::SinusoidalRadial => (2.0 * std::f64::consts::PI * (p.x - xmin) / period).sin(),
                    _ => {
                        let u = 2.0 * (p.x - xmin) / span - 1.0;
                        u * u
                    }
                };
                let dir = radial_direction(p, scene);
                *p += spec.amplitude * shape * dir;
            }
        }
    }
    Ok(out)
}

/// Noise-free measurement of `volume_true` seen from `cal_true`.
pub fn synthesize(cal_true: &CalibrationState, volume_true: &Volume, scene: &SceneConfig) -> Result<TransientSet> {
    forward_gaussian(cal_true, volume_true, scene, &all_scans(cal_true.scan_count()))
}

/// Replaces each bin by a Poisson draw with mean `photons_per_unit * value`,
/// rescaled back to intensity units. Not used by any default pipeline.
pub fn add_poisson_noise(measured: &TransientSet, photons_per_unit: f64, seed: u64) -> Result<TransientSet> {
    if !(photons_per_unit > 0.0 && photons_per_unit.is_finite()) {
        return Err(Error::invariant("photons_per_unit", "must be finite and > 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = measured.clone();
    for v in out.data.iter_mut() {
        let lambda = (*v * photons_per_unit).max(0.0);
        *v = if lambda > 0.0 {
            let d = Poisson::new(lambda).map_err(|e| Error::invariant("transients", e.to_string()))?;
            d.sample(&mut rng) / photons_per_unit
        } else {
            0.0
        };
    }
    Ok(out)
}

/// The three miscalibration scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioKind {
    /// Truth on the planar grid; estimate has z noise.
    NoisyToGrid = 1,
    /// Truth has z noise; estimate is the planar grid.
    GridToNoisy = 2,
    /// Truth on the planar grid; estimate has xyz noise.
    NoisyXyzToGrid = 3,
}

impl ScenarioKind {
    pub fn from_index(n: u32) -> Result<Self> {
        match n {
            1 => Ok(ScenarioKind::NoisyToGrid),
            2 => Ok(ScenarioKind::GridToNoisy),
            3 => Ok(ScenarioKind::NoisyXyzToGrid),
            _ => Err(Error::UnknownName { what: "scenario", name: n.to_string() }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioData {
    pub measured: TransientSet,
    pub estimate: CalibrationState,
    pub truth: CalibrationState,
}

/// Builds one miscalibration scenario; the measurement always comes from the truth.
pub fn scenario(
    kind: ScenarioKind,
    grid: &GridSpec,
    detection_positions: &[Vec3],
    volume_true: &Volume,
    scene: &SceneConfig,
    noise_std: f64,
    seed: u64,
) -> Result<ScenarioData> {
    let planar = CalibrationState::new(grid.positions(), detection_positions.to_vec());
    let (truth, estimate) = match kind {
        ScenarioKind::NoisyToGrid => {
            let est = perturb(&planar, &PerturbationSpec::gaussian_z(noise_std, seed), scene)?;
            (planar, est)
        }
        ScenarioKind::GridToNoisy => {
            let truth = perturb(&planar, &PerturbationSpec::gaussian_z(noise_std, seed), scene)?;
            (truth, planar)
        }
        ScenarioKind::NoisyXyzToGrid => {
            let est = perturb(&planar, &PerturbationSpec::gaussian_xyz(noise_std, seed), scene)?;
            (planar, est)
        }
    };
    let measured = synthesize(&truth, volume_true, scene)?;
    Ok(ScenarioData { measured, estimate, truth })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    SingleVoxel,
    Hemisphere,
    Plane,
    SigmaGlyph,
}

impl FromStr for PhantomKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_voxel" => Ok(PhantomKind::SingleVoxel),
            "hemisphere" => Ok(PhantomKind::Hemisphere),
            "plane" => Ok(PhantomKind::Plane),
            "sigma_glyph" | "sigma" => Ok(PhantomKind::SigmaGlyph),
            _ => Err(Error::UnknownName { what: "phantom", name: s.into() }),
        }
    }
}

impl fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhantomKind::SingleVoxel => "single_voxel",
            PhantomKind::Hemisphere => "hemisphere",
            PhantomKind::Plane => "plane",
            PhantomKind::SigmaGlyph => "sigma_glyph",
        })
    }
}

/// Radius of the hemisphere phantom: 30% of the smaller lateral extent.
pub fn hemisphere_radius(grid: &VolumeGrid) -> f64 {
    0.3 * (grid.dims[0] as f64 * grid.voxel_pitch.x).min(grid.dims[1] as f64 * grid.voxel_pitch.y)
}

fn slice_index(grid: &VolumeGrid, depth: f64) -> usize {
    let iz = ((depth - grid.origin.z) / grid.voxel_pitch.z).floor();
    iz.clamp(0.0, (grid.dims[2] - 1) as f64) as usize
}

fn lateral_center(grid: &VolumeGrid) -> (f64, f64) {
    (
        grid.origin.x + 0.5 * grid.dims[0] as f64 * grid.voxel_pitch.x,
        grid.origin.y + 0.5 * grid.dims[1] as f64 * grid.voxel_pitch.y,
    )
}

/// Binary-albedo analytic shape centred laterally at depth `depth`.
///
/// The hemisphere is the solid half-ball of radius [`hemisphere_radius`]
/// whose dome faces the wall (`z <= depth`).
pub fn make_phantom(kind: PhantomKind, template: &VolumeGrid, depth: f64) -> Result<Volume> {
    template.validate()?;
    let mut vol = Volume::zeros(template.clone());
    let centers = template.centers();
    let (cx, cy) = lateral_center(template);
    let iz0 = slice_index(template, depth);
    match kind {
        PhantomKind::SingleVoxel => {
            let ix = (((cx - template.origin.x) / template.voxel_pitch.x).floor() as usize).min(template.dims[0] - 1);
            let iy = (((cy - template.origin.y) / template.voxel_pitch.y).floor() as usize).min(template.dims[1] - 1);
            let i = template.flatten([ix, iy, iz0])?;
            vol.albedo[i] = 1.0;
        }
        PhantomKind::Hemisphere => {
            let c = Vec3::new(cx, cy, depth);
            let r = hemisphere_radius(template);
            for (a, o) in vol.albedo.iter_mut().zip(&centers) {
                if (o - c).norm() <= r && o.z <= c.z {
                    *a = 1.0;
                }
            }
        }
        PhantomKind::Plane => {
            let hx = 0.25 * template.dims[0] as f64 * template.voxel_pitch.x;
            let hy = 0.25 * template.dims[1] as f64 * template.voxel_pitch.y;
            for (i, (a, o)) in vol.albedo.iter_mut().zip(&centers).enumerate() {
                let iz = i / (template.dims[0] * template.dims[1]);
                if iz == iz0 && (o.x - cx).abs() <= hx && (o.y - cy).abs() <= hy {
                    *a = 1.0;
                }
            }
        }
        PhantomKind::SigmaGlyph => {
            let hx = 0.35 * template.dims[0] as f64 * template.voxel_pitch.x;
            let hy = 0.35 * template.dims[1] as f64 * template.voxel_pitch.y;
            let pts = [(1.0, 1.0), (-1.0, 1.0), (0.2, 0.0), (-1.0, -1.0), (1.0, -1.0)]
                .map(|(u, v): (f64, f64)| (cx + u * hx, cy + v * hy));
            let tol = 0.5 * template.voxel_pitch.x.max(template.voxel_pitch.y);
            for (i, (a, o)) in vol.albedo.iter_mut().zip(&centers).enumerate() {
                let iz = i / (template.dims[0] * template.dims[1]);
                if iz != iz0 {
                    continue;
                }
                if pts.windows(2).any(|w| segment_distance((o.x, o.y), w[0], w[1]) <= tol) {
                    *a = 1.0;
                }
            }
        }
    }
    Ok(vol)
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 { (((p.0 - a.0) * abx + (p.1 - a.1) * aby) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (dx, dy) = (p.0 - a.0 - t * abx, p.1 - a.1 - t * aby);
    (dx * dx + dy * dy).sqrt()
}

/// Small randomized problem used by gradient checks and property tests.
#[derive(Debug, Clone)]
pub struct RandomScene {
    pub scene: SceneConfig,
    pub calibration: CalibrationState,
    pub volume: Volume,
    /// Synthesized from a jittered copy of the calibration and albedo, so
    /// residuals at `calibration`/`volume` are non-zero.
    pub measured: TransientSet,
}

/// Problem size of a [`RandomScene`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SceneShape {
    pub scans: usize,
    pub detections: usize,
    pub dims: [usize; 3],
    pub bins: usize,
}

/// Draws a scene with at most 8^3 voxels, 1 to 8 scans, 1 or 2 detection
/// spots and 64 to 256 bins, in units where `c = 1`. The kernel width is
/// drawn between 3 and 6 cm, the time window keeps every path at least four
/// kernel widths from its ends, and kernels are evaluated over every bin.
pub fn random_scene(seed: u64) -> Result<RandomScene> {
    random_scene_with(seed, None)
}

/// [`random_scene`] with the problem size fixed by `shape`.
pub fn random_scene_with(seed: u64, shape: Option<SceneShape>) -> Result<RandomScene> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wall = |rng: &mut ChaCha8Rng| {
        Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.05..0.05))
    };
    let instrument = |rng: &mut ChaCha8Rng| {
        Vec3::new(rng.random_range(0.6..1.2), rng.random_range(-0.3..0.3), rng.random_range(0.4..1.0))
    };
    let source = instrument(&mut rng);
    let detector = instrument(&mut rng);
    let n_scans = rng.random_range(1..=8usize);
    let n_det = rng.random_range(1..=2usize);
    let dims = [rng.random_range(1..=8usize), rng.random_range(1..=8usize), rng.random_range(1..=8usize)];
    let bins = rng.random_range(64..=256usize);
    let (n_scans, n_det, dims, bins) = match shape {
        Some(sh) => (sh.scans, sh.detections, sh.dims, sh.bins),
        None => (n_scans, n_det, dims, bins),
    };
    let scans: Vec<Vec3> = (0..n_scans).map(|_| wall(&mut rng)).collect();
    let dets: Vec<Vec3> = (0..n_det).map(|_| wall(&mut rng)).collect();
    let pitch = Vec3::repeat(rng.random_range(0.03..0.08));
    let center = Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(0.7..1.2));
    let extent = Vec3::new(dims[0] as f64, dims[1] as f64, dims[2] as f64).component_mul(&pitch);
    let grid = VolumeGrid::new(center - 0.5 * extent, pitch, dims);
    let albedo: Vec<f64> = (0..grid.voxel_count())
        .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..1.0) })
        .collect();
    let volume = Volume::from_albedo(grid, albedo)?;
    let calibration = CalibrationState::new(scans, dets);

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for l in &calibration.scan_positions {
        for s in &calibration.detection_positions {
            for o in volume.grid.centers() {
                let d = (l - source).norm() + (o - l).norm() + (o - s).norm() + (s - detector).norm();
                lo = lo.min(d);
                hi = hi.max(d);
            }
        }
    }
    // kernel several finite-difference steps wide, window a few kernels past every path
    let sigma = rng.random_range(0.03..0.06);
    let margin = 4.0 * sigma + 0.05;
    let bin_width = (hi - lo + 2.0 * margin) / bins as f64;
    let mut scene = SceneConfig::new(source, detector, bin_width, bins);
    scene.speed_of_light = 1.0;
    scene.gaussian_sigma = sigma;
    scene.time_offset = lo - margin;
    scene.truncation_sigmas = None;

    let mut jittered = calibration.clone();
    for p in jittered.scan_positions.iter_mut().chain(jittered.detection_positions.iter_mut()) {
        *p += Vec3::new(rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01));
    }
    let mut truth = volume.clone();
    for a in truth.albedo.iter_mut() {
        *a = (*a + rng.random_range(-0.2..0.2)).max(0.0);
    }
    let measured = forward_gaussian(&jittered, &truth, &scene, &all_scans(n_scans))?;
    Ok(RandomScene { scene, calibration, volume, measured })
}
