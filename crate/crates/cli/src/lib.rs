//! Command-line front end. Every subcommand reads and writes the dataset
//! layout of [`nlos_autocal::io`] and never modifies its input directory.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use nlos_autocal::analysis::{
    gradient_check, noise_sensitivity_sweep, normalized_cross_correlation, radial_rmse, recoverability_heatmap,
    recoverability_profile, scan_rmse, CheckSettings, Reconstructor,
};
use nlos_autocal::forward::all_scans;
use nlos_autocal::init::{default_wavelength, initial_albedo, InitOptions};
use nlos_autocal::io::{self, Dataset};
use nlos_autocal::optim::{autocal_with, reconstruct_only_with, AutocalSchedule};
use nlos_autocal::sim::{
    add_poisson_noise, make_phantom, perturb, random_scene, scenario, synthesize, PerturbationKind,
    PerturbationSpec, PhantomKind, ScenarioKind, Setup,
};
use nlos_autocal::types::{AxisMask, OptimizationReport, Volume};

/// Tolerance applied by `gradcheck`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("[{code}] {source}", code = .source.code())]
    Core {
        #[from]
        source: nlos_autocal::Error,
    },
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core { source } if source.is_validation() => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "nlos-autocal", version, about = "Transient NLOS reconstruction with scan-position self-calibration")]
pub struct Cli {
    /// Worker threads for the compute kernels; defaults to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for every random draw of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Synthesize a dataset from an analytic phantom.
    Simulate(SimulateArgs),
    /// Replace a dataset's calibration with a perturbed copy.
    Perturb(PerturbArgs),
    /// Backproject a dataset into `volume.f32`.
    Backproject(BackprojectArgs),
    /// Albedo-only gradient reconstruction with the calibration held fixed.
    Reconstruct(OptimizeArgs),
    /// Joint calibration and reconstruction.
    Autocal(OptimizeArgs),
    /// Compare analytic gradients with central differences on random scenes.
    Gradcheck(GradcheckArgs),
    /// Basin-of-attraction profile and heatmap of a dataset's true volume.
    Recoverability(RecoverabilityArgs),
    /// Reconstruction quality against calibration noise.
    Sensitivity(SensitivityArgs),
    /// Compare an estimate dataset with the truth.
    Metrics(MetricsArgs),
    /// Convert rectified confocal histograms to source-timed histograms.
    Unrectify(UnrectifyArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Full,
}

impl Scale {
    fn setup(self) -> Setup {
        match self {
            Scale::Desk => Setup::desk(),
            Scale::Full => Setup::full_scale(),
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Scale::Desk)]
    pub scale: Scale,
    /// single_voxel, hemisphere, plane or sigma_glyph.
    #[arg(long, default_value = "hemisphere")]
    pub phantom: String,
    /// Phantom depth behind the wall, meters.
    #[arg(long)]
    pub depth: Option<f64>,
    /// Miscalibration scenario 1, 2 or 3; without it the calibration is exact.
    #[arg(long)]
    pub scenario: Option<u32>,
    /// Calibration noise standard deviation for the scenario, meters.
    #[arg(long, default_value_t = 0.05)]
    pub sigma: f64,
    /// Poisson-sample the measurement at this many photons per unit intensity.
    #[arg(long)]
    pub photons: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct PerturbArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// gaussian_z, gaussian_xyz, sinusoidal or parabolic.
    #[arg(long, default_value = "gaussian_z")]
    pub kind: String,
    /// Standard deviation (Gaussian kinds) or amplitude (patterns), meters.
    #[arg(long, default_value_t = 0.05)]
    pub sigma: f64,
    /// Sinusoid period, meters; 0 uses the scan extent.
    #[arg(long, default_value_t = 0.0)]
    pub period: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct BackprojectArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Band-pass the histograms before backprojecting.
    #[arg(long)]
    pub filter: bool,
    /// Band-pass wavelength, meters; defaults to eight bins.
    #[arg(long)]
    pub wavelength: Option<f64>,
    #[arg(long, default_value_t = 4.0)]
    pub cycles: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Backprojection,
    Zero,
}

#[derive(Debug, Args, Serialize)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// JSON schedule file; explicit flags override its fields.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub calib_iters: Option<usize>,
    #[arg(long)]
    pub recon_iters: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Fraction of scans drawn per iteration.
    #[arg(long)]
    pub subsample: Option<f64>,
    /// Axes updated during calibration: letters (`z`, `xyz`) or a z-y-x bit mask (`100`).
    #[arg(long, default_value = "z")]
    pub axes: String,
    /// Project the albedo onto non-negative values after every step.
    #[arg(long)]
    pub nonneg: bool,
    #[arg(long, value_enum, default_value_t = InitKind::Backprojection)]
    pub init: InitKind,
    /// Keep a volume snapshot after every outer repeat.
    #[arg(long)]
    pub snapshots: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    /// Number of random scenes, starting at `--seed`.
    #[arg(long, default_value_t = 1)]
    pub scenes: u64,
    /// Central-difference step for positions, meters.
    #[arg(long, default_value_t = 1e-5)]
    pub position_step: f64,
    /// Central-difference step for albedo.
    #[arg(long, default_value_t = 1e-5)]
    pub albedo_step: f64,
    /// Optional directory for `gradcheck.json`.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct RecoverabilityArgs {
    /// Dataset whose calibration (or ground truth) and `volume.f32` are taken as truth.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Scan index for the profile.
    #[arg(long, default_value_t = 0)]
    pub scan: usize,
    /// Profile half-range, meters.
    #[arg(long, default_value_t = 0.02)]
    pub max_delta: f64,
    /// Profile spacing, meters.
    #[arg(long, default_value_t = 0.001)]
    pub step: f64,
    /// Largest magnitude probed by the heatmap, meters.
    #[arg(long, default_value_t = 0.2)]
    pub heatmap_max: f64,
    /// Coarse spacing of the heatmap probes before bisection, meters.
    #[arg(long, default_value_t = 0.005)]
    pub heatmap_step: f64,
    /// Skip the heatmap.
    #[arg(long)]
    pub no_heatmap: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SensitivityArgs {
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Scale::Desk)]
    pub scale: Scale,
    #[arg(long, default_value = "hemisphere")]
    pub phantom: String,
    /// Comma-separated noise levels, meters.
    #[arg(long, value_delimiter = ',', default_value = "0,0.01,0.02,0.04")]
    pub stds: Vec<f64>,
    /// Seeds per level, starting at `--seed`.
    #[arg(long, default_value_t = 3)]
    pub repeats: u64,
    /// Run autocal before the final reconstruction.
    #[arg(long)]
    pub autocal: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct MetricsArgs {
    /// Dataset holding the estimate.
    #[arg(long)]
    pub estimate: PathBuf,
    /// Dataset holding the truth; defaults to the estimate's `ground_truth.json`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Optional directory for `rmse.csv`.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct UnrectifyArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Add half a bin before rounding the shift.
    #[arg(long)]
    pub half_bin: bool,
    /// Apply the inverse shift (re-rectify).
    #[arg(long)]
    pub inverse: bool,
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Failed(e.to_string()))?;
    pool.install(|| dispatch(cli))
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::Perturb(a) => perturb_cmd(cli, a),
        Command::Backproject(a) => backproject_cmd(a),
        Command::Reconstruct(a) => optimize(cli, a, false),
        Command::Autocal(a) => optimize(cli, a, true),
        Command::Gradcheck(a) => gradcheck(cli, a),
        Command::Recoverability(a) => recoverability(a),
        Command::Sensitivity(a) => sensitivity(cli, a),
        Command::Metrics(a) => metrics(a),
        Command::Unrectify(a) => unrectify(a),
    }
}

fn parse<T: std::str::FromStr<Err = nlos_autocal::Error>>(s: &str) -> Result<T> {
    s.parse::<T>().map_err(CliError::from)
}

/// Refuses to write into the directory being read.
fn distinct_output(input: &Path, out: &Path) -> Result<()> {
    let same = match (input.canonicalize(), out.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => input == out,
    };
    if same {
        return Err(CliError::Usage(format!(
            "output {} is the input directory; choose a distinct path",
            out.display()
        )));
    }
    Ok(())
}

/// Flags of the run, without output paths, for `report.json`.
fn provenance(cli: &Cli) -> Result<BTreeMap<String, Value>> {
    let command = serde_json::to_value(&cli.command).map_err(|e| CliError::Failed(e.to_string()))?;
    let mut map = BTreeMap::new();
    map.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    map.insert("seed".into(), json!(cli.seed));
    map.insert("threads".into(), json!(cli.threads));
    map.insert("command".into(), command);
    Ok(map)
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<()> {
    let mut setup = a.scale.setup();
    if let Some(d) = a.depth {
        setup.phantom_depth = d;
    }
    let kind: PhantomKind = parse(&a.phantom)?;
    let volume = make_phantom(kind, &setup.volume, setup.phantom_depth)?;
    let truth = setup.calibration();
    let (measured, estimate, truth) = match a.scenario {
        Some(n) => {
            let d = scenario(
                ScenarioKind::from_index(n)?,
                &setup.grid,
                &setup.detection_positions,
                &volume,
                &setup.scene,
                a.sigma,
                cli.seed,
            )?;
            (d.measured, d.estimate, d.truth)
        }
        None => (synthesize(&truth, &volume, &setup.scene)?, truth.clone(), truth),
    };
    let measured = match a.photons {
        Some(p) => add_poisson_noise(&measured, p, cli.seed)?,
        None => measured,
    };
    let ds = Dataset {
        scene: setup.scene.clone(),
        calibration: estimate,
        volume_grid: setup.volume.clone(),
        transients: measured,
        volume: Some(volume),
        ground_truth: Some(truth),
    };
    io::write_dataset(&a.out, &ds)?;
    println!("wrote {} scans x {} bins to {}", ds.calibration.scan_count(), ds.scene.bin_count, a.out.display());
    Ok(())
}

fn perturb_cmd(cli: &Cli, a: &PerturbArgs) -> Result<()> {
    distinct_output(&a.input, &a.out)?;
    let mut ds = io::load_dataset(&a.input)?;
    let kind: PerturbationKind = parse(&a.kind)?;
    let spec = PerturbationSpec { kind, std_dev: a.sigma, amplitude: a.sigma, period: a.period, rng_seed: cli.seed };
    let perturbed = perturb(&ds.calibration, &spec, &ds.scene)?;
    if ds.ground_truth.is_none() {
        ds.ground_truth = Some(ds.calibration.clone());
    }
    ds.calibration = perturbed;
    io::write_dataset(&a.out, &ds)?;
    let rmse = scan_rmse(&ds.calibration, ds.ground_truth.as_ref().unwrap(), AxisMask::ALL)?;
    println!("perturbed {} scans, rmse {rmse:.6} m", ds.calibration.scan_count());
    Ok(())
}

fn backproject_cmd(a: &BackprojectArgs) -> Result<()> {
    distinct_output(&a.input, &a.out)?;
    let mut ds = io::load_dataset(&a.input)?;
    let filter = a.filter.then(|| (a.wavelength.unwrap_or_else(|| default_wavelength(&ds.scene)), a.cycles));
    let options = InitOptions { filter, fit_scale: true };
    let vol = initial_albedo(&ds.calibration, &ds.scene, &ds.transients, &ds.volume_grid, options)?;
    ds.volume = Some(vol);
    io::write_dataset(&a.out, &ds)?;
    println!("wrote {}", a.out.join(io::VOLUME_FILE).display());
    Ok(())
}

fn schedule_from(cli: &Cli, a: &OptimizeArgs, calibrate: bool) -> Result<AutocalSchedule> {
    let mut s = match &a.schedule {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None if calibrate => AutocalSchedule::default(),
        None => AutocalSchedule {
            calib_iterations: 0,
            ..AutocalSchedule::default()
        },
    };
    if let Some(v) = a.lr {
        s.adam.learning_rate = v;
    }
    if let Some(v) = a.calib_iters {
        s.calib_iterations = v;
    }
    if let Some(v) = a.recon_iters {
        s.reconstruction_iterations = v;
    }
    if let Some(v) = a.repeats {
        s.total_iterations = v;
    }
    if let Some(v) = a.subsample {
        s.scan_subsample_fraction = v;
    }
    s.nonnegativity_projection |= a.nonneg;
    s.snapshot_volumes |= a.snapshots;
    s.rng_seed = cli.seed;
    s.validate()?;
    Ok(s)
}

fn optimize(cli: &Cli, a: &OptimizeArgs, calibrate: bool) -> Result<()> {
    distinct_output(&a.input, &a.out)?;
    let mut ds = io::load_dataset(&a.input)?;
    let schedule = schedule_from(cli, a, calibrate)?;
    let mask: AxisMask = parse(&a.axes)?;
    let cal0 = ds.calibration.clone().with_mask(mask);
    let v0 = match a.init {
        InitKind::Backprojection => {
            initial_albedo(&cal0, &ds.scene, &ds.transients, &ds.volume_grid, InitOptions::default())?
        }
        InitKind::Zero => Volume::zeros(ds.volume_grid.clone()),
    };
    let mut report = OptimizationReport { provenance: provenance(cli)?, ..Default::default() };
    report
        .provenance
        .insert("schedule".into(), serde_json::to_value(&schedule).map_err(|e| CliError::Failed(e.to_string()))?);
    let (cal, vol) = if calibrate {
        autocal_with(&cal0, &v0, &ds.scene, &ds.transients, &schedule, ds.ground_truth.as_ref(), &mut report)?
    } else {
        let v = reconstruct_only_with(&cal0, &v0, &ds.scene, &ds.transients, &schedule, &mut report)?;
        (cal0.clone(), v)
    };
    ds.calibration = cal;
    ds.volume = Some(vol);
    io::write_dataset(&a.out, &ds)?;
    io::write_report(&a.out, &report)?;
    let last = report.records.last().map_or(f64::NAN, |r| r.loss);
    println!("{} iterations, final batch loss {last:.6e}", report.records.len());
    if let Some(t) = &ds.ground_truth {
        println!("z rmse {:.6} m", scan_rmse(&ds.calibration, t, AxisMask::Z)?);
    }
    Ok(())
}

#[derive(Serialize)]
struct GradcheckReport {
    tolerance: f64,
    max_relative_error: f64,
    worst: String,
    checked: usize,
    seeds: Vec<u64>,
    pass: bool,
}

fn gradcheck(cli: &Cli, a: &GradcheckArgs) -> Result<()> {
    if a.scenes == 0 {
        return Err(CliError::Usage("--scenes must be >= 1".into()));
    }
    let settings = CheckSettings { position_step: a.position_step, albedo_step: a.albedo_step, ..Default::default() };
    let seeds: Vec<u64> = (cli.seed..cli.seed + a.scenes).collect();
    let mut worst = (0.0, String::new());
    let mut checked = 0;
    for &seed in &seeds {
        let rs = random_scene(seed)?;
        let r = gradient_check(
            &rs.calibration,
            &rs.volume,
            &rs.scene,
            &rs.measured,
            &all_scans(rs.calibration.scan_count()),
            &settings,
        )?;
        checked += r.checked;
        if r.max_relative_error >= worst.0 {
            worst = (r.max_relative_error, format!("seed {seed} {}", r.worst));
        }
    }
    let pass = worst.0 < GRADCHECK_TOLERANCE;
    let rep = GradcheckReport {
        tolerance: GRADCHECK_TOLERANCE,
        max_relative_error: worst.0,
        worst: worst.1,
        checked,
        seeds,
        pass,
    };
    let text = serde_json::to_string_pretty(&rep).map_err(|e| CliError::Failed(e.to_string()))?;
    println!("{text}");
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Failed(format!("{}: {e}", dir.display())))?;
        io::write_json(&dir.join("gradcheck.json"), &rep)?;
    }
    if pass {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "max relative error {:e} at {} exceeds {GRADCHECK_TOLERANCE:e}",
            rep.max_relative_error, rep.worst
        )))
    }
}

/// Row and column of each scan position, ranking distinct y and x values.
fn grid_indices(xs: &[f64], ys: &[f64]) -> Vec<(usize, usize)> {
    let rank = |v: &[f64]| {
        let mut u: Vec<f64> = v.to_vec();
        u.sort_by(f64::total_cmp);
        u.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        v.iter().map(|x| u.iter().position(|y| (x - y).abs() < 1e-9).unwrap_or(0)).collect::<Vec<_>>()
    };
    rank(ys).into_iter().zip(rank(xs)).collect()
}

fn recoverability(a: &RecoverabilityArgs) -> Result<()> {
    distinct_output(&a.input, &a.out)?;
    let ds = io::load_dataset(&a.input)?;
    let volume = ds
        .volume
        .clone()
        .ok_or_else(|| CliError::Usage(format!("{} has no {}", a.input.display(), io::VOLUME_FILE)))?;
    let truth = ds.ground_truth.clone().unwrap_or_else(|| ds.calibration.clone());
    if !(a.step > 0.0 && a.max_delta >= 0.0 && a.heatmap_step > 0.0) {
        return Err(CliError::Usage("--step and --heatmap-step must be > 0, --max-delta >= 0".into()));
    }
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::Failed(format!("{}: {e}", a.out.display())))?;

    let n = (a.max_delta / a.step).round() as i64;
    let deltas: Vec<f64> = (-n..=n).map(|k| k as f64 * a.step).collect();
    let profile = recoverability_profile(&ds.scene, &truth, &volume, a.scan, &deltas)?;
    let rows: Vec<Vec<String>> =
        profile.iter().map(|(d, g)| vec![a.scan.to_string(), format!("{d:.6}"), format!("{g:.9e}")]).collect();
    io::write_csv(&a.out.join("recoverability.csv"), &["scan", "delta_m", "projected_gradient"], &rows)?;

    if !a.no_heatmap {
        let m = (a.heatmap_max / a.heatmap_step).round() as usize;
        let grid: Vec<f64> = (1..=m).map(|k| k as f64 * a.heatmap_step).collect();
        let ranges = recoverability_heatmap(&ds.scene, &truth, &volume, &grid)?;
        let xs: Vec<f64> = truth.scan_positions.iter().map(|p| p.x).collect();
        let ys: Vec<f64> = truth.scan_positions.iter().map(|p| p.y).collect();
        let rows: Vec<Vec<String>> = grid_indices(&xs, &ys)
            .into_iter()
            .zip(&ranges)
            .enumerate()
            .map(|(j, ((r, c), v))| vec![r.to_string(), c.to_string(), j.to_string(), format!("{v:.6}")])
            .collect();
        io::write_csv(&a.out.join("heatmap.csv"), &["row", "col", "scan", "range_m"], &rows)?;
        let mean = ranges.iter().sum::<f64>() / ranges.len().max(1) as f64;
        println!("mean recovery range {mean:.4} m over {} scans", ranges.len());
    }
    Ok(())
}

fn sensitivity(cli: &Cli, a: &SensitivityArgs) -> Result<()> {
    let setup = a.scale.setup();
    let kind: PhantomKind = parse(&a.phantom)?;
    let volume = make_phantom(kind, &setup.volume, setup.phantom_depth)?;
    let seeds: Vec<u64> = (cli.seed..cli.seed + a.repeats).collect();
    let recon = if a.autocal { Reconstructor::recalibrated_default() } else { Reconstructor::sweep_default() };
    let rows = noise_sensitivity_sweep(&setup, &volume, &a.stds, &seeds, &recon)?;
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::Failed(format!("{}: {e}", a.out.display())))?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                format!("{}", r.std),
                r.seed.to_string(),
                format!("{:.9e}", r.final_loss),
                format!("{:.6}", r.correlation),
            ]
        })
        .collect();
    io::write_csv(&a.out.join("sensitivity.csv"), &["std_m", "seed", "final_loss", "correlation"], &table)?;
    for r in &rows {
        println!("std {:.3} seed {}: correlation {:.4}", r.std, r.seed, r.correlation);
    }
    Ok(())
}

fn metrics(a: &MetricsArgs) -> Result<()> {
    let est = io::load_dataset(&a.estimate)?;
    let (truth_cal, truth_vol) = match &a.truth {
        Some(p) => {
            let t = io::load_dataset(p)?;
            (t.ground_truth.unwrap_or(t.calibration), t.volume)
        }
        None => {
            let t = est.ground_truth.clone().ok_or_else(|| {
                CliError::Usage(format!("{} has no {}; pass --truth", a.estimate.display(), io::GROUND_TRUTH_FILE))
            })?;
            (t, None)
        }
    };
    let z = scan_rmse(&est.calibration, &truth_cal, AxisMask::Z)?;
    let all = scan_rmse(&est.calibration, &truth_cal, AxisMask::ALL)?;
    let radial = radial_rmse(&est.calibration, &truth_cal, &est.scene)?;
    println!("rmse_z {z}");
    println!("rmse_xyz {all}");
    println!("rmse_radial {radial}");
    let mut header = vec!["rmse_z_m", "rmse_xyz_m", "rmse_radial_m"];
    let mut row = vec![z.to_string(), all.to_string(), radial.to_string()];
    if let (Some(ev), Some(tv)) = (&est.volume, &truth_vol) {
        let ncc = normalized_cross_correlation(&ev.albedo, &tv.albedo)?;
        println!("correlation {ncc}");
        header.push("correlation");
        row.push(ncc.to_string());
    }
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Failed(format!("{}: {e}", dir.display())))?;
        io::write_csv(&dir.join("rmse.csv"), &header, &[row])?;
    }
    Ok(())
}

fn unrectify(a: &UnrectifyArgs) -> Result<()> {
    distinct_output(&a.input, &a.out)?;
    let mut ds = io::load_dataset(&a.input)?;
    ds.transients = if a.inverse {
        io::rectify_confocal(&ds.transients, &ds.calibration, &ds.scene, a.half_bin)?
    } else {
        io::unrectify_confocal(&ds.transients, &ds.calibration, &ds.scene, a.half_bin)?
    };
    io::write_dataset(&a.out, &ds)?;
    println!("wrote {}", a.out.join(io::TRANSIENTS_FILE).display());
    Ok(())
}
