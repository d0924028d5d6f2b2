//! Command line front end: argument parsing, run configuration and dispatch
//! to the library.

pub mod output;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use collision_spin::central::{
    build_catalog, find_cc, multistart_seeds, CentralConfig, MultistartOptions, NewtonOptions,
};
use collision_spin::dynamics::{
    integrate, log_radius_slope, spin_and_arclength, stable_manifold_orbit, Controls, HomotheticField, Layout,
    Sample, SpinOptions, SpinSeries, StableManifoldOptions, TrajectoryRecord,
};
use collision_spin::geometry::to_chart;
use collision_spin::gradflow::{
    arclength_certificate, cauchy_time, run_model_flow, Flat, FlowOptions, ModelFlow, Normalization, Perturbation,
    Polynomial, Potential, Quadratic, Quartic,
};
use collision_spin::spin::{horizontal_lift, infinite_spin_certificate, spiral_curve, LiftOptions};
use collision_spin::MassSystem;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const THREADS_ENV: &str = "COLLISION_SPIN_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Domain(#[from] collision_spin::Error),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("invalid argument: {0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Domain(e) => e.kind(),
            CliError::Io(_) => "io",
            CliError::Usage(_) => "usage",
        }
    }

    /// Machine-readable form written to stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}

#[derive(Debug, Parser)]
#[command(name = "collision-spin", version, about = "Total-collision numerics for the planar n-body problem")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Multistart search for central configurations; JSON catalog output.
    CcFind(CcFindArgs),
    /// Integrate a preset collision orbit; CSV trajectory output.
    Integrate(IntegrateArgs),
    /// Horizontal lift of the spiral shape curve; CSV output.
    SpinDemo(SpinDemoArgs),
    /// Perturbed gradient flow of a model potential; CSV decay report.
    GradFlow(GradFlowArgs),
    /// Built-in central configuration catalogs for equal masses.
    Catalog(CatalogArgs),
}

/// Where the masses come from: `--masses 1,2,3`, inline JSON
/// `--masses '{"masses": [1, 2, 3]}'`, or a JSON file via `--config`.
#[derive(Debug, Clone, Args)]
pub struct MassArgs {
    #[arg(long)]
    pub masses: Option<String>,
    #[arg(long, conflicts_with = "masses")]
    pub config: Option<PathBuf>,
}

impl MassArgs {
    pub fn load(&self, default: Option<Vec<f64>>) -> Result<MassSystem, CliError> {
        if let Some(path) = &self.config {
            let doc = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            return Ok(MassSystem::from_json(&doc)?);
        }
        match &self.masses {
            Some(m) if m.trim_start().starts_with('{') => Ok(MassSystem::from_json(m)?),
            Some(m) => Ok(MassSystem::new(parse_list(m, "--masses")?)?),
            None => match default {
                Some(d) => Ok(MassSystem::new(d)?),
                None => Err(CliError::Usage("--masses or --config is required".into())),
            },
        }
    }
}

fn parse_list(s: &str, flag: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("{flag}: cannot parse '{t}' as a number")))
        })
        .collect()
}

fn positive(value: f64, flag: &str) -> Result<f64, CliError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(CliError::Usage(format!("{flag} must be positive, got {value}")))
    }
}

/// Thread pool capped by `COLLISION_SPIN_THREADS` (0 or unset: rayon default).
pub fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a nonnegative integer, got '{v}'")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub s0: Vec<[f64; 2]>,
    #[serde(rename = "V0")]
    pub value: f64,
    pub v0: f64,
    /// Restpoint spectrum as `[re, im]`.
    pub spectrum: Vec<[f64; 2]>,
    pub hessian_spectrum: Vec<f64>,
    pub degenerate: bool,
    pub morse_index: usize,
    pub residual: f64,
}

impl From<&CentralConfig> for CatalogEntry {
    fn from(cc: &CentralConfig) -> Self {
        Self {
            s0: cc.s0.iter().map(|c| [c.re, c.im]).collect(),
            value: cc.value,
            v0: cc.v0,
            spectrum: cc.restpoint_spectrum().iter().map(|l| [l.re, l.im]).collect(),
            hessian_spectrum: cc.hessian_spectrum.clone(),
            degenerate: cc.degenerate,
            morse_index: cc.morse_index(),
            residual: cc.residual,
        }
    }
}

/// Parallel multistart; results are collected in seed order, so the catalog
/// does not depend on the thread count.
pub fn parallel_multistart(sys: &MassSystem, opts: &MultistartOptions) -> Result<Vec<CentralConfig>, CliError> {
    let seeds = multistart_seeds(sys, opts);
    let results = thread_pool()?.install(|| seeds.par_iter().map(|s| find_cc(sys, s, &opts.newton)).collect());
    Ok(build_catalog(results, opts.dedupe))
}

#[derive(Debug, Args)]
pub struct CcFindArgs {
    #[command(flatten)]
    pub mass: MassArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub starts: usize,
    /// Radius of the chart ball holding the start points.
    #[arg(long, default_value_t = 3.0)]
    pub radius: f64,
    /// Newton tolerance on |grad V|.
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn cc_find(args: &CcFindArgs) -> Result<(), CliError> {
    let sys = args.mass.load(None)?;
    let opts = MultistartOptions {
        starts: args.starts,
        seed: args.seed,
        radius: positive(args.radius, "--radius")?,
        newton: NewtonOptions {
            tol: positive(args.tol, "--tol")?,
            ..NewtonOptions::default()
        },
        ..MultistartOptions::default()
    };
    let cat = parallel_multistart(&sys, &opts)?;
    let entries: Vec<CatalogEntry> = cat.iter().map(CatalogEntry::from).collect();
    output::emit(&output::json(&entries)?, args.output.as_deref())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    LagrangeHomothetic,
    EulerHomothetic,
    NearHomotheticPerturbed,
    SpiralDemo,
}

#[derive(Debug, Args)]
pub struct IntegrateArgs {
    #[arg(long, value_enum)]
    pub preset: Preset,
    /// Three masses for the homothetic presets (default 1,1,1).
    #[command(flatten)]
    pub mass: MassArgs,
    /// Energy level.
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub h: f64,
    /// End of the integration interval (the spiral demo: end time, default 1e4).
    #[arg(long)]
    pub tau_max: Option<f64>,
    /// Relative tolerance; the absolute tolerance is tol/100.
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    /// Stop at the restpoint capture criterion (off unless given).
    #[arg(long)]
    pub capture_tol: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Initial size r for the homothetic presets.
    #[arg(long, default_value_t = 1.0)]
    pub r0: f64,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Optional JSON summary (energy drift, spin, arclength, rates).
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

fn equilateral_positions() -> Vec<Complex64> {
    (0..3)
        .map(|k| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / 3.0))
        .collect()
}

fn collinear_positions() -> Vec<Complex64> {
    vec![Complex64::new(-1.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]
}

fn preset_cc(sys: &MassSystem, guess: &[Complex64]) -> Result<CentralConfig, CliError> {
    if sys.n() != 3 {
        return Err(CliError::Usage(format!("presets need three masses, got {}", sys.n())));
    }
    let s = to_chart(&sys.from_positions(guess)?)?.s;
    Ok(find_cc(sys, &s, &NewtonOptions::default())?)
}

#[derive(Debug, Serialize)]
struct IntegrateSummary {
    preset: String,
    masses: Vec<f64>,
    #[serde(rename = "V0")]
    value: f64,
    v0: f64,
    slowest_stable_rate: f64,
    termination: String,
    samples: usize,
    energy_drift: f64,
    ln_r_slope: Option<f64>,
    theta_final: f64,
    arclength_final: f64,
    theta_converged: bool,
    arclength_converged: bool,
    cauchy_time: Option<f64>,
    decay_rate: Option<f64>,
    bound_holds: bool,
}

fn summarize(preset: Preset, sys: &MassSystem, cc: &CentralConfig, rec: &TrajectoryRecord) -> IntegrateSummary {
    let report = spin_and_arclength(&SpinSeries::from_record(rec), &SpinOptions::default());
    let half = rec.samples.last().map_or(0.0, |s| s.time) / 2.0;
    let tail: Vec<Sample> = rec.samples.iter().filter(|s| s.time >= half).cloned().collect();
    IntegrateSummary {
        preset: preset.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default(),
        masses: sys.masses().to_vec(),
        value: cc.value,
        v0: cc.v0,
        slowest_stable_rate: cc.slowest_stable_rate(),
        termination: format!("{:?}", rec.termination),
        samples: rec.samples.len(),
        energy_drift: rec.energy_drift,
        ln_r_slope: log_radius_slope(&tail),
        theta_final: report.theta_final,
        arclength_final: report.arclength_final,
        theta_converged: report.theta_converged,
        arclength_converged: report.arclength_converged,
        cauchy_time: report.cauchy_time,
        decay_rate: report.decay_rate,
        bound_holds: report.bound_holds,
    }
}

fn integrate_cmd(args: &IntegrateArgs) -> Result<(), CliError> {
    let rtol = positive(args.tol, "--tol")?;
    if let Some(c) = args.capture_tol {
        positive(c, "--capture-tol")?;
    }
    if let Some(t) = args.tau_max {
        positive(t, "--tau-max")?;
    }
    if args.preset == Preset::SpiralDemo {
        let demo = SpinDemoArgs {
            c: 1.0,
            t_max: args.tau_max.unwrap_or(1e4),
            tol: rtol,
            t0: SPIRAL_T0,
            n: 3,
            samples: args.samples.unwrap_or(1001),
            output: args.output.clone(),
            summary: args.summary.clone(),
        };
        return spin_demo(&demo);
    }
    let sys = args.mass.load(Some(vec![1.0; 3]))?;
    let mut controls = Controls {
        rtol,
        atol: rtol * 1e-2,
        capture_tol: args.capture_tol,
        ..Controls::default()
    };
    let (cc, rec) = match args.preset {
        Preset::LagrangeHomothetic | Preset::EulerHomothetic => {
            let guess = if args.preset == Preset::LagrangeHomothetic {
                equilateral_positions()
            } else {
                collinear_positions()
            };
            let cc = preset_cc(&sys, &guess)?;
            let field = HomotheticField::new(&sys, args.h, &cc.s0, 1e-10)?;
            let start = field.initial_state(positive(args.r0, "--r0")?)?;
            controls.samples = args.samples.unwrap_or(controls.samples);
            let rec = integrate(&field, &start.to_vec(0.0), 0.0, args.tau_max.unwrap_or(50.0), &controls)?;
            (cc, rec)
        }
        Preset::NearHomotheticPerturbed => {
            let cc = preset_cc(&sys, &equilateral_positions())?;
            let mut opts = StableManifoldOptions {
                h: args.h,
                ..StableManifoldOptions::default()
            };
            controls.samples = args.samples.unwrap_or(opts.controls.samples);
            opts.controls = controls;
            if let Some(t) = args.tau_max {
                opts.tau_max = t;
            }
            let rec = stable_manifold_orbit(&sys, &cc, &opts)?;
            (cc, rec)
        }
        Preset::SpiralDemo => unreachable!(),
    };
    let layout = Layout::new(&sys);
    output::emit(&output::trajectory_csv(&layout, &rec.samples), args.output.as_deref())?;
    if let Some(path) = &args.summary {
        output::emit(&output::json(&summarize(args.preset, &sys, &cc, &rec))?, Some(path))?;
    }
    Ok(())
}

/// Start time of the spiral, just inside the unit disc.
pub const SPIRAL_T0: f64 = 1.0 + 1e-6;

#[derive(Debug, Args)]
pub struct SpinDemoArgs {
    /// Spiral rate.
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, default_value_t = 1e4)]
    pub t_max: f64,
    /// Relative quadrature tolerance; the absolute tolerance is tol/100.
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long, default_value_t = SPIRAL_T0)]
    pub t0: f64,
    /// Number of bodies; extra shape coordinates are zero.
    #[arg(long, default_value_t = 3)]
    pub n: usize,
    #[arg(long, default_value_t = 1001)]
    pub samples: usize,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Optional JSON with the logarithmic fit and divergence flags.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

fn spin_demo(args: &SpinDemoArgs) -> Result<(), CliError> {
    if args.n < 3 {
        return Err(CliError::Usage(format!("--n must be at least 3, got {}", args.n)));
    }
    let tol = positive(args.tol, "--tol")?;
    let curve = spiral_curve(args.c, args.t0, args.t_max, args.n - 2)?;
    let lift = horizontal_lift(
        &curve,
        0.0,
        &LiftOptions {
            rtol: tol,
            atol: tol * 1e-2,
            samples: args.samples,
            ..LiftOptions::default()
        },
    )?;
    output::emit(&output::spin_csv(&lift), args.output.as_deref())?;
    if let Some(path) = &args.summary {
        let cert = infinite_spin_certificate(&lift, LiftOptions::default().threshold)?;
        let doc = serde_json::json!({
            "c": args.c,
            "t0": args.t0,
            "t_max": args.t_max,
            "theta_final": lift.theta.last(),
            "max_abs_err": lift.max_abs_err,
            "max_rel_err": lift.max_rel_err,
            "max_J_residual": lift.j_residual.iter().copied().fold(0.0, f64::max),
            "max_rot_component_norm": lift.rotation_norm.iter().copied().fold(0.0, f64::max),
            "certificate": cert,
        });
        output::emit(&output::json(&doc)?, Some(path))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PotentialKind {
    Quad,
    Quartic,
    Flat,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormalizationKind {
    Explicit,
    Rescale,
}

#[derive(Debug, Args)]
pub struct GradFlowArgs {
    #[arg(long, value_enum)]
    pub potential: PotentialKind,
    /// JSON polynomial for `--potential file`.
    #[arg(long)]
    pub potential_file: Option<PathBuf>,
    #[arg(long, default_value_t = 1.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub k: f64,
    /// Size of the rotational perturbation, |gamma| = c |grad W|.
    #[arg(long, default_value_t = 0.0)]
    pub c: f64,
    #[arg(long, default_value = "0.1,0", allow_hyphen_values = true)]
    pub x0: String,
    #[arg(long, default_value_t = 100.0)]
    pub tau_max: f64,
    /// Constant C of the inequality |grad W|^2 >= C |W|^alpha.
    #[arg(long, default_value_t = 1.0)]
    pub constant: f64,
    #[arg(long, value_enum, default_value_t = NormalizationKind::Explicit)]
    pub normalization: NormalizationKind,
    #[arg(long, default_value_t = 2001)]
    pub samples: usize,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Optional JSON with lambda, epsilon, violation and arclength certificate.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

fn load_potential(args: &GradFlowArgs, dim: usize) -> Result<Arc<dyn Potential>, CliError> {
    Ok(match args.potential {
        PotentialKind::Quad => Arc::new(Quadratic { dim }),
        PotentialKind::Quartic => Arc::new(Quartic { dim }),
        PotentialKind::Flat => Arc::new(Flat { dim }),
        PotentialKind::File => {
            let path = args
                .potential_file
                .as_deref()
                .ok_or_else(|| CliError::Usage("--potential file needs --potential-file".into()))?;
            let doc = read(path)?;
            let p = Polynomial::from_json(&doc)?;
            if p.dim != dim {
                return Err(collision_spin::Error::Dimension {
                    expected: p.dim,
                    got: dim,
                }
                .into());
            }
            Arc::new(p)
        }
    })
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn grad_flow(args: &GradFlowArgs) -> Result<(), CliError> {
    let x0 = parse_list(&args.x0, "--x0")?;
    let potential = load_potential(args, x0.len())?;
    let constant = positive(args.constant, "--constant")?;
    let normalization = match args.normalization {
        NormalizationKind::Explicit => Normalization::ExplicitC(constant),
        NormalizationKind::Rescale => Normalization::RescaleW(constant),
    };
    let gamma = if args.c > 0.0 {
        Perturbation::Rotation { c: args.c }
    } else {
        Perturbation::None
    };
    let flow = ModelFlow::new(potential, args.alpha, args.k)
        .with_perturbation(gamma, args.c)
        .with_normalization(normalization);
    let rep = run_model_flow(
        &flow,
        &x0,
        positive(args.tau_max, "--tau-max")?,
        &FlowOptions {
            samples: args.samples,
            ..FlowOptions::default()
        },
    )?;
    output::emit(&output::decay_csv(&rep), args.output.as_deref())?;
    if let Some(path) = &args.summary {
        let cert = arclength_certificate(&rep);
        let doc = serde_json::json!({
            "potential": flow.potential.name(),
            "alpha": rep.alpha,
            "W0": rep.w0,
            "k2": rep.k2,
            "lambda": rep.lambda,
            "epsilon": rep.epsilon,
            "violation_max": rep.violation_max,
            "monotone": rep.monotone,
            "arclength_measured": rep.arclength.last(),
            "certificate": cert.as_ref().ok(),
            "certificate_error": cert.as_ref().err().map(|e| e.to_string()),
            "cauchy_time_1e-3": cauchy_time(&rep, 1e-3),
        });
        output::emit(&output::json(&doc)?, Some(path))?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct CatalogArgs {
    /// Numbers of equal bodies to catalog.
    #[arg(long, value_delimiter = ',', default_value = "3,4")]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 256)]
    pub starts: usize,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassCatalog {
    pub n: usize,
    pub masses: Vec<f64>,
    pub entries: Vec<CatalogEntry>,
}

fn catalog(args: &CatalogArgs) -> Result<(), CliError> {
    let mut out = Vec::new();
    for &n in &args.n {
        let sys = MassSystem::equal(n)?;
        let opts = MultistartOptions {
            starts: args.starts,
            seed: args.seed,
            ..MultistartOptions::default()
        };
        let cat = parallel_multistart(&sys, &opts)?;
        out.push(MassCatalog {
            n,
            masses: sys.masses().to_vec(),
            entries: cat.iter().map(CatalogEntry::from).collect(),
        });
    }
    output::emit(&output::json(&out)?, args.output.as_deref())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::CcFind(a) => cc_find(a),
        Command::Integrate(a) => integrate_cmd(a),
        Command::SpinDemo(a) => spin_demo(a),
        Command::GradFlow(a) => grad_flow(a),
        Command::Catalog(a) => catalog(a),
    }
}

/// Parses `argv` and runs; returns the process exit code (0 success,
/// 1 domain error with JSON on stderr, 2 usage error).
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            if e.exit_code() == 2 {
                eprintln!("error: {e}");
            } else {
                eprintln!("{}", e.to_json());
            }
            e.exit_code()
        }
    }
}
