//! Command-line front end.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::closed_loop::{self, fmt_num, Classifier, SimParams, Verdict};
use crate::error::Error;
use crate::exponent_chain::{classify_regime, run_chain, ChainMode, Envelope, RegimeInput, Terminal};
use crate::harness::{run_experiment, summarize_to_files, CampaignSummary, ExperimentConfig};
use crate::interval_sets::DensityMode;
use crate::system_functions::{sublevel_region, FamilySpec, ThresholdSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const MEASURE_GRID: usize = 256;

#[derive(Debug, Parser)]
#[command(name = "stabilab", version, about = "Least-squares self-tuning control laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one closed-loop trajectory.
    Simulate(SimulateArgs),
    /// Run a Monte Carlo campaign from a JSON configuration.
    Sweep(SweepArgs),
    /// Iterate the exponent recursion.
    Chain(ChainArgs),
    /// Density profile of S_b^L = {|f(x)| < L|x|^b}.
    Measure(MeasureArgs),
    /// Classify the stabilizability regime of a family.
    Regime(RegimeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyKind {
    Zero,
    Power,
    Exp,
    Islands,
    ThinningIslands,
}

/// Inline family flags, named after the family fields.
#[derive(Debug, Clone, Args)]
pub struct FamilyArgs {
    /// Family of the nonlinearity f.
    #[arg(long, value_enum)]
    pub family: Option<FamilyKind>,
    /// Power coefficient c (power).
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    /// Power exponent p (power, islands, thinning-islands); required for those.
    #[arg(long)]
    pub p: Option<f64>,
    /// Envelope coefficient k1 (exp, islands, thinning-islands).
    #[arg(long, default_value_t = 1.0)]
    pub k1: f64,
    /// Envelope rate k2 (exp, islands, thinning-islands).
    #[arg(long, default_value_t = 1.0)]
    pub k2: f64,
    /// Island coefficient (islands, thinning-islands).
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Island duty cycle (islands).
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
    /// Island period (islands, thinning-islands).
    #[arg(long, default_value_t = 20.0)]
    pub period: f64,
    /// Thinning exponent (thinning-islands, default 0.5). For `regime` it also
    /// sets the decay order reported for bounded sets (default 1).
    #[arg(long)]
    pub delta: Option<f64>,
}

impl FamilyArgs {
    fn spec(&self) -> Result<Option<FamilySpec>, CliError> {
        let Some(kind) = self.family else { return Ok(None) };
        let p = || self.p.ok_or_else(|| CliError::Usage(format!("--p is required for --family {}", kind_name(kind))));
        Ok(Some(match kind {
            FamilyKind::Zero => FamilySpec::Zero,
            FamilyKind::Power => FamilySpec::PurePower { c: self.c, p: p()? },
            FamilyKind::Exp => FamilySpec::PureExp { k1: self.k1, k2: self.k2 },
            FamilyKind::Islands => FamilySpec::Islands {
                p: p()?,
                scale: self.scale,
                epsilon: self.epsilon,
                period: self.period,
                k1: self.k1,
                k2: self.k2,
            },
            FamilyKind::ThinningIslands => FamilySpec::ThinningIslands {
                delta: self.delta.unwrap_or(0.5),
                period: self.period,
                p: p()?,
                scale: self.scale,
                k1: self.k1,
                k2: self.k2,
            },
        }))
    }

    fn required(&self) -> Result<FamilySpec, CliError> {
        self.spec()?.ok_or_else(|| CliError::Usage("--family is required".into()))
    }
}

fn kind_name(kind: FamilyKind) -> String {
    kind.to_possible_value().map(|v| v.get_name().to_owned()).unwrap_or_default()
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Experiment configuration; its family, prior and loop settings are used.
    #[arg(long, conflicts_with = "family")]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub family: FamilyArgs,
    /// Prior mean of θ [default: 0, or the config value].
    #[arg(long)]
    pub theta0: Option<f64>,
    /// Prior variance of θ [default: 1, or the config value].
    #[arg(long)]
    pub p0: Option<f64>,
    /// Initial output [default: 0, or the config value].
    #[arg(long)]
    pub y0: Option<f64>,
    /// Number of steps [default: 10000, or the config value].
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Generator seed [default: 0, or the config base_seed].
    #[arg(long)]
    pub seed: Option<u64>,
    /// |y| or intermediate magnitude counted as explosion [default: 1e100].
    #[arg(long)]
    pub overflow_cap: Option<f64>,
    /// Largest final average power counted as stabilized [default: 20].
    #[arg(long)]
    pub power_threshold: Option<f64>,
    /// Largest tolerated growth of average power over the last 90% [default: 2].
    #[arg(long)]
    pub trend_factor: Option<f64>,
    /// Trajectory CSV; metadata goes to <out>.meta.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for summary.csv, config.echo.json and samples/.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads [default: number of cores].
    #[arg(long, env = "STABILAB_WORKERS")]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Branch {
    I,
    Ii,
    Iii,
}

#[derive(Debug, Args)]
pub struct ChainArgs {
    #[arg(long, value_enum)]
    pub branch: Branch,
    #[arg(long)]
    pub b: f64,
    /// Starting point for branch ii [default: x_max + (b - 1 - x_max)/2].
    #[arg(long)]
    pub a0: Option<f64>,
    #[arg(long, default_value_t = 100_000)]
    pub max_iters: usize,
    /// Distance to x_min that ends branch iii.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// CSV with columns i,a_i,eps_i.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Symmetric,
    Sup,
}

#[derive(Debug, Args)]
pub struct MeasureArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    #[arg(long)]
    pub b: f64,
    #[arg(long = "L", default_value_t = 1.0)]
    pub l: f64,
    /// Comma-separated ascending radii.
    #[arg(long, value_delimiter = ',', default_value = "100,1000,10000")]
    pub radii: Vec<f64>,
    #[arg(long, value_enum, default_value_t = Mode::Symmetric)]
    pub mode: Mode,
    /// CSV with columns radius,density.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RegimeArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    #[arg(long)]
    pub b: f64,
    #[arg(long = "L", default_value_t = 1.0)]
    pub l: f64,
    /// Degree of a power envelope; the family's exponential envelope is used otherwise.
    #[arg(long)]
    pub a: Option<f64>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(Error),
    /// Work finished but some output is flagged invalid.
    Invalid(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(line) => {
            println!("{line}");
            EXIT_OK
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
        Err(CliError::Invalid(line)) => {
            println!("{line}");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(command: Command) -> Result<String, CliError> {
    match command {
        Command::Simulate(args) => simulate(args),
        Command::Sweep(args) => sweep(args),
        Command::Chain(args) => chain(args),
        Command::Measure(args) => measure(args),
        Command::Regime(args) => regime(args),
    }
}

fn simulate(args: SimulateArgs) -> Result<String, CliError> {
    let cfg = args.config.as_deref().map(ExperimentConfig::load).transpose()?;
    let family = match &cfg {
        Some(cfg) => cfg.family.clone(),
        None => args.family.required()?,
    };
    let pick = |flag: Option<f64>, from_cfg: Option<f64>, default: f64| flag.or(from_cfg).unwrap_or(default);
    let params = SimParams {
        f: family.build()?,
        theta0: pick(args.theta0, cfg.as_ref().map(|c| c.prior.theta0), 0.0),
        p0: pick(args.p0, cfg.as_ref().map(|c| c.prior.p0), 1.0),
        y0: pick(args.y0, cfg.as_ref().map(|c| c.y0), 0.0),
        horizon: args.horizon.or(cfg.as_ref().map(|c| c.horizon)).unwrap_or(10_000),
        seed: args.seed.or(cfg.as_ref().map(|c| c.base_seed)).unwrap_or(0),
        overflow_cap: pick(args.overflow_cap, cfg.as_ref().map(|c| c.overflow_cap), closed_loop::DEFAULT_OVERFLOW_CAP),
        classifier: Classifier::new(
            pick(args.power_threshold, cfg.as_ref().map(|c| c.power_threshold), 20.0),
            pick(args.trend_factor, cfg.as_ref().map(|c| c.trend_factor), 2.0),
        )?,
    };
    let traj = closed_loop::run(&params)?;
    if let Some(out) = &args.out {
        closed_loop::write_trajectory(out, &params, &traj)?;
    }
    let verdict = match traj.verdict {
        Verdict::Stabilized => "Stabilized".to_owned(),
        Verdict::Exploded { at } => format!("Exploded(at={at})"),
        Verdict::Inconclusive => "Inconclusive".to_owned(),
    };
    Ok(format!(
        "verdict={verdict} steps={} avg_power={} max_abs_y={} theta={} seed={}",
        traj.steps(),
        fmt_num(traj.final_avg_power()),
        fmt_num(traj.max_abs_y),
        fmt_num(traj.theta_true),
        params.seed
    ))
}

fn campaign_line(summary: &CampaignSummary, out: &std::path::Path) -> String {
    let trajectories: usize = summary.cells.iter().map(|c| c.trials()).sum();
    let stabilized: usize = summary.cells.iter().map(|c| c.n_stabilized).sum();
    let exploded: usize = summary.cells.iter().map(|c| c.n_exploded).sum();
    let invalid = summary.cells.iter().filter(|c| !c.valid).count();
    format!(
        "cells={} trajectories={trajectories} stabilized={stabilized} exploded={exploded} invalid={invalid} wall={:.2}s out={}",
        summary.cells.len(),
        summary.wall_clock.as_secs_f64(),
        out.display()
    )
}

fn sweep(args: SweepArgs) -> Result<String, CliError> {
    if args.workers == Some(0) {
        return Err(CliError::Usage("--workers must be >= 1".into()));
    }
    let cfg = ExperimentConfig::load(&args.config)?;
    match run_experiment(&cfg, args.workers) {
        Ok(summary) => {
            summarize_to_files(&summary, &args.out)?;
            Ok(campaign_line(&summary, &args.out))
        }
        Err(Error::ResourceCeiling { requested, limit, partial }) => {
            summarize_to_files(&partial, &args.out)?;
            eprintln!("error: {requested} trajectories requested, limit is {limit}; partial results written");
            Err(CliError::Invalid(campaign_line(&partial, &args.out)))
        }
        Err(e) => Err(e.into()),
    }
}

fn chain(args: ChainArgs) -> Result<String, CliError> {
    if args.a0.is_some() && args.branch != Branch::Ii {
        return Err(CliError::Usage("--a0 only applies to --branch ii".into()));
    }
    let mode = match args.branch {
        Branch::I => ChainMode::BranchI { b: args.b },
        Branch::Ii => ChainMode::BranchII { b: args.b, a0: args.a0 },
        Branch::Iii => ChainMode::BranchIII { b: args.b },
    };
    let result = run_chain(mode, args.max_iters, args.tol)?;
    if let Some(out) = &args.out {
        closed_loop::write_file(out, result.csv().as_bytes())?;
    }
    let branch = match args.branch {
        Branch::I => "I",
        Branch::Ii => "II",
        Branch::Iii => "III",
    };
    let tail = match result.terminal {
        Terminal::Escaped { k, a_k } => format!("escaped k={k} a_k={}", fmt_num(a_k)),
        Terminal::Converged { limit, iters } => format!("converged limit={} iters={iters}", fmt_num(limit)),
        Terminal::MaxIters { last, residual, iters } => {
            format!("max-iters last={} residual={} iters={iters}", fmt_num(last), fmt_num(residual))
        }
    };
    Ok(format!("branch={branch} b={} {tail}", fmt_num(args.b)))
}

fn measure(args: MeasureArgs) -> Result<String, CliError> {
    let family = args.family.required()?;
    if args.radii.is_empty() || args.radii.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
        return Err(CliError::Usage("--radii needs positive finite values".into()));
    }
    let f = family.build()?;
    let threshold = ThresholdSpec::power(args.l, args.b)?;
    let reach = args.radii.iter().cloned().fold(0.0, f64::max);
    let (mode, window) = match args.mode {
        Mode::Symmetric => (DensityMode::Symmetric, reach),
        Mode::Sup => (DensityMode::SUP_SHIFTED, 2.0 * reach),
    };
    let set = sublevel_region(&f, &threshold, (-window, window), MEASURE_GRID)?;
    let profile = set.density_profile(&args.radii, mode)?;
    if let Some(out) = &args.out {
        let mut csv = String::from("radius,density\n");
        for (r, d) in &profile {
            csv.push_str(&format!("{},{}\n", fmt_num(*r), fmt_num(*d)));
        }
        closed_loop::write_file(out, csv.as_bytes())?;
    }
    let cells: Vec<String> = profile.iter().map(|(r, d)| format!("l={} density={}", fmt_num(*r), fmt_num(*d))).collect();
    Ok(format!("measure={}(S) {}", if args.mode == Mode::Sup { "sup" } else { "symmetric" }, cells.join(" ")))
}

fn regime(args: RegimeArgs) -> Result<String, CliError> {
    let family = args.family.required()?;
    let delta = match family {
        FamilySpec::ThinningIslands { .. } => None,
        _ => args.family.delta,
    };
    let input = RegimeInput::from_family(&family, args.b, args.l, args.a, delta)?;
    let verdict = classify_regime(&input)?;
    let envelope = match input.envelope {
        Envelope::Exponential { k1, k2 } => format!("exp(k1={},k2={})", fmt_num(k1), fmt_num(k2)),
        Envelope::Power { a } => format!("power(a={})", fmt_num(a)),
    };
    Ok(format!(
        "verdict={verdict} family={} b={} L={} envelope={envelope}",
        family.label(),
        fmt_num(args.b),
        fmt_num(args.l)
    ))
}
