//! The `drsmpc` command line.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 infeasible or empty result,
//! 3 configuration, usage or file error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use drsmpc_core::constraints::{tighten, Halfspaces, TightenedSet};
use drsmpc_core::drprs::{row_groups, synthesize_halfspace_prs, PrsSpec, RiskMode, SampleSet};
use drsmpc_core::linalg::{dot, std_normal_quantile};
use drsmpc_core::model::true_gaussian_prs_direction;
use drsmpc_core::smpc::{feasible_region_scan, Controller, MpcConfig};
use drsmpc_core::Error;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::io::{self, IoError};
use crate::sim::{self, ClosedLoopSetup, ReliabilitySetup, RngStream, TRAINING_STREAM};

#[derive(Parser, Debug)]
#[command(name = "drsmpc", version, about = "Distributionally robust reachable sets and stochastic MPC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// CSV output path (stdout when absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Wasserstein radius.
    #[arg(long, global = true)]
    theta: Option<f64>,
    /// Fixed tightening radius for every state row.
    #[arg(long, global = true)]
    eta: Option<f64>,
    /// Headerless CSV of error samples, one per row.
    #[arg(long, global = true)]
    samples: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Exact reachable-set radii for Gaussian noise.
    PrsTrue,
    /// Data-driven radii for every state constraint row.
    DrPrs,
    /// Reliability of the radius over resampled training sets.
    Reliability,
    /// Closed-loop Monte-Carlo for each radius.
    Simulate,
    /// Feasibility of the first MPC problem over a grid of initial states.
    Region,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Mode {
    Var,
    Cvar,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Io(#[from] IoError),
    #[error("{0}")]
    File(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Model(#[from] Error),
    #[error("{0}")]
    Infeasible(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(IoError::Csv(_) | IoError::Parse { .. }) | CliError::File(_) | CliError::Usage(_) => 3,
            CliError::Infeasible(_) => 2,
            CliError::Io(IoError::Model(e)) | CliError::Model(e) => match e {
                Error::InitialInfeasible | Error::TightenedSetEmpty | Error::InfeasibleRadius { .. } => 2,
                Error::DimensionMismatch(_)
                | Error::NonFinite(_)
                | Error::Domain(_)
                | Error::EmptySampleSet
                | Error::Allocation { .. }
                | Error::NonContractive
                | Error::NotPsd(_)
                | Error::NotPositiveDefinite => 3,
                _ => 1,
            },
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code. The summary line goes to `log`.
pub fn run_command<I, T>(argv: I, log: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(log, "{e}");
            return if e.use_stderr() { 3 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            let _ = writeln!(log, "{summary}");
            0
        }
        Err(e) => {
            let _ = writeln!(log, "error: {e}");
            e.exit_code()
        }
    }
}

struct Context {
    cfg: ExperimentConfig,
    seed: u64,
    theta: f64,
    mode: RiskMode,
}

impl Context {
    fn spec(&self, p: f64) -> PrsSpec {
        PrsSpec {
            lambda_min: self.cfg.lambda_min,
            mode: self.mode,
            ..PrsSpec::new(p, self.theta)
        }
    }
}

fn execute(cli: &Cli) -> Result<String, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("--config is required".into()))?;
    let cfg = ExperimentConfig::load(path)?;
    if let Some(t) = cli.theta {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(CliError::Usage("--theta must be finite and >= 0".into()));
        }
    }
    if let Some(e) = cli.eta {
        if !(e >= 0.0 && e.is_finite()) {
            return Err(CliError::Usage("--eta must be finite and >= 0".into()));
        }
    }
    let ctx = Context {
        seed: cli.seed.unwrap_or(cfg.seed),
        theta: cli.theta.unwrap_or(cfg.theta),
        mode: match cli.mode {
            Some(Mode::Var) => RiskMode::VarByproduct,
            Some(Mode::Cvar) => RiskMode::Cvar,
            None => cfg.mode,
        },
        cfg,
    };
    let mut out: Box<dyn Write> = match &cli.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    };
    let summary = match cli.command {
        Command::PrsTrue => prs_true(&ctx, &mut out),
        Command::DrPrs => dr_prs(&ctx, cli, &mut out),
        Command::Reliability => reliability(&ctx, &mut out),
        Command::Simulate => simulate(&ctx, cli, &mut out),
        Command::Region => region(&ctx, cli, &mut out),
    };
    out.flush()?;
    summary
}

fn prs_true(ctx: &Context, out: &mut dyn Write) -> Result<String, CliError> {
    let cfg = &ctx.cfg;
    let sigma_e = cfg.tube_gain()?.stationary_error_cov(&cfg.noise()?)?;
    let (groups, reps) = row_groups(&cfg.h_mat, true);
    let eps = ctx.spec(cfg.p_x).epsilons(reps.len())?;
    let mut rows = Vec::with_capacity(groups.len());
    for (i, &g) in groups.iter().enumerate() {
        let h = cfg.h_mat.row(i);
        let var = dot(h, &sigma_e.mul_vec(h));
        let p = 1.0 - eps[g];
        let eta = if reps[g].1 {
            true_gaussian_prs_direction(&sigma_e, h, p)?
        } else {
            var.max(0.0).sqrt() * std_normal_quantile(p)?
        };
        rows.push((var, p, eta));
    }
    io::write_prs_true(out, &rows)?;
    let first = rows[0];
    Ok(format!(
        "prs-true: row 1 variance {:.6}, p {}, eta* {:.4} ({} rows)",
        first.0,
        first.1,
        first.2,
        rows.len()
    ))
}

fn training_samples(ctx: &Context, cli: &Cli) -> Result<SampleSet, CliError> {
    let cfg = &ctx.cfg;
    match &cli.samples {
        Some(p) => Ok(io::read_samples(File::open(p)?, cfg.nx())?),
        None => {
            let mut rng = RngStream::new(ctx.seed, TRAINING_STREAM).rng();
            Ok(sim::draw_error_samples(cfg.sampling, cfg.m, &cfg.tube_gain()?, &cfg.noise()?, &mut rng)?)
        }
    }
}

fn dr_prs(ctx: &Context, cli: &Cli, out: &mut dyn Write) -> Result<String, CliError> {
    let samples = training_samples(ctx, cli)?;
    let prs = synthesize_halfspace_prs(&samples, &ctx.cfg.state_set()?, &ctx.spec(ctx.cfg.p_x), true)?;
    io::write_dr_prs(out, &prs.etas, &prs.epsilons)?;
    let etas: Vec<String> = prs.etas.iter().map(|e| format!("{e:.4}")).collect();
    Ok(format!(
        "dr-prs: {} samples, theta {}, eta [{}]",
        samples.len(),
        ctx.theta,
        etas.join(", ")
    ))
}

fn reliability(ctx: &Context, out: &mut dyn Write) -> Result<String, CliError> {
    let cfg = &ctx.cfg;
    let setup = ReliabilitySetup {
        gain: cfg.tube_gain()?,
        noise: cfg.noise()?,
        sampling: cfg.sampling,
        coordinate: cfg.reliability_coordinate,
        p: cfg.p_x,
        lambda_min: cfg.lambda_min,
        m_values: cfg.reliability_m.clone(),
        thetas: cfg.reliability_thetas.clone(),
        n_mc: cfg.n_mc,
        n_v: cfg.n_v,
        seed: ctx.seed,
    };
    let rows = sim::reliability_experiment(&setup)?;
    io::write_reliability(out, &rows)?;
    let at_zero: Vec<String> = rows
        .iter()
        .filter(|r| r.theta == 0.0)
        .map(|r| format!("r(0, M={}) = {:.3}", r.m, r.r))
        .collect();
    Ok(format!("reliability: {} rows; {}", rows.len(), at_zero.join(", ")))
}

/// State rows tightened by `eta` each, or by a radius synthesized from the
/// training samples when `eta` is `None`; input rows always use the
/// synthesized radius of `L K e`.
fn controller(ctx: &Context, cli: &Cli, eta: Option<f64>) -> Result<(Controller, Vec<f64>), CliError> {
    let cfg = &ctx.cfg;
    let system = cfg.system()?;
    let gain = cfg.tube_gain()?;
    let x = cfg.state_set()?;
    let v = cfg.input_set()?;
    let samples = if eta.is_none() || !v.is_empty() {
        Some(training_samples(ctx, cli)?)
    } else {
        None
    };
    let samples = || samples.as_ref().expect("drawn above");
    let z = match eta {
        Some(eta) => tighten(&x, &vec![eta; x.len()])?,
        None => {
            let prs = synthesize_halfspace_prs(samples(), &x, &ctx.spec(cfg.p_x), true)?;
            tighten(&x, &prs.etas)?
        }
    };
    let v_set = if v.is_empty() {
        TightenedSet::untightened(v)
    } else {
        let lk = Halfspaces::new(v.matrix().matmul(gain.k()), v.offsets().to_vec())?;
        let prs = synthesize_halfspace_prs(samples(), &lk, &ctx.spec(cfg.p_u), true)?;
        tighten(&v, &prs.etas)?
    };
    let etas = z.offsets().to_vec();
    let mpc = MpcConfig::new(system, gain, cfg.q.clone(), cfg.r.clone(), cfg.horizon, z, v_set)?;
    Ok((Controller::new(mpc)?, etas))
}

fn simulate(ctx: &Context, cli: &Cli, out: &mut dyn Write) -> Result<String, CliError> {
    let cfg = &ctx.cfg;
    let etas: Vec<Option<f64>> = match (cli.eta, &cfg.simulate_etas) {
        (Some(e), _) => vec![Some(e)],
        (None, Some(list)) => list.iter().copied().map(Some).collect(),
        (None, None) => vec![None],
    };
    let mut rows = Vec::with_capacity(etas.len());
    for eta in etas {
        let (controller, offsets) = controller(ctx, cli, eta)?;
        let setup = ClosedLoopSetup {
            controller,
            noise: cfg.noise()?,
            x0: cfg.x0.clone(),
            steps: cfg.t,
            state_constraints: cfg.state_set()?,
        };
        let metrics = sim::monte_carlo(&setup, cfg.n_s, ctx.seed)?;
        rows.push((eta.unwrap_or(offsets[0]), metrics));
    }
    io::write_simulate(out, &rows)?;
    let parts: Vec<String> = rows
        .iter()
        .map(|(eta, m)| {
            format!(
                "eta {eta:.4}: Av[J] {:.4}, violations {}/{}, infeasible {}",
                m.avg_cost, m.violation_count, m.total_state_samples, m.infeasible_at_start
            )
        })
        .collect();
    let summary = format!("simulate: {}", parts.join("; "));
    if rows.iter().any(|(_, m)| m.infeasible_at_start > 0) {
        return Err(CliError::Infeasible(format!("{summary} (initial state infeasible)")));
    }
    Ok(summary)
}

fn region(ctx: &Context, cli: &Cli, out: &mut dyn Write) -> Result<String, CliError> {
    let cfg = &ctx.cfg;
    if cfg.nx() != 2 {
        return Err(CliError::Usage("region needs a two-dimensional state".into()));
    }
    let (controller, _) = controller(ctx, cli, cli.eta.or(cfg.region_eta))?;
    let xs1 = cfg.region_x1.points();
    let xs2 = cfg.region_x2.points();
    let grid: Vec<Vec<f64>> = xs2
        .iter()
        .flat_map(|&b| xs1.iter().map(move |&a| vec![a, b]))
        .collect();
    let feasible = feasible_region_scan(&grid, controller.config())?;
    let points: Vec<(f64, f64, bool)> = grid.iter().zip(&feasible).map(|(p, &f)| (p[0], p[1], f)).collect();
    io::write_region(out, &points)?;
    let count = feasible.iter().filter(|&&f| f).count();
    let summary = format!("region: {count}/{} grid points feasible", grid.len());
    if count == 0 {
        return Err(CliError::Infeasible(summary));
    }
    Ok(summary)
}
