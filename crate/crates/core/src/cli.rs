//! Command-line front end: `train`, `simulate`, and `compare`.
//!
//! Everything here is a thin orchestration layer over the library modules;
//! the commands parse arguments, wire the pieces together, write artifacts,
//! and map errors onto process exit codes. The training loop itself is
//! exposed as [`train_run`] so tests and other callers can drive it
//! in-process and inspect the full [`TrainReport`] without going through the
//! filesystem.

use std::cell::RefCell;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Parser, Subcommand};

use crate::checkpoint::{Checkpoint, CheckpointError, FORMAT_VERSION};
use crate::config::{ConfigError, RunConfig, SamplerCfg};
use crate::expr::{parse_system, OdeSystem};
use crate::loss::{adaptive_update, LossEngine, LossError, SamplingPlan, Weights};
use crate::metrics::{self, ComparisonReport, MetricsError};
use crate::models::{self, ModelError, SmibScenario};
use crate::net::{init_ensemble, NetError, NetworkEnsemble};
use crate::odeint::{integrate_adaptive, integrate_fixed, OdeError, Provenance, Trajectory};
use crate::optim::{
    describe_layout, minimize, warm_start, CallbackCtx, CallbackOutcome, OptimConfig, OptimError,
    StopReason, TrainReport,
};
use crate::plot::{line_chart, ChartConfig, Series};

/// Success.
pub const EXIT_OK: i32 = 0;
/// Training made no progress at all (line search failed on iteration 0).
pub const EXIT_NO_PROGRESS: i32 = 1;
/// Bad arguments, unreadable or inconsistent configuration and input files.
pub const EXIT_USAGE: i32 = 2;
/// Numeric blow-up: non-finite objective at the start, or an integration
/// that diverged or stalled.
pub const EXIT_NUMERIC: i32 = 3;

/// Default tolerance for the adaptive reference integrator.
pub const DEFAULT_TOL: f64 = 1e-8;
/// Default output grid spacing for reference trajectories.
pub const DEFAULT_OUTPUT_DT: f64 = 0.01;

#[derive(Debug, Parser)]
#[command(
    name = "pinnworks",
    version,
    about = "Train neural ODE solvers against their governing equations and \
             compare them with classical Runge-Kutta references"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a run-configuration file
    Train(TrainArgs),
    /// Integrate a system with a Runge-Kutta solver and write a CSV trajectory
    Simulate(SimulateArgs),
    /// Evaluate a trained checkpoint against the adaptive reference solver
    Compare(CompareArgs),
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// Run-configuration file (INI)
    #[arg(long)]
    pub config: PathBuf,
    /// Override the seed from the configuration
    #[arg(long)]
    pub seed: Option<u64>,
    /// Start from a previous checkpoint's parameters instead of random init
    #[arg(long)]
    pub warm_start: Option<PathBuf>,
    /// Directory for the checkpoint, report, and loss history
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
#[command(group(ArgGroup::new("source").required(true).args(["preset", "system"])))]
pub struct SimulateArgs {
    /// Built-in scenario: normal, case1, case2, pole-slipping, undamped
    #[arg(long)]
    pub preset: Option<String>,
    /// Path to a system-description file
    #[arg(long)]
    pub system: Option<PathBuf>,
    /// Fixed step size; selects the fixed-step RK4 integrator
    #[arg(long, conflicts_with = "tol")]
    pub dt: Option<f64>,
    /// Error tolerance; selects the adaptive integrator (the default,
    /// with tolerance 1e-8)
    #[arg(long)]
    pub tol: Option<f64>,
    /// Output CSV path
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
#[command(group(ArgGroup::new("source").required(true).args(["preset", "system"])))]
pub struct CompareArgs {
    /// Trained model checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Built-in scenario: normal, case1, case2, pole-slipping, undamped
    #[arg(long)]
    pub preset: Option<String>,
    /// Path to a system-description file
    #[arg(long)]
    pub system: Option<PathBuf>,
    /// Directory for the report, error CSV, and SVG plots
    #[arg(long)]
    pub out: PathBuf,
}

/// Anything a command can fail with, each variant mapping onto an exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("{0}")]
    Net(#[from] NetError),
    #[error("{0}")]
    Loss(#[from] LossError),
    #[error("{0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("{0}")]
    Optim(#[from] OptimError),
    #[error("{0}")]
    Ode(#[from] OdeError),
    #[error("{0}")]
    Metrics(#[from] MetricsError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    /// The process exit code this failure maps to.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Optim(OptimError::NonFiniteStart) => EXIT_NUMERIC,
            CliError::Ode(OdeError::NonFinite { .. }) => EXIT_NUMERIC,
            CliError::Ode(OdeError::StepUnderflow { .. }) => EXIT_NUMERIC,
            _ => EXIT_USAGE,
        }
    }
}

/// Parses `argv` and runs the selected command, returning the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(argv) {
        Ok(cli) => match cli.command {
            Command::Train(a) => cmd_train(&a),
            Command::Simulate(a) => cmd_simulate(&a),
            Command::Compare(a) => cmd_compare(&a),
        },
        Err(e) => {
            let _ = e.print();
            e.exit_code()
        }
    }
}

// ---------------------------------------------------------------------------
// train

/// A finished training run, with everything needed to save or evaluate it.
#[derive(Debug)]
pub struct TrainedModel {
    pub system: OdeSystem,
    /// Present when the system came from a built-in preset.
    pub scenario: Option<SmibScenario>,
    pub ensemble: NetworkEnsemble,
    pub report: TrainReport,
    /// Loss-term weights at the end of the run.
    pub weights: Weights,
    /// Number of interior sample points the objective used.
    pub interior_points: usize,
    /// Log lines produced by adaptive re-weighting (skipped terms etc.).
    pub notes: Vec<String>,
}

/// Runs one training job described by `cfg`, optionally warm-starting from a
/// checkpoint. This is the whole trainer: everything the `train` subcommand
/// does besides filesystem I/O happens in here.
pub fn train_run(cfg: &RunConfig, warm: Option<&Checkpoint>) -> Result<TrainedModel, CliError> {
    let (system, scenario) = cfg.build_system()?;
    let n = system.n_states();
    let (ens, mut theta0) = init_ensemble(cfg.mode, n, &cfg.hidden, cfg.seed)?;

    if let Some(ck) = warm {
        if ck.state_names != system.state_names() {
            return Err(CliError::Invalid(format!(
                "warm-start checkpoint is for states [{}] but the system has [{}]",
                ck.state_names.join(", "),
                system.state_names().join(", ")
            )));
        }
        if ck.mode != cfg.mode {
            return Err(CliError::Invalid(format!(
                "warm-start checkpoint was trained in {} mode but the run is configured for {}",
                ck.mode, cfg.mode
            )));
        }
        let ens_dims: Vec<Vec<usize>> = ens.nets().iter().map(|s| s.dims().to_vec()).collect();
        if ck.dims != ens_dims {
            return Err(CliError::Invalid(format!(
                "warm-start checkpoint layout {:?} does not match the configured layout {:?}",
                ck.dims, ens_dims
            )));
        }
        theta0 = warm_start(&ck.theta, &ens)?;
    }

    let (t0, t1) = system.domain();
    let plan = match &cfg.sampler {
        SamplerCfg::Grid { dt } => SamplingPlan::grid(t0, t1, *dt)?,
        SamplerCfg::MonteCarlo { n, seed } => {
            SamplingPlan::monte_carlo(t0, t1, *n, seed.unwrap_or(cfg.seed))?
        }
    };
    let interior_points = plan.interior().len();

    let engine = RefCell::new(LossEngine::new(&system, ens.clone(), &plan, cfg.quadrature)?);
    let weights = RefCell::new(Weights::ones(n));
    let notes = RefCell::new(Vec::new());
    let adaptive = cfg.adaptive.clone();

    let fg = |theta: &[f64], grad: &mut [f64]| -> f64 {
        let (total, _) = engine
            .borrow_mut()
            .total_with_gradient(theta, &weights.borrow(), grad)
            .expect("theta length is fixed for the whole run");
        total
    };
    let callback = |ctx: &CallbackCtx<'_>| -> CallbackOutcome {
        if !adaptive.enabled || !ctx.iteration.is_multiple_of(adaptive.period) {
            return CallbackOutcome::default();
        }
        let grads = engine
            .borrow_mut()
            .per_term_gradients(ctx.theta, adaptive.adapt_residual)
            .expect("theta length is fixed for the whole run");
        let mut w = weights.borrow_mut();
        let report = adaptive_update(&mut w, &grads, adaptive.gamma, adaptive.adapt_residual);
        for j in &report.skipped_boundary {
            notes
                .borrow_mut()
                .push(format!("iteration {}: boundary weight {j} left unchanged (zero mean gradient)", ctx.iteration));
        }
        for i in &report.skipped_residual {
            notes
                .borrow_mut()
                .push(format!("iteration {}: residual weight {i} left unchanged (zero mean gradient)", ctx.iteration));
        }
        if report.changed {
            let snapshot: Vec<f64> = w.residual.iter().chain(w.boundary.iter()).copied().collect();
            CallbackOutcome { objective_changed: true, weight_snapshot: Some(snapshot) }
        } else {
            CallbackOutcome::default()
        }
    };

    let opt_cfg = OptimConfig {
        max_iterations: cfg.max_iterations,
        grad_tol: cfg.grad_tol,
        loss_delta_tol: cfg.loss_delta_tol,
        ..OptimConfig::default()
    };
    let report = minimize(fg, &theta0, &opt_cfg, callback)?;

    Ok(TrainedModel {
        system,
        scenario,
        ensemble: ens,
        report,
        weights: weights.into_inner(),
        interior_points,
        notes: notes.into_inner(),
    })
}

/// Packages a finished run as a checkpoint carrying the config digest.
pub fn checkpoint_from(cfg: &RunConfig, model: &TrainedModel) -> Checkpoint {
    Checkpoint {
        version: FORMAT_VERSION,
        mode: model.ensemble.mode(),
        state_names: model.system.state_names().to_vec(),
        dims: model.ensemble.nets().iter().map(|s| s.dims().to_vec()).collect(),
        theta: model.report.final_theta.clone(),
        config_digest: cfg.digest(),
        final_loss: *model
            .report
            .loss_history
            .last()
            .expect("loss history always contains the initial loss"),
        iterations: model.report.iterations,
    }
}

pub fn cmd_train(args: &TrainArgs) -> i32 {
    match train_inner(args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn train_inner(args: &TrainArgs) -> Result<i32, CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(w) = &args.warm_start {
        cfg.warm_start = Some(w.clone());
    }
    cfg.out_dir = Some(args.out.clone());
    fs::create_dir_all(&args.out).map_err(|source| CliError::Io {
        path: args.out.clone(),
        source,
    })?;

    let warm = match &cfg.warm_start {
        Some(path) => Some(Checkpoint::load(path)?),
        None => None,
    };

    let model = match train_run(&cfg, warm.as_ref()) {
        Ok(m) => m,
        Err(e) => {
            // Leave a record of the failed run next to where the artifacts
            // would have gone; useful when the command ran unattended.
            let note = format!("command = train\nstatus = failed\nerror = {e}\n");
            let _ = fs::write(args.out.join("report.txt"), note);
            return Err(e);
        }
    };

    write_train_artifacts(&args.out, &cfg, &model)?;

    let r = &model.report;
    println!(
        "trained {} for {} iterations ({} evaluations, {:.3}s): {}",
        describe_layout(&model.ensemble),
        r.iterations,
        r.n_evals,
        r.wall_seconds,
        r.stop
    );
    println!(
        "loss {:.6e} -> {:.6e}",
        r.loss_history.first().unwrap(),
        r.loss_history.last().unwrap()
    );
    for line in &model.notes {
        println!("note: {line}");
    }
    println!("artifacts written to {}", args.out.display());

    if r.stop == StopReason::LineSearchFailure && r.iterations == 0 {
        eprintln!("error: the line search failed before completing a single iteration");
        return Ok(EXIT_NO_PROGRESS);
    }
    Ok(EXIT_OK)
}

/// Writes the full artifact set for a finished run into `dir`: the
/// checkpoint, a key = value report, the loss history, and (when adaptive
/// re-weighting produced any) the weight history.
pub fn write_train_artifacts(dir: &Path, cfg: &RunConfig, model: &TrainedModel) -> Result<(), CliError> {
    let ck = checkpoint_from(cfg, model);
    ck.save(&dir.join("model.ckpt"))?;

    let mut csv = String::from("iteration,total_loss\n");
    for (i, loss) in model.report.loss_history.iter().enumerate() {
        let _ = writeln!(csv, "{i},{loss:.16e}");
    }
    write_file(&dir.join("loss_history.csv"), &csv)?;

    if !model.report.weight_history.is_empty() {
        let names = model.system.state_names();
        let mut w = String::from("iteration");
        for n in names {
            let _ = write!(w, ",w_residual_{n}");
        }
        for n in names {
            let _ = write!(w, ",w_boundary_{n}");
        }
        w.push('\n');
        for (it, snapshot) in &model.report.weight_history {
            let _ = write!(w, "{it}");
            for v in snapshot {
                let _ = write!(w, ",{v:.16e}");
            }
            w.push('\n');
        }
        write_file(&dir.join("weight_history.csv"), &w)?;
    }

    let r = &model.report;
    let mut rep = String::new();
    let _ = writeln!(rep, "command = train");
    let _ = writeln!(rep, "status = ok");
    let _ = writeln!(rep, "layout = {}", describe_layout(&model.ensemble));
    let _ = writeln!(rep, "states = {}", model.system.state_names().join(","));
    let _ = writeln!(rep, "sampler = {}", sampler_summary(&cfg.sampler, model.interior_points));
    let _ = writeln!(rep, "quadrature = {}", cfg.quadrature);
    let _ = writeln!(rep, "seed = {}", cfg.seed);
    let _ = writeln!(rep, "config_digest = {}", cfg.digest());
    match &cfg.warm_start {
        Some(p) => {
            let _ = writeln!(rep, "warm_start = {}", p.display());
        }
        None => {
            let _ = writeln!(rep, "warm_start = none");
        }
    }
    let _ = writeln!(rep, "stop_reason = {}", r.stop);
    let _ = writeln!(rep, "iterations = {}", r.iterations);
    let _ = writeln!(rep, "function_evaluations = {}", r.n_evals);
    let _ = writeln!(rep, "initial_loss = {:.16e}", r.loss_history.first().unwrap());
    let _ = writeln!(rep, "final_loss = {:.16e}", r.loss_history.last().unwrap());
    let _ = writeln!(rep, "wall_seconds = {:.3}", r.wall_seconds);
    let _ = writeln!(rep, "max_h_asymmetry = {:e}", r.max_h_asymmetry);
    let _ = writeln!(rep, "weight_updates = {}", r.weight_history.len());
    let _ = writeln!(rep, "final_weights_residual = {}", join_f64(&model.weights.residual));
    let _ = writeln!(rep, "final_weights_boundary = {}", join_f64(&model.weights.boundary));
    for line in &model.notes {
        let _ = writeln!(rep, "note = {line}");
    }
    write_file(&dir.join("report.txt"), &rep)
}

fn sampler_summary(sampler: &SamplerCfg, interior: usize) -> String {
    match sampler {
        SamplerCfg::Grid { dt } => format!("grid dt={dt} ({interior} interior points)"),
        SamplerCfg::MonteCarlo { n, seed } => match seed {
            Some(s) => format!("monte-carlo n={n} seed={s}"),
            None => format!("monte-carlo n={n} (seed follows the run seed)"),
        },
    }
}

fn join_f64(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",")
}

// ---------------------------------------------------------------------------
// simulate

pub fn cmd_simulate(args: &SimulateArgs) -> i32 {
    match simulate_inner(args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn simulate_inner(args: &SimulateArgs) -> Result<i32, CliError> {
    let (system, scenario) = load_source(args.preset.as_deref(), args.system.as_deref())?;
    let (t0, t1) = system.domain();

    let result = match (args.dt, args.tol) {
        (Some(dt), None) => {
            println!("solver: fixed-step RK4, dt = {dt}");
            integrate_fixed(&system, dt)
        }
        (None, tol) => {
            let tol = tol.unwrap_or(DEFAULT_TOL);
            println!(
                "solver: adaptive Dormand-Prince 5(4), tol = {tol:e}, output step = {DEFAULT_OUTPUT_DT}"
            );
            integrate_adaptive(&system, tol, tol, DEFAULT_OUTPUT_DT)
        }
        (Some(_), Some(_)) => {
            return Err(CliError::Invalid(
                "--dt and --tol select different integrators; give only one".into(),
            ))
        }
    };

    let energy = energy_coefficients(scenario.as_ref());
    match result {
        Ok(traj) => {
            write_file(&args.out, &trajectory_csv(&traj, system.state_names(), energy))?;
            println!(
                "{} rows over [{t0}, {t1}] ({})",
                traj.len(),
                traj.provenance()
            );
            print_final_state(&traj, &system, scenario.as_ref());
            println!("wrote {}", args.out.display());
            Ok(EXIT_OK)
        }
        Err(OdeError::NonFinite { at_time, partial }) => {
            write_file(&args.out, &trajectory_csv(&partial, system.state_names(), energy))?;
            eprintln!(
                "error: state became non-finite at t = {at_time}; wrote the {} rows reached so far to {}",
                partial.len(),
                args.out.display()
            );
            Ok(EXIT_NUMERIC)
        }
        Err(e) => Err(e.into()),
    }
}

/// K1 and K2 when the trajectory carries the rotor-dynamics invariant
/// `E = omega^2/2 - K1*delta - K2*cos(delta)`; only built-in presets do.
fn energy_coefficients(scenario: Option<&SmibScenario>) -> Option<(f64, f64)> {
    scenario.map(|s| (s.k1, s.k2))
}

/// The conserved quantity of the undamped rotor equation. With damping it
/// decays, which makes it a useful diagnostic in both regimes.
pub fn smib_energy(k1: f64, k2: f64, delta: f64, omega: f64) -> f64 {
    0.5 * omega * omega - k1 * delta - k2 * delta.cos()
}

/// Renders a trajectory as CSV with 17-significant-digit values, one `t`
/// column plus one column per state, plus an `energy` column when the
/// invariant's coefficients are known.
pub fn trajectory_csv(traj: &Trajectory, names: &[String], energy: Option<(f64, f64)>) -> String {
    let mut out = String::from("t");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    if energy.is_some() {
        out.push_str(",energy");
    }
    out.push('\n');
    for k in 0..traj.len() {
        let _ = write!(out, "{:.16e}", traj.times()[k]);
        let row = traj.row(k);
        for v in row {
            let _ = write!(out, ",{v:.16e}");
        }
        if let Some((k1, k2)) = energy {
            let _ = write!(out, ",{:.16e}", smib_energy(k1, k2, row[0], row[1]));
        }
        out.push('\n');
    }
    out
}

fn print_final_state(traj: &Trajectory, system: &OdeSystem, scenario: Option<&SmibScenario>) {
    let last = traj.last_row();
    let fin: Vec<String> = system
        .state_names()
        .iter()
        .zip(last)
        .map(|(n, v)| format!("{n} = {v:.6e}"))
        .collect();
    println!("final state: {}", fin.join(", "));
    if let Some(s) = scenario {
        match models::equilibrium(s.k1, s.k2) {
            Some((de, we)) => {
                let dd = metrics::wrap_angle(last[0] - de);
                let dw = last[1] - we;
                let reached =
                    dd.abs() <= metrics::DEFAULT_EQUILIBRIUM_TOL && dw.abs() <= metrics::DEFAULT_EQUILIBRIUM_TOL;
                println!(
                    "stable equilibrium: delta* = {de:.6e}, omega* = {we:.6e}; final offset ({dd:.3e}, {dw:.3e}) -> {}",
                    if reached { "settled" } else { "not settled" }
                );
            }
            None => println!("no stable equilibrium exists for this scenario"),
        }
    }
}

// ---------------------------------------------------------------------------
// compare

pub fn cmd_compare(args: &CompareArgs) -> i32 {
    match compare_inner(args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn compare_inner(args: &CompareArgs) -> Result<i32, CliError> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let ens = ck.ensemble()?;
    let (system, scenario) = load_source(args.preset.as_deref(), args.system.as_deref())?;
    if ck.state_names != system.state_names() {
        return Err(CliError::Invalid(format!(
            "checkpoint models states [{}] but the system has [{}]",
            ck.state_names.join(", "),
            system.state_names().join(", ")
        )));
    }

    let reference = integrate_adaptive(&system, DEFAULT_TOL, DEFAULT_TOL, DEFAULT_OUTPUT_DT)?;
    let model = model_trajectory(&ens, &ck.theta, reference.times())?;
    let equilibrium = scenario.as_ref().and_then(|s| models::equilibrium(s.k1, s.k2));
    let report = metrics::compare(&reference, &model, equilibrium, metrics::DEFAULT_EQUILIBRIUM_TOL)?;

    fs::create_dir_all(&args.out).map_err(|source| CliError::Io {
        path: args.out.clone(),
        source,
    })?;
    write_compare_artifacts(&args.out, &ck, &system, &reference, &model, &report, equilibrium)?;

    for (i, name) in system.state_names().iter().enumerate() {
        println!("rmse {name} = {:.6e}", report.rmse[i]);
    }
    println!(
        "max |error| = {:.6e} ({} at t = {})",
        report.max_abs_error,
        system.state_names()[report.max_abs_error_var],
        report.max_abs_error_time
    );
    if equilibrium.is_some() {
        println!(
            "model endpoint {} the stable equilibrium",
            if report.equilibrium_reached { "reaches" } else { "misses" }
        );
    }
    println!("artifacts written to {}", args.out.display());
    Ok(EXIT_OK)
}

/// Evaluates the network on each requested time to build a trajectory
/// comparable with a reference solution on the same grid.
pub fn model_trajectory(
    ens: &NetworkEnsemble,
    theta: &[f64],
    times: &[f64],
) -> Result<Trajectory, CliError> {
    let n = ens.state_count();
    let mut values = Vec::with_capacity(times.len() * n);
    for &t in times {
        values.extend(ens.forward(t, theta)?);
    }
    Ok(Trajectory::from_parts(times.to_vec(), values, n, Provenance::Pinn)?)
}

fn column(traj: &Trajectory, var: usize) -> Vec<f64> {
    (0..traj.len()).map(|k| traj.value(k, var)).collect()
}

#[allow(clippy::too_many_arguments)]
fn write_compare_artifacts(
    dir: &Path,
    ck: &Checkpoint,
    system: &OdeSystem,
    reference: &Trajectory,
    model: &Trajectory,
    report: &ComparisonReport,
    equilibrium: Option<(f64, f64)>,
) -> Result<(), CliError> {
    let names = system.state_names();

    let mut rep = String::new();
    let _ = writeln!(rep, "command = compare");
    let _ = writeln!(rep, "checkpoint_mode = {}", ck.mode);
    let _ = writeln!(rep, "checkpoint_iterations = {}", ck.iterations);
    let _ = writeln!(rep, "checkpoint_final_loss = {:.16e}", ck.final_loss);
    let _ = writeln!(rep, "config_digest = {}", ck.config_digest);
    let _ = writeln!(rep, "grid_points = {}", reference.len());
    for (i, name) in names.iter().enumerate() {
        let _ = writeln!(rep, "rmse_{name} = {:.16e}", report.rmse[i]);
    }
    let _ = writeln!(rep, "pooled_rmse = {:.16e}", report.pooled_rmse);
    let _ = writeln!(rep, "max_abs_error = {:.16e}", report.max_abs_error);
    let _ = writeln!(rep, "max_abs_error_time = {}", report.max_abs_error_time);
    let _ = writeln!(rep, "max_abs_error_variable = {}", names[report.max_abs_error_var]);
    match equilibrium {
        Some(_) => {
            let _ = writeln!(
                rep,
                "equilibrium_reached = {}",
                if report.equilibrium_reached { "yes" } else { "no" }
            );
        }
        None => {
            let _ = writeln!(rep, "equilibrium_reached = n/a");
        }
    }
    write_file(&dir.join("report.txt"), &rep)?;

    let mut csv = String::from("t");
    for n in names {
        let _ = write!(csv, ",err_{n}");
    }
    csv.push('\n');
    for k in 0..reference.len() {
        let _ = write!(csv, "{:.16e}", reference.times()[k]);
        for series in &report.error_series {
            let _ = write!(csv, ",{:.16e}", series[k]);
        }
        csv.push('\n');
    }
    write_file(&dir.join("errors.csv"), &csv)?;

    let times = reference.times();
    for (i, name) in names.iter().enumerate() {
        let ref_col = column(reference, i);
        let model_col = column(model, i);
        let chart = ChartConfig {
            title: name,
            x_label: "t",
            y_label: name,
            series: vec![
                Series { label: "reference", xs: times, ys: &ref_col, color: "#2563eb", dashed: false },
                Series { label: "model", xs: times, ys: &model_col, color: "#dc2626", dashed: true },
            ],
        };
        write_file(&dir.join(format!("overlay_{name}.svg")), &line_chart(&chart))?;
    }

    if names.len() >= 2 {
        let (rx, ry) = (column(reference, 0), column(reference, 1));
        let (mx, my) = (column(model, 0), column(model, 1));
        let chart = ChartConfig {
            title: "phase portrait",
            x_label: &names[0],
            y_label: &names[1],
            series: vec![
                Series { label: "reference", xs: &rx, ys: &ry, color: "#2563eb", dashed: false },
                Series { label: "model", xs: &mx, ys: &my, color: "#dc2626", dashed: true },
            ],
        };
        write_file(&dir.join("phase.svg"), &line_chart(&chart))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// shared helpers

fn load_source(
    preset: Option<&str>,
    system: Option<&Path>,
) -> Result<(OdeSystem, Option<SmibScenario>), CliError> {
    match (preset, system) {
        (Some(name), None) => {
            let (sys, scenario) = models::preset(name)?;
            Ok((sys, Some(scenario)))
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            let sys = parse_system(&text)
                .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
            Ok((sys, None))
        }
        _ => Err(CliError::Invalid(
            "exactly one of --preset and --system is required".into(),
        )),
    }
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    fs::write(path, content).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_cli(args: &[&str]) -> i32 {
        run(std::iter::once("pinnworks").chain(args.iter().copied()))
    }

    #[test]
    fn one_step_horizon_yields_two_rows() {
        let dir = tempfile::tempdir().unwrap();
        let dsl = dir.path().join("decay.ode");
        std::fs::write(&dsl, "param a=1;\nd(x)/dt = -a * x;\ninit x=1;\ndomain 0 0.01\n").unwrap();
        let out = dir.path().join("traj.csv");
        let code = run_cli(&[
            "simulate",
            "--system",
            dsl.to_str().unwrap(),
            "--dt",
            "0.01",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_OK);
        let text = std::fs::read_to_string(&out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x");
        assert_eq!(lines.len(), 3, "header plus the two grid rows");
        assert!(lines[2].starts_with("1.0000000000000000e-2,"));
    }

    #[test]
    fn preset_csv_carries_consistent_energy_column() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("undamped.csv");
        let code = run_cli(&[
            "simulate",
            "--preset",
            "undamped",
            "--dt",
            "0.1",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_OK);
        let text = std::fs::read_to_string(&out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,delta,omega,energy");
        for line in lines {
            let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
            assert_eq!(cols.len(), 4);
            let expect = smib_energy(5.0, 10.0, cols[1], cols[2]);
            assert_eq!(cols[3], expect, "energy column recomputes from the state columns");
        }
    }

    #[test]
    fn dt_and_tol_are_mutually_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("x.csv");
        let code = run_cli(&[
            "simulate",
            "--preset",
            "normal",
            "--dt",
            "0.1",
            "--tol",
            "1e-6",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_USAGE);
        assert!(!out.exists());
    }

    #[test]
    fn a_source_is_required() {
        let code = run_cli(&["simulate", "--out", "/tmp/never-written.csv"]);
        assert_eq!(code, EXIT_USAGE);
    }

    fn write_tiny_config(path: &Path, seed: u64) {
        let text = format!(
            "[system]\npreset = normal\n\n[sampler]\nkind = grid\ndt = 0.5\n\n\
             [optimizer]\nmax_iterations = 5\n\n[run]\nseed = {seed}\n"
        );
        std::fs::write(path, text).unwrap();
    }

    #[test]
    fn train_writes_artifacts_and_reruns_byte_identically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.ini");
        write_tiny_config(&cfg_path, 3);

        let out1 = dir.path().join("run1");
        let out2 = dir.path().join("run2");
        for out in [&out1, &out2] {
            let code = run_cli(&[
                "train",
                "--config",
                cfg_path.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ]);
            assert_eq!(code, EXIT_OK);
        }

        let ck = Checkpoint::load(&out1.join("model.ckpt")).unwrap();
        let cfg = RunConfig::load(&cfg_path).unwrap();
        assert_eq!(ck.config_digest, cfg.digest());
        assert_eq!(ck.state_names, vec!["delta".to_string(), "omega".to_string()]);

        let history = std::fs::read_to_string(out1.join("loss_history.csv")).unwrap();
        let lines: Vec<&str> = history.lines().collect();
        assert_eq!(lines[0], "iteration,total_loss");
        assert_eq!(lines.len(), ck.iterations + 2, "header plus initial loss plus one per iteration");
        assert!(out1.join("report.txt").exists());

        for name in ["model.ckpt", "loss_history.csv"] {
            let a = std::fs::read(out1.join(name)).unwrap();
            let b = std::fs::read(out2.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
    }

    #[test]
    fn cli_seed_overrides_config_seed() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.ini");
        write_tiny_config(&cfg_path, 3);

        let out_default = dir.path().join("default");
        let out_override = dir.path().join("override");
        run_cli(&["train", "--config", cfg_path.to_str().unwrap(), "--out", out_default.to_str().unwrap()]);
        run_cli(&[
            "train",
            "--config",
            cfg_path.to_str().unwrap(),
            "--seed",
            "7",
            "--out",
            out_override.to_str().unwrap(),
        ]);
        let a = Checkpoint::load(&out_default.join("model.ckpt")).unwrap();
        let b = Checkpoint::load(&out_override.join("model.ckpt")).unwrap();
        assert_ne!(a.theta, b.theta, "a different seed must give a different initialization");
    }

    fn mismatched_checkpoint(path: &Path) {
        let ck = Checkpoint {
            version: FORMAT_VERSION,
            mode: crate::net::Mode::Symbolic,
            state_names: vec!["x".into()],
            dims: vec![vec![1, 3, 1]],
            theta: vec![0.1; 10],
            config_digest: "0000000000000000".into(),
            final_loss: 1.0,
            iterations: 1,
        };
        ck.save(path).unwrap();
    }

    #[test]
    fn compare_rejects_checkpoint_for_different_states() {
        let dir = tempfile::tempdir().unwrap();
        let ck_path = dir.path().join("model.ckpt");
        mismatched_checkpoint(&ck_path);
        let code = run_cli(&[
            "compare",
            "--checkpoint",
            ck_path.to_str().unwrap(),
            "--preset",
            "normal",
            "--out",
            dir.path().join("cmp").to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_USAGE);
    }

    #[test]
    fn warm_start_rejects_checkpoint_for_different_states() {
        let dir = tempfile::tempdir().unwrap();
        let ck_path = dir.path().join("model.ckpt");
        mismatched_checkpoint(&ck_path);
        let cfg_path = dir.path().join("run.ini");
        write_tiny_config(&cfg_path, 0);
        let code = run_cli(&[
            "train",
            "--config",
            cfg_path.to_str().unwrap(),
            "--warm-start",
            ck_path.to_str().unwrap(),
            "--out",
            dir.path().join("out").to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_USAGE);
    }

    #[test]
    fn non_finite_objective_exits_with_numeric_code() {
        let dir = tempfile::tempdir().unwrap();
        let dsl = dir.path().join("bad.ode");
        // The right-hand side divides by an identically zero expression, so
        // every residual evaluation is infinite from the first iterate on.
        std::fs::write(&dsl, "d(x)/dt = 1/(x - x);\ninit x=1;\ndomain 0 1\n").unwrap();
        let cfg_path = dir.path().join("run.ini");
        std::fs::write(
            &cfg_path,
            format!(
                "[system]\ndsl = {}\n\n[sampler]\nkind = grid\ndt = 0.5\n\n\
                 [optimizer]\nmax_iterations = 3\n",
                dsl.display()
            ),
        )
        .unwrap();
        let out = dir.path().join("out");
        let code = run_cli(&[
            "train",
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_NUMERIC);
        let rep = std::fs::read_to_string(out.join("report.txt")).unwrap();
        assert!(rep.contains("status = failed"), "failure report records the error: {rep}");
    }

    #[test]
    fn bad_config_exits_with_usage_code() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.ini");
        std::fs::write(&cfg_path, "[system]\npreset = normal\n\n[sampler]\ndt = -1\n").unwrap();
        let code = run_cli(&[
            "train",
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            dir.path().join("out").to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_USAGE);
    }
}
