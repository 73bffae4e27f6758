use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use rhg_core::certificates::{
    feasibility_region, scalar_certificate, search_certificate, search_local_certificates, Axis, RegionSpec,
    ScalarCertificate, ScalarCertificateInput,
};
use rhg_core::error::{CertificateError, ScenarioError, SimulationError};
use rhg_core::exec::Execution;
use rhg_core::game::{condense, Mode};
use rhg_core::matrix::{norm2, Matrix};
use rhg_core::scenario::{load_scenario, Scenario};
use rhg_core::simulator::{simulate, solve_steady_state, SimulationOptions, SteadyState, Trajectory};
use rhg_core::vi::SolverConfig;

/// Receding horizon games: simulation, stability certificates and steady states.
#[derive(Parser)]
#[command(name = "rhg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the closed loop and write a trajectory CSV plus a summary JSON.
    Simulate(SimulateArgs),
    /// Search for a stability certificate. Exit 0 if found, 2 if not.
    Certify(CertifyArgs),
    /// Evaluate the closed-form condition on a parameter grid.
    Region(RegionArgs),
    /// Solve the steady-state game.
    SteadyState(SteadyArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON file or builtin name.
    #[arg(long)]
    scenario: String,
    /// Seed for builtins with randomly drawn parameters.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Trajectory CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Summary JSON path (default: next to the CSV with a `.summary.json` suffix).
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Equilibrium solver tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Number of closed-loop steps (default: from the scenario).
    #[arg(long)]
    steps: Option<usize>,
    /// Certificate JSON whose `P` is used for the `V` column.
    #[arg(long)]
    certificate: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CertMode {
    Global,
    Local,
    Scalar,
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, value_enum, default_value = "global")]
    mode: CertMode,
    /// Certificate JSON path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Iteration budget of the LMI search.
    #[arg(long)]
    budget: Option<usize>,
    /// Scan resolution of the scalar conditions.
    #[arg(long, default_value_t = 400)]
    resolution: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Fig3b,
}

#[derive(Args)]
struct RegionArgs {
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// `A` axis as `value` or `min:max:steps`.
    #[arg(long)]
    a: Option<String>,
    /// `W` axis as `value` or `min:max:steps`.
    #[arg(long)]
    w: Option<String>,
    /// `μ` axis as `value` or `min:max:steps`.
    #[arg(long)]
    mu: Option<String>,
    /// `λ₁` axis as `value` or `min:max:steps`.
    #[arg(long)]
    lambda1: Option<String>,
    #[arg(long)]
    b: Option<f64>,
    /// Prediction horizon.
    #[arg(long)]
    k: Option<usize>,
    /// Grid CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SteadyArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Steady-state JSON path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    tol: Option<f64>,
}

/// Errors that map to exit code 1 without a backtrace-style chain.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(msg.into()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Certify(a) => cmd_certify(a),
        Command::Region(a) => cmd_region(a),
        Command::SteadyState(a) => cmd_steady_state(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            if e.downcast_ref::<Usage>().is_some() {
                eprintln!("usage error: {e}");
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(1)
        }
    }
}

fn load(args: &ScenarioArgs) -> Result<Scenario> {
    load_scenario(&args.scenario, args.seed).map_err(|e| match e {
        ScenarioError::UnknownBuiltin { .. } => usage(e.to_string()),
        other => anyhow!(other).context(format!("loading scenario {}", args.scenario)),
    })
}

fn solver_config(tol: Option<f64>) -> Result<SolverConfig> {
    let mut cfg = SolverConfig::default();
    if let Some(t) = tol {
        if !(t > 0.0 && t.is_finite()) {
            return Err(usage(format!("--tol must be positive, got {t}")));
        }
        cfg.tolerance = t;
    }
    Ok(cfg)
}

fn write_json(out: Option<&Path>, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn read_certificate_p(path: &Path, n: usize) -> Result<Matrix> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    let p = v
        .get("P")
        .or_else(|| v.pointer("/agents/0/P"))
        .ok_or_else(|| usage(format!("{} has no `P` field", path.display())))?;
    let p: Matrix = serde_json::from_value(p.clone()).map_err(|e| usage(format!("{}: P: {e}", path.display())))?;
    if p.rows() != n || p.cols() != n {
        return Err(usage(format!(
            "certificate P is {}x{}, scenario has {n} states",
            p.rows(),
            p.cols()
        )));
    }
    Ok(p)
}

fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let n_x = traj.states[0].len();
    let n_u = traj.inputs.first().map_or(0, Vec::len);
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n_x).map(|i| format!("x{i}")));
    header.extend((1..=n_u).map(|i| format!("u{i}")));
    header.extend(["residual", "min_slack", "V"].map(String::from));
    w.write_record(&header)?;
    for (t, x) in traj.states.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(x.iter().map(|v| v.to_string()));
        match (traj.inputs.get(t), traj.stats.get(t)) {
            (Some(u), Some(s)) => {
                row.extend(u.iter().map(|v| v.to_string()));
                row.push(s.residual.to_string());
                row.push(if s.min_slack.is_finite() {
                    s.min_slack.to_string()
                } else {
                    String::new()
                });
            }
            _ => row.extend(std::iter::repeat_n(String::new(), n_u + 2)),
        }
        row.push(
            traj.lyapunov
                .as_ref()
                .and_then(|v| v.get(t))
                .map_or(String::new(), |v| v.to_string()),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SimulationSummary {
    scenario: String,
    steps_run: usize,
    diverged: bool,
    final_norm: f64,
    max_constraint_violation: f64,
    max_coupling_violation: f64,
    max_residual: f64,
    steady_state: Option<Vec<f64>>,
    distance_to_steady_state: Option<f64>,
    failure: Option<String>,
}

fn cmd_simulate(args: SimulateArgs) -> Result<u8> {
    let sc = load(&args.scenario)?;
    let x0 = sc
        .simulation
        .x0
        .clone()
        .ok_or_else(|| usage("scenario has no simulation.x0"))?;
    let solver = solver_config(args.tol)?;
    let steps = args.steps.unwrap_or(sc.simulation.steps);
    if steps == 0 {
        return Err(usage("--steps must be at least 1"));
    }
    let steady: Option<SteadyState> = solve_steady_state(&sc.nominal_spec(), &solver).ok();
    let lyapunov = match &args.certificate {
        Some(p) => {
            let p = read_certificate_p(p, x0.len())?;
            let x_bar = steady.as_ref().map_or_else(|| vec![0.0; x0.len()], |s| s.x_s.clone());
            Some((p, x_bar))
        }
        None => None,
    };
    let opts = SimulationOptions {
        steps,
        divergence_threshold: sc.simulation.divergence_threshold,
        solver,
        warm_start: true,
        lyapunov,
    };
    let (traj, failure) = match simulate(sc.source(), &x0, &opts) {
        Ok(t) => (t, None),
        Err(SimulationError::Step { t, message, partial }) => (*partial, Some(format!("step {t}: {message}"))),
        Err(e) => return Err(anyhow!(e)),
    };
    write_trajectory_csv(&args.out, &traj)?;
    let final_state = traj.final_state();
    let summary = SimulationSummary {
        scenario: sc.name.clone(),
        steps_run: traj.inputs.len(),
        diverged: traj.diverged,
        final_norm: norm2(final_state),
        max_constraint_violation: traj.max_violation(),
        max_coupling_violation: traj.max_coupling_violation(),
        max_residual: traj.stats.iter().map(|s| s.residual).fold(0.0, f64::max),
        steady_state: steady.as_ref().map(|s| s.x_s.clone()),
        distance_to_steady_state: steady
            .as_ref()
            .map(|s| norm2(&final_state.iter().zip(&s.x_s).map(|(a, b)| a - b).collect::<Vec<_>>())),
        failure: failure.clone(),
    };
    let summary_path = args.summary.unwrap_or_else(|| args.out.with_extension("summary.json"));
    write_json(Some(&summary_path), &summary)?;
    if let Some(f) = failure {
        bail!(
            "simulation aborted at {f}; partial trajectory written to {}",
            args.out.display()
        );
    }
    let outcome = if traj.diverged { "diverged" } else { "completed" };
    println!(
        "{}: {outcome} after {} steps, final |x| = {:.6e}",
        sc.name, summary.steps_run, summary.final_norm
    );
    Ok(0)
}

const SUFFICIENCY_NOTE: &str = "the certificate is sufficient only; failing to find one does not prove instability";

fn cmd_certify(args: CertifyArgs) -> Result<u8> {
    let sc = load(&args.scenario)?;
    let spec = sc.nominal_spec();
    let mut opts = sc.certificate.search_options();
    if let Some(b) = args.budget {
        if b == 0 {
            return Err(usage("--budget must be at least 1"));
        }
        opts.budget = b;
    }
    let game = condense(&spec).context("condensing the scenario game")?;
    let (feasible, report) = match args.mode {
        CertMode::Global => {
            let r = search_certificate(&game, &opts)?;
            (r.feasible, serde_json::to_value(&r)?)
        }
        CertMode::Local => {
            if spec.mode != Mode::Decoupled {
                return Err(usage("local mode needs a scenario with decoupled agent dynamics"));
            }
            let r = search_local_certificates(&game, &opts, Execution::default())?;
            (
                r.all_feasible,
                json!({ "feasible": r.all_feasible, "agents": r.agents }),
            )
        }
        CertMode::Scalar => {
            if spec.mode != Mode::Decoupled {
                return Err(usage("scalar mode needs a scenario with decoupled agent dynamics"));
            }
            if let Some(v) = spec
                .agents
                .iter()
                .position(|a| a.dynamics.a.rows() != 1 || a.dynamics.b.cols() != 1)
            {
                return Err(usage(format!(
                    "scalar mode needs one state and one input per agent; agent {v} has {} states and {} inputs",
                    spec.agents[v].dynamics.a.rows(),
                    spec.agents[v].dynamics.b.cols()
                )));
            }
            if args.resolution < 8 {
                return Err(usage("--resolution must be at least 8"));
            }
            let agents = spec
                .agents
                .iter()
                .map(|a| {
                    let inp = ScalarCertificateInput {
                        a: a.dynamics.a[(0, 0)],
                        b: a.dynamics.b[(0, 0)],
                        w: a.cost.w[(0, 0)],
                        mu: game.mu,
                        k: spec.horizon,
                    };
                    scalar_certificate(&inp, args.resolution)
                })
                .collect::<Result<Vec<ScalarCertificate>, CertificateError>>()
                .map_err(|e| match e {
                    CertificateError::Precondition(m) => usage(m),
                    other => anyhow!(other),
                })?;
            let all = agents.iter().all(|a| a.feasible);
            (all, json!({ "feasible": all, "mu": game.mu, "agents": agents }))
        }
    };
    let mut report = report;
    if let Some(obj) = report.as_object_mut() {
        obj.insert(
            "mode".into(),
            json!(match args.mode {
                CertMode::Global => "global",
                CertMode::Local => "local",
                CertMode::Scalar => "scalar",
            }),
        );
        obj.insert("mu".into(), json!(game.mu));
        if !feasible {
            obj.insert("note".into(), json!(SUFFICIENCY_NOTE));
        }
    }
    write_json(args.out.as_deref(), &report)?;
    if feasible {
        eprintln!("{}: certificate found", sc.name);
        Ok(0)
    } else {
        eprintln!("{}: no certificate found ({SUFFICIENCY_NOTE})", sc.name);
        Ok(2)
    }
}

fn parse_axis(name: &str, text: &str) -> Result<Axis> {
    let parts: Vec<&str> = text.split(':').collect();
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| usage(format!("--{name}: not a number: {s:?}")))
    };
    match parts.as_slice() {
        [v] => Ok(Axis::Fixed(num(v)?)),
        [lo, hi, n] => Ok(Axis::Range {
            min: num(lo)?,
            max: num(hi)?,
            steps: n
                .trim()
                .parse()
                .map_err(|_| usage(format!("--{name}: resolution must be an integer, got {n:?}")))?,
        }),
        _ => Err(usage(format!(
            "--{name}: expected `value` or `min:max:steps`, got {text:?}"
        ))),
    }
}

fn cmd_region(args: RegionArgs) -> Result<u8> {
    let mut spec = match args.preset {
        Some(Preset::Fig3b) => RegionSpec::fig3b(),
        None => {
            if args.a.is_none() || args.w.is_none() || args.mu.is_none() || args.lambda1.is_none() {
                return Err(usage("give --preset or all of --a, --w, --mu and --lambda1"));
            }
            RegionSpec {
                b: 1.0,
                k: 10,
                ..RegionSpec::fig3b()
            }
        }
    };
    for (name, val, slot) in [
        ("a", &args.a, &mut spec.a),
        ("w", &args.w, &mut spec.w),
        ("mu", &args.mu, &mut spec.mu),
        ("lambda1", &args.lambda1, &mut spec.lambda1),
    ] {
        if let Some(text) = val {
            *slot = parse_axis(name, text)?;
        }
    }
    if let Some(b) = args.b {
        spec.b = b;
    }
    if let Some(k) = args.k {
        spec.k = k;
    }
    let grid = feasibility_region(&spec, Execution::default()).map_err(|e| match e {
        CertificateError::Precondition(m) => usage(m),
        other => anyhow!(other),
    })?;
    let file = File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["a", "w", "mu", "lambda1", "feasible"])?;
    for p in &grid.points {
        w.write_record([
            p.a.to_string(),
            p.w.to_string(),
            p.mu.to_string(),
            p.lambda1.to_string(),
            u8::from(p.feasible).to_string(),
        ])?;
    }
    w.flush()?;
    let mut stdout = std::io::stdout();
    writeln!(
        stdout,
        "{} points, feasible fraction {:.4}",
        grid.points.len(),
        grid.feasible_fraction()
    )?;
    Ok(0)
}

fn cmd_steady_state(args: SteadyArgs) -> Result<u8> {
    let sc = load(&args.scenario)?;
    let cfg = solver_config(args.tol)?;
    let ss = solve_steady_state(&sc.nominal_spec(), &cfg).map_err(|e| match e {
        SimulationError::Precondition(m) => usage(m),
        other => anyhow!(other),
    })?;
    write_json(args.out.as_deref(), &ss)?;
    Ok(0)
}
