//! Command-line front end: observability reports, offline safe-set checks,
//! one-shot reconstruction, and closed-loop simulation with trace export.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use nalgebra::DVector;
use serde_json::json;

use securesim_cli::config::{
    load_config, parse_config, BuiltScenario, ConfigError, ScenarioConfig,
};
use securesim_cli::BUNDLED_VEHICLE;
use securesim_core::attack::{InfeasiblePolicy, RunOutcome};
use securesim_core::reconstruction::{
    plausible_initial_states, worst_case_envelope, DataWindow, PlausibleSetJson,
};
use securesim_core::safety::check_offline_conditions;
use securesim_core::Error as CoreError;

const EXIT_CONFIG: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_ATTACK_MODEL: u8 = 4;
const EXIT_NUMERIC: u8 = 5;

#[derive(Parser)]
#[command(
    name = "securesim",
    about = "Secure state reconstruction and barrier-filtered control for LTI systems under sensor attacks",
    version
)]
struct Cli {
    /// Scenario configuration (JSON). Defaults to the bundled vehicle scenario.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override the scenario RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the sliding-window length.
    #[arg(long, global = true)]
    window: Option<usize>,
    /// Override the simulation horizon.
    #[arg(long, global = true)]
    horizon: Option<usize>,
    /// Halt on an infeasible safety program instead of holding zero input.
    #[arg(long, global = true, action = ArgAction::Set, default_value_t = true)]
    halt_on_infeasible: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Report r-sparse observability of the configured system.
    CheckObservability,
    /// Check the offline safe-set admissibility conditions.
    OfflineCheck,
    /// Reconstruct plausible states from a recorded data window.
    Reconstruct {
        /// Data window JSON: {"start_time": t, "inputs": [[..]], "outputs": [[..]]}.
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the closed-loop scenario and export the trace.
    Simulate,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(classify_error(&e))
        }
    }
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Core(CoreError),
    Io(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

fn classify_error(e: &CliError) -> u8 {
    match e {
        CliError::Config(_) | CliError::Io(_) => EXIT_CONFIG,
        CliError::Core(core) => match core {
            CoreError::InvalidInput(_) | CoreError::DimensionMismatch(_) => EXIT_CONFIG,
            CoreError::AttackModelViolated => EXIT_ATTACK_MODEL,
            CoreError::Infeasible | CoreError::KernelConditionViolated => EXIT_INFEASIBLE,
            CoreError::SolverFailure(_) => EXIT_NUMERIC,
        },
    }
}

fn run(cli: &Cli) -> Result<u8, CliError> {
    let mut scenario: ScenarioConfig = match &cli.config {
        Some(path) => load_config(path)?,
        None => {
            eprintln!("note: no --config given, using the bundled vehicle scenario");
            parse_config(BUNDLED_VEHICLE)?
        }
    };
    if let Some(seed) = cli.seed {
        scenario.attack.seed = seed;
    }
    if let Some(window) = cli.window {
        scenario.window = Some(window);
    }
    if let Some(horizon) = cli.horizon {
        scenario.horizon = horizon;
    }
    let built = scenario.build()?;
    std::fs::create_dir_all(&cli.out).map_err(|e| CliError::Io(e.to_string()))?;

    match &cli.command {
        Command::CheckObservability => cmd_check_observability(cli, &built),
        Command::OfflineCheck => cmd_offline_check(cli, &built),
        Command::Reconstruct { data } => cmd_reconstruct(cli, &built, data),
        Command::Simulate => cmd_simulate(cli, &scenario, &built),
    }
}

fn write_artifact(dir: &Path, name: &str, text: &str) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn cmd_check_observability(cli: &Cli, built: &BuiltScenario) -> Result<u8, CliError> {
    let sys = &built.sys;
    let p = sys.sensor_count();
    println!(
        "sparse observability of the configured system (n={}, m={}, p={})",
        sys.state_dim(),
        sys.input_dim(),
        p
    );
    let mut results = Vec::new();
    let mut max_r: Option<usize> = None;
    for r in 0..p {
        let ok = sys.is_r_sparse_observable(r, &built.cfg)?;
        println!("  {r}-sparse observable: {}", if ok { "yes" } else { "no" });
        results.push(json!({"r": r, "observable": ok}));
        if ok {
            max_r = Some(r);
        } else {
            break;
        }
    }
    let report = json!({
        "n": sys.state_dim(),
        "p": p,
        "results": results,
        "max_r": max_r,
    });
    let path = write_artifact(
        &cli.out,
        "observability.json",
        &serde_json::to_string_pretty(&report).unwrap(),
    )?;
    println!("report written to {}", path.display());
    Ok(0)
}

fn cmd_offline_check(cli: &Cli, built: &BuiltScenario) -> Result<u8, CliError> {
    let report = check_offline_conditions(&built.sys, built.s, &built.cbf, &built.cfg)?;
    println!("offline admissibility with s = {} attacked sensors", built.s);
    println!(
        "  {}-sparse observable: {}",
        built.s,
        if report.sparse_obs_ok { "yes" } else { "no" }
    );
    println!("  p > 2s: {}", if report.p_gt_2s { "yes" } else { "no" });
    let failing: Vec<String> = report
        .cond_i
        .iter()
        .filter(|(_, ok)| !ok)
        .map(|(l, _)| l.to_string())
        .collect();
    println!(
        "  kernel condition: {}/{} combinations pass{}",
        report.cond_i.len() - failing.len(),
        report.cond_i.len(),
        if failing.is_empty() {
            String::new()
        } else {
            format!(" (failing: {})", failing.join(" "))
        }
    );
    println!("  input feasibility: {:?}", report.cond_ii);
    println!("  verdict: {}", if report.verdict { "admissible" } else { "not admissible" });

    let envelope = if built.sys.sensor_count() > 2 * built.s {
        let env = worst_case_envelope(&built.sys, built.s, &built.cfg)?;
        if !env.s_sparse_observable {
            eprintln!(
                "warning: system is not {}-sparse observable; the plausible set can be infinite",
                built.s
            );
        }
        let dirs: Vec<_> = env
            .nontrivial()
            .map(|(l, k)| {
                json!({
                    "lambda": l.indices(),
                    "kernel_dim": k.dim(),
                    "basis": (0..k.dim())
                        .map(|c| k.vectors().column(c).iter().copied().collect::<Vec<f64>>())
                        .collect::<Vec<_>>(),
                })
            })
            .collect();
        println!("  worst-case ambiguity directions: {}", dirs.len());
        Some(dirs)
    } else {
        None
    };

    let mut doc = serde_json::to_value(report.to_json()).unwrap();
    if let Some(dirs) = envelope {
        doc["worst_case_envelope"] = json!(dirs);
    }
    let path = write_artifact(
        &cli.out,
        "offline_report.json",
        &serde_json::to_string_pretty(&doc).unwrap(),
    )?;
    println!("report written to {}", path.display());
    Ok(0)
}

#[derive(serde::Deserialize)]
struct DataFile {
    #[serde(default)]
    start_time: usize,
    inputs: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

fn cmd_reconstruct(cli: &Cli, built: &BuiltScenario, data: &Path) -> Result<u8, CliError> {
    let text =
        std::fs::read_to_string(data).map_err(|e| CliError::Io(format!("{}: {e}", data.display())))?;
    let parsed: DataFile =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("data file: {e}")))?;
    let window = DataWindow::new(
        parsed.inputs.iter().map(|u| DVector::from_column_slice(u)).collect(),
        parsed.outputs.iter().map(|y| DVector::from_column_slice(y)).collect(),
        parsed.start_time,
    )?;
    let ps = plausible_initial_states(&window, &built.sys, built.s, &built.cfg)?;
    let points = ps.deduplicated_points(built.cfg.dedup_tol);
    println!(
        "window of {} samples starting at t = {}: {} consistent combinations, {} distinct states",
        window.outputs.len(),
        window.start_time,
        ps.non_empty_count(),
        points.len()
    );
    for x in &points {
        let coords: Vec<String> = x.iter().map(|v| format!("{v:.6}")).collect();
        println!("  ({})", coords.join(", "));
    }
    if ps.non_empty_count() == 0 {
        eprintln!("error: {}", CoreError::AttackModelViolated);
        return Ok(EXIT_ATTACK_MODEL);
    }
    let doc: PlausibleSetJson = ps.to_json();
    let path = write_artifact(
        &cli.out,
        "plausible.json",
        &serde_json::to_string_pretty(&doc).unwrap(),
    )?;
    println!("plausible set written to {}", path.display());
    Ok(0)
}

fn cmd_simulate(cli: &Cli, scenario: &ScenarioConfig, built: &BuiltScenario) -> Result<u8, CliError> {
    let policy = if cli.halt_on_infeasible {
        InfeasiblePolicy::Halt
    } else {
        InfeasiblePolicy::HoldZero
    };
    let trace = built.run(policy, false)?;

    let echo = scenario.echo()?;
    write_artifact(&cli.out, "config_echo.json", &echo)?;
    let csv_path = write_artifact(&cli.out, "trace.csv", &trace.to_csv(built.dt))?;

    let n_steps = trace.records.len();
    let min_true = trace.min_margin_true();
    let min_fake = trace.min_margin_fake();
    let filtered = trace
        .records
        .iter()
        .filter(|r| r.status == securesim_core::attack::FilterStatus::Filtered)
        .count();
    let summary = json!({
        "outcome": trace.outcome.as_str(),
        "steps": n_steps,
        "premise_ok": trace.premise_ok,
        "min_margin_true": min_true,
        "min_margin_fake": if min_fake.is_finite() { Some(min_fake) } else { None },
        "filtered_steps": filtered,
    });
    let summary_path = write_artifact(
        &cli.out,
        "summary.json",
        &serde_json::to_string_pretty(&summary).unwrap(),
    )?;

    println!("simulated {n_steps} steps: {}", trace.outcome.as_str());
    if let Some(ok) = trace.premise_ok {
        println!(
            "  initial containment premise: {}",
            if ok { "satisfied" } else { "NOT satisfied (safety claim downgraded)" }
        );
    }
    println!("  min margin (true trajectory): {min_true:.6}");
    if min_fake.is_finite() {
        println!("  min margin (fake trajectory): {min_fake:.6}");
    }
    println!("  filtered steps: {filtered}");
    println!("trace written to {}", csv_path.display());
    println!("summary written to {}", summary_path.display());

    Ok(match trace.outcome {
        RunOutcome::Completed => 0,
        RunOutcome::InfeasibleHalt { .. }
        | RunOutcome::KernelConditionViolated { .. }
        | RunOutcome::PremiseViolated { .. } => EXIT_INFEASIBLE,
        RunOutcome::AttackModelViolated { .. } => EXIT_ATTACK_MODEL,
    })
}
