//! Command-line front end: scenario in, trace CSV and guarantee report out.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Parser;
use thiserror::Error;

use crate::deployment::DeploymentDecision;
use crate::engine::{run_scenario, EngineError, SimulationOutput};
use crate::scenario::{Scenario, ScenarioError};
use crate::verify::{build_report, GuaranteeReport, VerifyError};

/// Deploy applications and their schedulers into a simulated CPU scheduler
/// hierarchy, then check every admitted contract against the execution trace.
///
/// Exits 0 when every check passes and no deployment was rejected, 1 when a
/// guarantee is violated or a deployment rejected (unless --allow-reject),
/// and 2 on invalid input.
#[derive(Debug, Clone, Parser)]
#[command(name = "schedeploy", version)]
pub struct Args {
    /// Scenario file (JSON).
    #[arg(long, value_name = "PATH")]
    pub scenario: PathBuf,
    /// Write the execution trace as CSV.
    #[arg(long, value_name = "PATH")]
    pub trace_out: Option<PathBuf>,
    /// Write the decision log and guarantee report here instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub report_out: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the scenario horizon, in ticks.
    #[arg(long, value_name = "TICKS")]
    pub horizon: Option<u64>,
    /// Do not fail the run because a deployment was rejected.
    #[arg(long)]
    pub allow_reject: bool,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
}

pub struct RunResult {
    pub output: SimulationOutput,
    pub report: GuaranteeReport,
    /// Decision log followed by the verifier report.
    pub report_text: String,
    pub trace_csv: String,
}

impl RunResult {
    pub fn rejected(&self) -> usize {
        self.output
            .decisions
            .iter()
            .filter(|d| matches!(d.decision, DeploymentDecision::Rejected(_)))
            .count()
    }
}

/// Simulates and verifies `scenario`, rendering both artifacts.
pub fn simulate(scenario: &Scenario) -> Result<RunResult, CliError> {
    let output = run_scenario(scenario)?;
    let report = build_report(&output.trace, &output.ledger)?;
    let mut text = String::new();
    let _ = writeln!(
        text,
        "scenario horizon={} seed={}",
        scenario.horizon, scenario.seed
    );
    for record in &output.decisions {
        let _ = writeln!(text, "{record}");
    }
    for span in &output.ledger {
        let _ = writeln!(
            text,
            "grant app={} node={} contract={} span=[{},{})",
            span.app, span.node_path, span.contract, span.start, span.end
        );
    }
    for (app, service) in &output.trace.per_app_service {
        let _ = writeln!(text, "service app={app} ticks={service}");
    }
    let _ = writeln!(text, "service idle ticks={}", output.trace.idle_ticks);
    text.push_str(&report.render());
    let trace_csv = output.trace.to_csv_string();
    Ok(RunResult {
        output,
        report,
        report_text: text,
        trace_csv,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// Loads, simulates, verifies and writes artifacts. Returns the exit code
/// for a completed run.
pub fn execute(args: &Args, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let mut scenario = Scenario::load(&args.scenario)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(horizon) = args.horizon {
        scenario.horizon = horizon;
        scenario.validate()?;
    }
    let result = simulate(&scenario)?;
    if let Some(path) = &args.trace_out {
        write_file(path, &result.trace_csv)?;
    }
    match &args.report_out {
        Some(path) => write_file(path, &result.report_text)?,
        None => {
            let _ = stdout.write_all(result.report_text.as_bytes());
        }
    }
    let rejected = result.rejected() > 0 && !args.allow_reject;
    Ok(if result.report.is_clean() && !rejected { 0 } else { 1 })
}

/// Full entry point over an argument vector, including the program name.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(args) => args,
        Err(e) => {
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = write!(sink, "{}", e.render());
            return e.exit_code();
        }
    };
    match execute(&args, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            2
        }
    }
}
