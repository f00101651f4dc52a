//! `cartan run <scenario.json>` evaluates a scenario and writes a residual report.

mod run;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use run::{Failure, Report};
use scenario::Scenario;

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_ENGINE: u8 = 3;

#[derive(Parser)]
#[command(name = "cartan", version, about = "Symmetric-space scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a JSON scenario and emit its report.
    Run {
        scenario: PathBuf,
        /// Report path (overrides the scenario's `output`); stdout when neither is set.
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Print the scenario JSON schema.
    Schema,
}

fn configure_threads() {
    if let Some(n) = std::env::var("SYMSPACE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Fails only if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn load(path: &PathBuf) -> anyhow::Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("invalid scenario {}: {e}", path.display()))
}

fn run(path: PathBuf, out: Option<String>, seed: Option<u64>, steps: Option<usize>) -> ExitCode {
    let start = Instant::now();
    let mut s = match load(&path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_INPUT);
        }
    };
    if let Some(seed) = seed {
        s.seed = seed;
    }
    if let Some(steps) = steps {
        s.steps = steps.max(1);
    }
    if let Some(out) = out {
        s.output = Some(out);
    }
    for p in s.output.iter().chain(s.trace.iter()) {
        if let Err(e) = run::check_output_path(p) {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_INPUT);
        }
    }
    let outcome = match run::execute(&s) {
        Ok(o) => o,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_INPUT);
        }
        Err(Failure::Engine(e)) => {
            eprintln!("engine error: {e:#}");
            return ExitCode::from(EXIT_ENGINE);
        }
    };
    let pass = outcome.checks.iter().all(|c| c.pass);
    if let (Some(path), Some(csv)) = (&s.trace, &outcome.trace) {
        if let Err(e) = run::write_atomic(path, csv) {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_ENGINE);
        }
    }
    let report = Report {
        engine_version: env!("CARGO_PKG_VERSION"),
        checks: outcome.checks,
        data: outcome.data,
        pass,
        duration_ms: start.elapsed().as_millis() as u64,
        scenario: s,
    };
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    match &report.scenario.output {
        Some(path) => {
            if let Err(e) = run::write_atomic(path, &text) {
                eprintln!("error: {e:#}");
                return ExitCode::from(EXIT_ENGINE);
            }
        }
        None => print!("{text}"),
    }
    for c in report.checks.iter().filter(|c| !c.pass) {
        eprintln!("check {} failed: residual {:e} ≥ threshold {:e}", c.name, c.residual, c.threshold);
    }
    if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_CHECK_FAILED)
    }
}

fn main() -> ExitCode {
    configure_threads();
    match Cli::parse().command {
        Cmd::Run { scenario, out, seed, steps } => run(scenario, out, seed, steps),
        Cmd::Schema => {
            let schema = schemars::schema_for!(Scenario);
            println!("{}", serde_json::to_string_pretty(&schema).expect("schema serializes"));
            ExitCode::SUCCESS
        }
    }
}
