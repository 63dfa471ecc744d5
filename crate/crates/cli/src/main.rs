use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use fedsim::engine::{run_with_budget, trace_to_string};
use fedsim::{compute_metrics, emit_report, load_scenario, ReportFormat, RunStatus, Scenario};

const EXIT_INVALID: u8 = 2;
const EXIT_LIVENESS: u8 = 3;
const BUDGET_VAR: &str = "FEDSIM_EVENT_BUDGET";

#[derive(Parser)]
#[command(name = "fedsim", version, about = "Cloud federation negotiation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Toml,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Text => ReportFormat::Text,
            Format::Toml => ReportFormat::Toml,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and emit its trace and metrics.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        trace_out: Option<PathBuf>,
        /// Defaults to stdout.
        #[arg(long)]
        report_out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Check a scenario file without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
        /// Print the normalized scenario.
        #[arg(long)]
        echo: bool,
    },
    /// Run seeds 0..N twice each, compare trace digests and summarize.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seeds: u64,
    },
}

enum Failure {
    Invalid(anyhow::Error),
    Liveness(String),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, seed, trace_out, report_out, format } => {
            run(&scenario, seed, trace_out.as_deref(), report_out.as_deref(), format.into())
        }
        Command::Validate { scenario, echo } => validate(&scenario, echo),
        Command::Sweep { scenario, seeds } => sweep(&scenario, seeds),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("invalid scenario: {e:#}");
            ExitCode::from(EXIT_INVALID)
        }
        Err(Failure::Liveness(msg)) => {
            eprintln!("liveness failure: {msg}");
            ExitCode::from(EXIT_LIVENESS)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load(path: &Path) -> Result<(Scenario, u64), Failure> {
    let scenario = load_scenario(path).map_err(|e| Failure::Invalid(e.into()))?;
    let budget = match std::env::var(BUDGET_VAR) {
        Ok(v) => v
            .trim()
            .parse::<u64>()
            .ok()
            .filter(|&b| b > 0)
            .ok_or_else(|| Failure::Invalid(anyhow::anyhow!("{BUDGET_VAR}={v:?} is not a positive integer")))?,
        Err(_) => scenario.settings.event_budget,
    };
    Ok((scenario, budget))
}

fn liveness(status: &RunStatus) -> Option<String> {
    let (what, open) = match status {
        RunStatus::Quiescent => return None,
        RunStatus::BudgetExceeded { open } => ("event budget exhausted", open),
        RunStatus::Stalled { open } => ("queue drained with open conversations", open),
    };
    let list: Vec<String> = open.iter().map(ToString::to_string).collect();
    Some(format!("{what}; open conversations: {}", if list.is_empty() { "none".into() } else { list.join(", ") }))
}

fn run(scenario: &Path, seed: u64, trace_out: Option<&Path>, report_out: Option<&Path>, format: ReportFormat) -> Result<(), Failure> {
    let (scenario, budget) = load(scenario)?;
    let out = run_with_budget(&scenario, seed, budget).context("simulation aborted")?;
    if let Some(path) = trace_out {
        fs::write(path, trace_to_string(&out.trace)).with_context(|| format!("writing {}", path.display()))?;
    }
    let report = emit_report(&compute_metrics(&out.trace, &out.world), format);
    match report_out {
        Some(path) => fs::write(path, report).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{report}"),
    }
    match liveness(&out.status) {
        Some(msg) => Err(Failure::Liveness(msg)),
        None => Ok(()),
    }
}

fn validate(scenario: &Path, echo: bool) -> Result<(), Failure> {
    let (scenario, _) = load(scenario)?;
    if echo {
        print!("{}", scenario.to_toml_string());
    } else {
        println!(
            "ok: {} brokers, {} providers, {} requests, {} churn events",
            scenario.brokers.len(),
            scenario.providers.len(),
            scenario.consumers.iter().map(|c| c.requests.len()).sum::<usize>(),
            scenario.churn.len()
        );
    }
    Ok(())
}

struct SeedResult {
    seed: u64,
    digest: String,
    repeat_matches: bool,
    satisfaction: f64,
    live: bool,
}

fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn sweep(scenario: &Path, seeds: u64) -> Result<(), Failure> {
    if seeds == 0 {
        return Err(Failure::Other(anyhow::anyhow!("--seeds must be positive")));
    }
    let (scenario, budget) = load(scenario)?;
    let results: Vec<Result<SeedResult>> = (0..seeds)
        .into_par_iter()
        .map(|seed| {
            let first = run_with_budget(&scenario, seed, budget)?;
            let second = run_with_budget(&scenario, seed, budget)?;
            let text = trace_to_string(&first.trace);
            Ok(SeedResult {
                seed,
                digest: digest(&text),
                repeat_matches: text == trace_to_string(&second.trace),
                satisfaction: compute_metrics(&first.trace, &first.world).satisfaction_rate,
                live: first.status.is_quiescent(),
            })
        })
        .collect();
    let mut rows = Vec::new();
    for r in results {
        rows.push(r?);
    }
    println!("{:>6}  {:<64}  {:>6}  {:>12}", "seed", "trace sha256", "repeat", "satisfaction");
    for r in &rows {
        println!(
            "{:>6}  {:<64}  {:>6}  {:>12.4}{}",
            r.seed,
            r.digest,
            if r.repeat_matches { "same" } else { "DIFF" },
            r.satisfaction,
            if r.live { "" } else { "  (liveness failure)" }
        );
    }
    let mean = rows.iter().map(|r| r.satisfaction).sum::<f64>() / rows.len() as f64;
    println!("mean satisfaction {mean:.4} over {} seeds", rows.len());
    if rows.iter().any(|r| !r.repeat_matches) {
        return Err(Failure::Other(anyhow::anyhow!("repeated runs produced different traces")));
    }
    if rows.iter().any(|r| !r.live) {
        return Err(Failure::Liveness("at least one seed did not reach quiescence".into()));
    }
    Ok(())
}
