//! `racetee`: run scenarios, evaluate the probability formulas, sweep
//! parameters.
//!
//! Exit codes: 0 success, 1 invariant violation, 2 bad input.

mod sweep;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use racetee::analysis::{self, LivenessQuery};
use racetee::sim::scenario::{Scenario, BUNDLED};
use racetee::sim::Simulation;
use racetee::{Approx, Exact};

const SCHEMA: &str = include_str!("../../../docs/scenario.schema.json");

#[derive(Parser)]
#[command(name = "racetee", version, about = "Competitive TEE execution simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write the report.
    Run(RunArgs),
    /// Evaluate a probability formula.
    Analyze {
        #[command(subcommand)]
        what: Analyze,
    },
    /// Run a scenario template over a parameter grid.
    Sweep(SweepArgs),
    /// Print the scenario JSON schema.
    Schema,
    /// List bundled scenarios.
    List,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file, or the name of a bundled scenario.
    scenario: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for report.json, chain.jsonl, metrics.csv and blobs/.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Analyze {
    /// Probability that an s-subnet holds at least t of m adversarial nodes.
    Rsts {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        m: u64,
        #[arg(long)]
        s: u64,
        #[arg(long)]
        t: u64,
        /// Also estimate by sampling this many subnets.
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Chance one honest node is selected within t rounds.
    Liveness {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        c: u64,
        #[arg(long)]
        t: u64,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
}

#[derive(Args)]
struct SweepArgs {
    /// Scenario template file or bundled name.
    template: String,
    /// `path=v1,v2,...`, e.g. `committee=1,2,3` or `network.max_delay=2,4`. At most two.
    #[arg(long = "param", required = true)]
    params: Vec<String>,
    #[arg(long, default_value_t = 5)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Refuse grids needing more runs than this.
    #[arg(long, default_value_t = 500)]
    budget: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    verbose: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(a) => run(a),
        Command::Analyze { what } => analyze(what),
        Command::Sweep(a) => sweep::sweep(a),
        Command::Schema => {
            println!("{SCHEMA}");
            ExitCode::SUCCESS
        }
        Command::List => {
            for (name, _) in BUNDLED {
                println!("{name}");
            }
            ExitCode::SUCCESS
        }
    }
}

/// Reads a scenario file, falling back to the bundled set by name.
fn load_text(spec: &str) -> Result<(String, String), String> {
    let p = Path::new(spec);
    if p.exists() {
        return std::fs::read_to_string(p).map(|t| (spec.to_string(), t)).map_err(|e| format!("{spec}: {e}"));
    }
    match BUNDLED.iter().find(|(n, _)| *n == spec) {
        Some((n, t)) => Ok((format!("<bundled {n}>"), t.to_string())),
        None => Err(format!("{spec}: no such file or bundled scenario")),
    }
}

fn load(spec: &str) -> Result<Scenario, String> {
    let (origin, text) = load_text(spec)?;
    Scenario::parse(&text).map_err(|e| format!("{origin}: {e}"))
}

fn run(a: RunArgs) -> ExitCode {
    let sc = match load(&a.scenario) {
        Ok(sc) => sc,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let mut sim = Simulation::new(sc, a.seed);
    let report = sim.run().clone();
    if let Some(dir) = &a.out {
        if let Err(e) = sim.write_outputs(dir) {
            eprintln!("error: writing {}: {e}", dir.display());
            return ExitCode::from(2);
        }
    }
    if a.verbose {
        for line in sim.log() {
            eprintln!("{line}");
        }
    }
    match a.format {
        Format::Json => println!("{}", report.to_json()),
        Format::Csv => print!("{}", report.metrics_csv()),
    }
    for v in &report.invariant_violations {
        eprintln!("invariant violated: {v}");
    }
    if report.is_clean() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn analyze(what: Analyze) -> ExitCode {
    let result = match what {
        Analyze::Rsts { n, m, s, t, trials, seed, format } => analyze_rsts(n, m, s, t, trials, seed, format),
        Analyze::Liveness { n, c, t, trials, seed, format } => analyze_liveness(n, c, t, trials, seed, format),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn analyze_rsts(n: u64, m: u64, s: u64, t: u64, trials: Option<u64>, seed: u64, format: Format) -> Result<(), String> {
    let rows = analysis::rsts_sweep(&[(n, m, s, t)]).map_err(|e| e.to_string())?;
    let mc = match trials {
        Some(k) => Some(analysis::rsts_montecarlo(n, m, s, t, k, seed).map_err(|e| e.to_string())?),
        None => None,
    };
    match format {
        Format::Csv => analysis::write_rsts_csv(&rows, std::io::stdout()).map_err(|e| e.to_string())?,
        Format::Json => {
            let r = &rows[0];
            let v = serde_json::json!({
                "n": n, "m": m, "s": s, "t": t,
                "epsilon_exact": r.epsilon_exact.to_string(),
                "epsilon": r.epsilon,
                "epsilon_log10": r.epsilon_log10,
                "headline_cell": r.headline,
                "montecarlo": mc,
            });
            println!("{}", serde_json::to_string_pretty(&v).expect("json"));
        }
    }
    Ok(())
}

fn analyze_liveness(n: u64, c: u64, t: u64, trials: Option<u64>, seed: u64, format: Format) -> Result<(), String> {
    let q = LivenessQuery::new(n, c, t);
    let exact: Exact = analysis::liveness_delta(&q).map_err(|e| e.to_string())?;
    let approx: Approx = analysis::liveness_delta(&q).map_err(|e| e.to_string())?;
    let mc = match trials {
        Some(k) => Some(analysis::liveness_montecarlo(&q, k, seed).map_err(|e| e.to_string())?),
        None => None,
    };
    match format {
        Format::Csv => {
            println!("n,c,t,delta_exact,delta");
            println!("{n},{c},{t},{exact},{approx}");
        }
        Format::Json => {
            let v = serde_json::json!({
                "n": n, "c": c, "t": t,
                "delta_exact": exact.to_string(),
                "delta": approx,
                "montecarlo": mc,
            });
            println!("{}", serde_json::to_string_pretty(&v).expect("json"));
        }
    }
    Ok(())
}
