use std::path::PathBuf;
use std::process::ExitCode;

use adaptcl::experiment::{compare_runs, load_config, run_experiment, MethodKind};
use adaptcl::plot::{render_to, PlotKind};
use adaptcl::verify::{run_suite, Fault, Suite, VerifyOptions};
use adaptcl::Error;
use clap::{Parser, Subcommand};

/// Continual learning experiments: AdaptCL and baselines.
#[derive(Debug, Parser)]
#[command(name = "adaptcl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one method over a task sequence and write a run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `method` in the config file.
        #[arg(long)]
        method: Option<String>,
        /// Overrides `seed` in the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Tabulate ACC / BWT / FWT / used parameters of finished runs.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw an SVG chart from a run directory.
    Plot {
        #[arg(long)]
        run: PathBuf,
        /// curves, keep_ratio or layer_usage
        #[arg(long)]
        what: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the acceptance suite and print one JSON line per criterion.
    Verify {
        #[arg(long, default_value = "quick")]
        suite: String,
        /// Only these criteria, comma separated (e.g. `1,11`).
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
        /// Corrupt a frozen weight at DATASET:STEP (negative control).
        #[arg(long, value_name = "DATASET:STEP")]
        inject_fault: Option<String>,
    },
}

/// 2 for bad configuration, 3 for numeric blow-up, 1 otherwise.
fn exit_code(e: &Error) -> u8 {
    if e.is_numeric() {
        3
    } else if matches!(e, Error::Config(_)) {
        2
    } else {
        1
    }
}

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(exit_code(&e))
}

fn parse_fault(s: &str) -> Result<Fault, Error> {
    let bad = || Error::Config(format!("inject-fault: expected DATASET:STEP, got `{s}`"));
    let (d, st) = s.split_once(':').ok_or_else(bad)?;
    Ok(Fault { dataset: d.parse().map_err(|_| bad())?, step: st.parse().map_err(|_| bad())? })
}

fn run(config: PathBuf, method: Option<String>, seed: Option<u64>) -> ExitCode {
    let cfg = match method
        .as_deref()
        .map(MethodKind::parse)
        .transpose()
        .and_then(|m| load_config(&config, m, seed))
    {
        Ok(c) => c,
        // A config that cannot be read is as unusable as one that does not parse.
        Err(e @ Error::Io { .. }) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
        Err(e) => return fail(e),
    };
    match run_experiment(&cfg, None) {
        Ok(outcome) => {
            println!("{}", serde_json::to_string(&outcome.metrics).expect("metrics serialise"));
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}

fn compare(runs: Vec<PathBuf>, out: PathBuf) -> ExitCode {
    match compare_runs(&runs) {
        Ok((csv, warnings)) => {
            warnings.iter().for_each(|w| log::warn!("{w}"));
            if let Err(e) = std::fs::write(&out, csv) {
                eprintln!("error: {}: {e}", out.display());
                return ExitCode::FAILURE;
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}

fn plot(run: PathBuf, what: String, out: PathBuf) -> ExitCode {
    match PlotKind::parse(&what).and_then(|kind| render_to(&run, kind, &out)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}

fn verify(suite: String, only: Vec<String>, inject_fault: Option<String>) -> ExitCode {
    let parsed = Suite::parse(&suite).and_then(|s| Ok((s, inject_fault.as_deref().map(parse_fault).transpose()?)));
    let (suite, fault) = match parsed {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    let opts = VerifyOptions { fault, only };
    let results = run_suite(suite, &opts, &mut |r| println!("{}", r.json_line()));
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.criterion.as_str()).collect();
    if results.is_empty() {
        eprintln!("error: no criteria selected");
        return ExitCode::from(2);
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("failed criteria: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run { config, method, seed } => run(config, method, seed),
        Command::Compare { runs, out } => compare(runs, out),
        Command::Plot { run, what, out } => plot(run, what, out),
        Command::Verify { suite, only, inject_fault } => verify(suite, only, inject_fault),
    }
}
