use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use semiflow_cli::converge::{convergence_study, rows_to_csv, LadderParam};
use semiflow_cli::{artifacts, scenario, verify, CliError, CliResult, Scenario, THREADS_ENV};

/// Semiconvex particle, sticky-particle and Galerkin dynamics.
///
/// Exit status: 0 success, 1 failed verification, 2 invalid input,
/// 3 numerical failure. The worker thread count is read from SEMIFLOW_THREADS.
#[derive(Parser)]
#[command(name = "semiflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run {
        config: PathBuf,
        /// Output directory (defaults to `output.dir` or `<name>_out` next to the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a suite, a config file or a run directory; prints a JSON report.
    Verify {
        target: String,
        /// Also write the report to this file.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Distances between consecutive runs of a resolution ladder, as CSV.
    Converge {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        ladder: Vec<f64>,
        /// particles, dt or modes (default: modes for elasto, particles otherwise).
        #[arg(long)]
        param: Option<LadderParam>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn init_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| CliError::config(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::config(e.to_string()))
}

fn write(path: &PathBuf, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn dispatch(cli: Cli) -> CliResult<u8> {
    init_threads()?;
    match cli.command {
        Command::Run { config, out } => {
            let start = Instant::now();
            let (scenario, outcome) = scenario::execute_file(&config)?;
            let dir = out.unwrap_or_else(|| scenario.default_output_dir());
            let files = artifacts::write_run(&scenario, &outcome, &dir, start.elapsed().as_secs_f64())?;
            for f in files {
                println!("{}", f.display());
            }
            Ok(0)
        }
        Command::Verify { target, report } => {
            let r = verify::verify(&target)?;
            let text = serde_json::to_string_pretty(&r).map_err(|e| CliError::config(e.to_string()))?;
            println!("{text}");
            if let Some(path) = report {
                write(&path, &format!("{text}\n"))?;
            }
            Ok(if r.passed { 0 } else { 1 })
        }
        Command::Converge { config, ladder, param, out } => {
            let scenario = Scenario::load(&config)?;
            let param = param.unwrap_or_else(|| LadderParam::default_for(scenario.config.kind));
            let csv = rows_to_csv(param, &convergence_study(&scenario, param, &ladder)?);
            match out {
                Some(path) => write(&path, &csv)?,
                None => print!("{csv}"),
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("semiflow: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
