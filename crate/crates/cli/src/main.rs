use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use psido_cli::artifacts::report;
use psido_cli::config::{ExperimentConfig, Resolved};

#[derive(Parser)]
#[command(name = "psido", version, about = "Run operator-calculus experiments and aggregate their checks")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "NAME")]
    scenario: Option<String>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, value_name = "INT")]
    threads: Option<usize>,
    /// Print the pass/fail table of every run.
    #[arg(long)]
    summary: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Aggregate the checks of every run below DIR.
    Report { dir: PathBuf },
}

fn run(cli: Cli) -> Result<bool, Box<dyn std::error::Error>> {
    if let Some(Command::Report { dir }) = cli.command {
        let rep = report(&dir)?;
        print!("{}", rep.render());
        return Ok(rep.ok());
    }
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    let resolved = Resolved::from_config(&cfg, cli.scenario.as_deref())?;
    let out = resolved.out.clone().unwrap_or_else(|| PathBuf::from("out").join(resolved.scenario.name()));
    let summary = cli.summary;
    let runs = psido_cli::execute(&resolved, &out, |r| {
        let o = &r.outcome;
        eprintln!("{:<18} {:>4}/{:<4} pass  {:>8.1}s  {}", r.scenario.name(), o.passed(), o.checks.len(), r.elapsed.as_secs_f64(), r.dir.display());
        if summary {
            if let Some(s) = &o.summary {
                println!("{s}");
            }
            println!("{}", o.table());
        }
    })?;
    Ok(runs.iter().all(|r| r.outcome.all_pass()))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
