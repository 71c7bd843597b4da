use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use frechet_diffusion::config::ExperimentConfig;
use frechet_diffusion::runner;
use frechet_diffusion::Error;

/// Default output directory environment variable.
const OUT_ENV: &str = "FRECHET_DIFFUSION_OUT";

const EXIT_TESTS_FAILED: u8 = 1;
const EXIT_INVALID_CONFIG: u8 = 2;
const EXIT_NUMERICAL_FAILURE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "frechet-diffusion",
    version,
    about = "Simulate coupled rescaled Frechet-mean chains on constant-curvature \
             manifolds and verify their diffusion limit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Worker threads for replications (0 = machine parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Replace the config's base seed.
    #[arg(long, global = true, value_name = "SEED")]
    seed_override: Option<u64>,

    /// Output directory (overrides the config and the FRECHET_DIFFUSION_OUT
    /// environment variable).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment in a config file and write CSV/JSON artifacts.
    Run { config: PathBuf },
    /// Print the model's limit parameters without simulating chains.
    Describe { config: PathBuf },
}

fn load_config(path: &PathBuf, cli: &Cli) -> Result<ExperimentConfig, ExitCode> {
    match ExperimentConfig::from_file(path) {
        Ok(mut cfg) => {
            if let Some(seed) = cli.seed_override {
                cfg.seed = seed;
            }
            Ok(cfg)
        }
        Err(e) => {
            eprintln!("error: invalid config {path:?}: {e}");
            Err(ExitCode::from(EXIT_INVALID_CONFIG))
        }
    }
}

fn resolve_out_dir(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn failure_exit(e: &Error) -> ExitCode {
    match e {
        Error::Config(_) | Error::Precondition(_) => {
            eprintln!("error: invalid configuration: {e}");
            ExitCode::from(EXIT_INVALID_CONFIG)
        }
        _ => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_NUMERICAL_FAILURE)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run { config } => {
            let cfg = match load_config(config, &cli) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let out_dir = resolve_out_dir(&cli, &cfg);
            let workers = cli.workers.unwrap_or(cfg.workers);
            match runner::run_experiment(&cfg, &out_dir, workers) {
                Ok(outcome) => {
                    let mut failed = 0usize;
                    let mut inconclusive = 0usize;
                    for r in &outcome.summary.reports {
                        let status = if r.inconclusive {
                            inconclusive += 1;
                            "INCONCLUSIVE"
                        } else if r.pass {
                            "PASS"
                        } else {
                            failed += 1;
                            "FAIL"
                        };
                        println!("{status:12} {}", r.id);
                    }
                    println!(
                        "{} reports, {failed} failed, {inconclusive} inconclusive; artifacts in {}",
                        outcome.summary.reports.len(),
                        out_dir.display()
                    );
                    if outcome.all_passed {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(EXIT_TESTS_FAILED)
                    }
                }
                Err(e) => failure_exit(&e),
            }
        }
        Command::Describe { config } => {
            let cfg = match load_config(config, &cli) {
                Ok(c) => c,
                Err(code) => return code,
            };
            match runner::describe_model(&cfg) {
                Ok(text) => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
                Err(e) => failure_exit(&e),
            }
        }
    }
}
