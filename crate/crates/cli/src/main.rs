use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wemp_core::{ExperimentConfig, SoeApproximation, WempError};

const EXIT_CONFIG: u8 = 1;
const EXIT_BREACH: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "wemp", version, about = "Multiscale parareal solvers for time-fractional diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Exit with status 2 when any acceptance check fails.
        #[arg(long)]
        assert: bool,
        /// Worker threads for the parallel slab phase (overrides the config).
        #[arg(long)]
        workers: Option<usize>,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the exponential sum `(j, ω_j, λ_j)` for the given tolerance as CSV.
    SoeTable { alpha: f64, tau_f: f64, epsilon: f64 },
}

fn exit_for(e: &WempError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_CONFIG })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::SoeTable { alpha, tau_f, epsilon } => match SoeApproximation::build(alpha, tau_f, epsilon) {
            Ok(soe) => {
                print!("{}", soe.to_csv());
                ExitCode::SUCCESS
            }
            Err(e) => exit_for(&e),
        },
        Command::Run { config, assert, workers, out } => {
            if workers == Some(0) {
                eprintln!("error: --workers must be at least 1");
                return ExitCode::from(EXIT_CONFIG);
            }
            let cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return exit_for(&e),
            };
            let report = match wemp_core::experiment::run_experiment(&cfg, workers, out.as_deref()) {
                Ok(r) => r,
                Err(e) => return exit_for(&e),
            };
            print!("{}", report.summary);
            for f in &report.files {
                log::info!("wrote {}", f.display());
            }
            if assert && !report.all_passed() {
                eprintln!("acceptance breach");
                return ExitCode::from(EXIT_BREACH);
            }
            ExitCode::SUCCESS
        }
    }
}
