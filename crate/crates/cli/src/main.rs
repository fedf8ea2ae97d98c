use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use heavytail_cli::config::{self, ConfigError, OutputFormat, Overrides};
use heavytail_cli::run::{run, RunError};

#[derive(Parser)]
#[command(name = "heavytail", version, about = "Large-deviation experiments for heavy-tailed sums")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dump stationary sample paths (rep, t, x).
    Simulate(Common),
    /// Evaluate tail and dependence conditions.
    CheckConditions(Common),
    /// Estimate P(S_n > x) and its ratio to the big-jump or normal approximation.
    EstimateLd(Common),
    /// Linear-process tail ratios and window tables.
    LinearLd(Common),
    /// Maxima of sample covariance entries.
    Covmax(Common),
    /// Check the Prokhorov and Fuk-Nagaev bounds against simulation.
    Bounds(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::Simulate(c) => ("simulate", c),
        Command::CheckConditions(c) => ("check-conditions", c),
        Command::EstimateLd(c) => ("estimate-ld", c),
        Command::LinearLd(c) => ("linear-ld", c),
        Command::Covmax(c) => ("covmax", c),
        Command::Bounds(c) => ("bounds", c),
    };
    let overrides = Overrides {
        seed: common.seed,
        workers: common.workers,
        out_dir: common.out_dir.clone(),
        format: common.format,
    };
    let cfg = match config::load(&common.config, name, &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprint!("{e}");
            if !matches!(e, ConfigError::Invalid(_)) {
                eprintln!();
            }
            return ExitCode::from(2);
        }
    };
    match run(&cfg) {
        Ok(outcome) => {
            if let Some(err) = &outcome.report.error {
                eprintln!("{}", serde_json::to_string(err).expect("error serializes"));
            }
            for path in &outcome.report.outputs {
                println!("{path}");
            }
            println!("{}", outcome.report_path.display());
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprint!("{e}");
            if !matches!(e, RunError::Config(ConfigError::Invalid(_))) {
                eprintln!();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
