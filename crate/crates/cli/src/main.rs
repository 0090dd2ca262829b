use clap::{Parser, Subcommand};
use pfedbayes_cli::config::{self, RunArgs};
use pfedbayes_cli::{runner, CliError};

/// Personalized federated training of Bayesian neural networks.
#[derive(Parser)]
#[command(name = "pfedbayes", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write rounds.csv / summary.csv.
    Run(RunArgs),
    /// Parse a config file and report whether it describes a valid
    /// experiment.
    ValidateConfig {
        /// Path to a key = value config file.
        #[arg(long)]
        config: std::path::PathBuf,
    },
    /// Generate the configured synthetic dataset and write it as CSV.
    GenData(RunArgs),
}

fn main() {
    if let Err(err) = dispatch(Cli::parse()) {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            let cfg = config::from_args(&args)?;
            if cfg.fed.zeta < 1.0 {
                eprintln!(
                    "notice: zeta = {} is below 1, outside the analyzed regime; \
                     personalization may degenerate",
                    cfg.fed.zeta
                );
            }
            let output = runner::run_experiment(&cfg)?;
            println!("wrote {}", output.rounds_csv.display());
            println!("wrote {}", output.summary_csv.display());
            Ok(())
        }
        Command::ValidateConfig { config: path } => {
            let cfg = config::parse_config_file(&path)?.resolve()?;
            println!(
                "OK: algorithm={} dataset={} rounds={}",
                cfg.algorithm.name(),
                cfg.dataset.name(),
                cfg.fed.rounds
            );
            Ok(())
        }
        Command::GenData(args) => {
            let cfg = config::from_args(&args)?;
            for path in runner::generate_data(&cfg)? {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}
