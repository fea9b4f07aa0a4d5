use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gptrack_cli::{run_checked, CliError, ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(name = "gptrack", version, about = "Gaussian-process tracking-error certificate experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment and write its artifacts.
    Run(Common),
    /// Check a config without running it.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Replace the configured seed list by a single seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn load(args: &Common) -> Result<ExperimentConfig, CliError> {
    let mut config = ExperimentConfig::load(&args.config)?;
    config.apply(&Overrides {
        seed: args.seed,
        out: args.out.clone(),
    });
    Ok(config)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate(args) => {
            let config = load(&args)?;
            let diagnostics = config.diagnostics();
            if diagnostics.is_empty() {
                println!("{}: ok ({})", args.config.display(), config.experiment.name());
                Ok(())
            } else {
                for d in &diagnostics {
                    eprintln!("{d}");
                }
                Err(CliError::Config(format!("{} problem(s) found", diagnostics.len())))
            }
        }
        Command::Run(args) => {
            if let Some(n) = args.workers {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n.max(1))
                    .build_global()
                    .map_err(|e| CliError::Config(format!("--workers: {e}")))?;
            }
            let config = load(&args)?;
            let outcome = run_checked(&config)?;
            println!("{}", outcome.summary["status"].as_str().unwrap_or("ok"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
