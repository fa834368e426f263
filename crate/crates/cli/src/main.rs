use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use imbench_cli::{execute, Command, Options, Profile};

#[derive(Parser)]
#[command(name = "imbench", version, about = "21-cm intensity-mapping restoration benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Simulate the HI, foreground and total cubes.
    Simulate(Common),
    /// Inject interference and flag it.
    Contaminate(Common),
    /// Build the four restoration variants.
    Restore(Common),
    /// Remove foregrounds and write the evaluation reports.
    CleanEval(Common),
    /// Every stage in order.
    RunAll(Common),
    /// Check the configuration and print its hash.
    ValidateConfig(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum)]
    profile: Option<Profile>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (command, c) = match cli.command {
        Sub::Simulate(c) => (Command::Simulate, c),
        Sub::Contaminate(c) => (Command::Contaminate, c),
        Sub::Restore(c) => (Command::Restore, c),
        Sub::CleanEval(c) => (Command::CleanEval, c),
        Sub::RunAll(c) => (Command::RunAll, c),
        Sub::ValidateConfig(c) => (Command::ValidateConfig, c),
    };
    let opts = Options { config: c.config, out: c.out, seed: c.seed, threads: c.threads, profile: c.profile };
    match execute(command, &opts) {
        Ok(hash) => {
            if command == Command::ValidateConfig {
                println!("ok config_hash={hash}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
