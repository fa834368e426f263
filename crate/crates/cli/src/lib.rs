//! Command-line orchestration of the imbench pipeline: configuration,
//! stages and the run manifest.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod manifest;
pub mod stages;

use std::path::{Path, PathBuf};

pub use config::{Profile, RunConfig};
pub use error::{CliError, Result};
pub use stages::{run_all, run_stage, Context, Layout};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Contaminate,
    Restore,
    CleanEval,
    RunAll,
    ValidateConfig,
}

/// Options shared by every command.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub profile: Option<Profile>,
}

/// Output directory: the flag, then `run.out_dir`, then `./out`.
pub fn output_dir(opts: &Options, cfg: &RunConfig) -> PathBuf {
    opts.out.clone().or_else(|| cfg.run.out_dir.clone()).unwrap_or_else(|| Path::new("out").to_path_buf())
}

/// Loads the configuration and runs `command`. Returns the config hash.
pub fn execute(command: Command, opts: &Options) -> Result<String> {
    let cfg = RunConfig::load(&opts.config, opts.profile, opts.seed)?;
    if let Some(n) = opts.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        // a second call in the same process keeps the first pool
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("global thread pool already initialised");
        }
    }
    let out = output_dir(opts, &cfg);
    let ctx = Context::new(cfg, &out);
    match command {
        Command::ValidateConfig => {}
        Command::Simulate => run_stage(&ctx, "simulate", stages::simulate)?,
        Command::Contaminate => run_stage(&ctx, "contaminate", stages::contaminate)?,
        Command::Restore => run_stage(&ctx, "restore", stages::restore)?,
        Command::CleanEval => run_stage(&ctx, "clean-eval", stages::clean_eval)?,
        Command::RunAll => run_all(&ctx)?,
    }
    Ok(ctx.hash)
}
