//! Pipeline stages. Each stage reads its inputs from the output directory,
//! so any stage can be rerun on its own once its predecessors have run.

mod clean_eval;
mod contaminate;
mod restore;
mod simulate;

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::RunConfig;
use crate::error::{CliError, Result, StageContext};
use crate::manifest::{append_timing, RunManifest, StageRecord};

pub use clean_eval::clean_eval;
pub use contaminate::contaminate;
pub use restore::restore;
pub use simulate::simulate;

/// Sub-seed components of the master seed.
pub mod seeds {
    pub const SKY: u64 = 1;
    pub const RFI: u64 = 2;
    pub const PATCHES: u64 = 3;
    pub const ICA: u64 = 4;
}

/// File locations inside an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn sky(&self, component: &str) -> PathBuf {
        self.root.join("sky").join(format!("{component}.imc"))
    }

    pub fn contaminated(&self) -> PathBuf {
        self.root.join("contaminate/contaminated.imc")
    }

    /// `truth`, `channels`, `outliers` or `detected`.
    pub fn mask(&self, name: &str) -> PathBuf {
        self.root.join("contaminate").join(format!("{name}.imm"))
    }

    pub fn contaminate_report(&self, name: &str) -> PathBuf {
        self.root.join("contaminate").join(name)
    }

    pub fn variant(&self, restorer: &str, variant: char) -> PathBuf {
        self.root.join("restore").join(restorer).join(format!("variant_{variant}.imc"))
    }

    pub fn rejections(&self) -> PathBuf {
        self.root.join("restore/rejections.csv")
    }

    pub fn residual(&self, method: &str, dataset: &str) -> PathBuf {
        self.root.join("residual").join(format!("{method}_{dataset}.imc"))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }

    pub fn patches(&self) -> PathBuf {
        self.root.join("patches")
    }
}

/// Everything a stage needs.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub layout: Layout,
    pub hash: String,
}

impl Context {
    pub fn new(config: RunConfig, out: &Path) -> Self {
        let hash = config.hash();
        Context { config, layout: Layout::new(out), hash }
    }

    pub fn seed(&self) -> u64 {
        self.config.seed()
    }

    pub(crate) fn ensure_dir(&self, rel: &str) -> Result<PathBuf> {
        let dir = self.layout.root.join(rel);
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::Stage { stage: "setup", message: format!("{}: {e}", dir.display()) })?;
        Ok(dir)
    }

    /// Opens a CSV file whose first line is the config-hash comment.
    pub(crate) fn csv(&self, path: &Path, stage: &'static str) -> Result<csv::Writer<File>> {
        let mut f = File::create(path).stage(stage)?;
        writeln!(f, "# config_hash={}", self.hash).stage(stage)?;
        Ok(csv::Writer::from_writer(f))
    }
}

/// Outcome of a stage that may survive partial failures.
pub type StageOutcome = Result<Vec<String>>;

/// Runs `stage`, records it in the manifest and timings sidecar, and turns
/// survived failures into a stage error after the manifest is written.
pub fn run_stage(ctx: &Context, name: &'static str, stage: impl FnOnce(&Context) -> StageOutcome) -> Result<()> {
    ctx.ensure_dir("")?;
    std::fs::write(ctx.layout.root.join("config.effective.toml"), ctx.config.canonical_toml()).stage(name)?;
    let start = Instant::now();
    let outcome = stage(ctx);
    let record = match &outcome {
        Ok(failures) => StageRecord { name: name.into(), ok: failures.is_empty(), failures: failures.clone() },
        Err(e) => StageRecord { name: name.into(), ok: false, failures: vec![e.to_string()] },
    };
    let mut manifest = match RunManifest::load(&ctx.layout.root).stage(name)? {
        Some(m) if m.config_hash == ctx.hash => m,
        Some(_) => {
            log::warn!("{}: existing manifest has a different config hash; starting a new one", name);
            RunManifest::new(&ctx.hash)
        }
        None => RunManifest::new(&ctx.hash),
    };
    manifest.set_stage(record);
    manifest.write(&ctx.layout.root).stage(name)?;
    append_timing(&ctx.layout.root, name, start.elapsed().as_secs_f64()).stage(name)?;
    log::info!("{name}: {:.2} s", start.elapsed().as_secs_f64());
    match outcome {
        Ok(failures) if failures.is_empty() => Ok(()),
        Ok(failures) => Err(CliError::Stage { stage: name, message: failures.join("; ") }),
        Err(e) => Err(e),
    }
}

/// Every stage in order; the first failure stops the run.
pub fn run_all(ctx: &Context) -> Result<()> {
    run_stage(ctx, "simulate", simulate)?;
    run_stage(ctx, "contaminate", contaminate)?;
    run_stage(ctx, "restore", restore)?;
    run_stage(ctx, "clean-eval", clean_eval)
}

pub(crate) fn require(path: &Path, stage: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Stage { stage, message: format!("missing input {}", path.display()) })
    }
}
