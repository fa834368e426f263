//! Artifact manifest for an output directory.
//!
//! The manifest holds no wall-clock times so that identical runs produce
//! identical manifests; stage timings go to a `timings.csv` sidecar.

use std::fs::{self, File};
use std::io::{self, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMINGS_FILE: &str = "timings.csv";

/// Pipeline stages in execution order.
pub const STAGES: [&str; 4] = ["simulate", "contaminate", "restore", "clean-eval"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub ok: bool,
    /// Failures the stage survived or the error that stopped it.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub cube_format_version: u32,
    pub config_hash: String,
    pub stages: Vec<StageRecord>,
    pub artifacts: Vec<Artifact>,
}

impl RunManifest {
    pub fn new(config_hash: &str) -> Self {
        RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            cube_format_version: imbench::cube::FORMAT_VERSION,
            config_hash: config_hash.to_string(),
            stages: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn load(out: &Path) -> io::Result<Option<Self>> {
        let path = out.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let m = serde_json::from_reader(BufReader::new(File::open(path)?)).map_err(io::Error::other)?;
        Ok(Some(m))
    }

    /// Replaces the record for `stage.name`, keeping stages in pipeline order.
    pub fn set_stage(&mut self, stage: StageRecord) {
        self.stages.retain(|s| s.name != stage.name);
        self.stages.push(stage);
        let rank = |n: &str| STAGES.iter().position(|s| *s == n).unwrap_or(STAGES.len());
        self.stages.sort_by_key(|s| rank(&s.name));
    }

    /// Rescans `out` and writes the manifest.
    pub fn write(&mut self, out: &Path) -> io::Result<()> {
        self.artifacts = scan(out)?;
        let mut text = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        text.push('\n');
        fs::write(out.join(MANIFEST_FILE), text)
    }

    /// Listed artifacts that are missing or whose checksum changed.
    pub fn verify(&self, out: &Path) -> io::Result<Vec<String>> {
        let mut bad = Vec::new();
        for a in &self.artifacts {
            let path = out.join(&a.path);
            if !path.exists() || sha256_file(&path)? != a.sha256 {
                bad.push(a.path.clone());
            }
        }
        Ok(bad)
    }
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut file = BufReader::new(File::open(path)?);
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Every regular file under `out` except the manifest and the timings
/// sidecar, sorted by path.
pub fn scan(out: &Path) -> io::Result<Vec<Artifact>> {
    let mut artifacts = Vec::new();
    for entry in WalkDir::new(out).sort_by_file_name() {
        let entry = entry.map_err(io::Error::other)?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(out).expect("walk stays under root");
        let path = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        if path == MANIFEST_FILE || path == TIMINGS_FILE {
            continue;
        }
        artifacts.push(Artifact { bytes: entry.metadata().map_err(io::Error::other)?.len(), sha256: sha256_file(entry.path())?, path });
    }
    artifacts.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(artifacts)
}

pub fn append_timing(out: &Path, stage: &str, seconds: f64) -> io::Result<()> {
    let path = out.join(TIMINGS_FILE);
    let fresh = !path.exists();
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "stage,seconds")?;
    }
    writeln!(f, "{stage},{seconds:.3}")
}
