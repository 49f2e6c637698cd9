use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileRecord {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

impl FileRecord {
    fn of(path: &Path) -> Result<Self> {
        let data = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
        Ok(FileRecord {
            path: path.display().to_string(),
            bytes: data.len() as u64,
            sha256: hex::encode(Sha256::digest(&data)),
        })
    }
}

/// Everything needed to replay a run: rerunning `argv` with the same inputs
/// reproduces every output hash.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: &'static str,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub status: String,
    pub exit_code: i32,
    pub started_at: String,
    pub wall_time_ms: u64,
}

/// Tracks the files a command reads and writes.
pub struct Run {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub config: serde_json::Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: Instant,
    started_at: chrono::DateTime<chrono::Utc>,
}

impl Run {
    pub fn new(out_dir: PathBuf, seed: u64) -> Self {
        Run {
            out_dir,
            seed,
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
            started_at: chrono::Utc::now(),
        }
    }

    pub fn input(&mut self, path: &Path) -> PathBuf {
        self.inputs.push(path.to_path_buf());
        path.to_path_buf()
    }

    pub fn output_path(&self, name: impl AsRef<Path>) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn write(&mut self, name: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.output_path(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    /// Writes `<out-dir>/<command>_manifest.json`.
    pub fn finish(self, command: &str, argv: Vec<String>, exit_code: i32, status: String) -> Result<PathBuf> {
        let hash_all = |paths: &[PathBuf]| -> Result<Vec<FileRecord>> {
            paths.iter().filter(|p| p.is_file()).map(|p| FileRecord::of(p)).collect()
        };
        let manifest = RunManifest {
            command: command.to_string(),
            argv,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            config: self.config.clone(),
            inputs: hash_all(&self.inputs)?,
            outputs: hash_all(&self.outputs)?,
            status,
            exit_code,
            started_at: self.started_at.to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            wall_time_ms: self.started.elapsed().as_millis() as u64,
        };
        std::fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join(format!("{command}_manifest.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(path)
    }
}
