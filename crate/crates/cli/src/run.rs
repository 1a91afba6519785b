//! Run directories: advisory lock and the run manifest.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use scvrl_core::{Error, Result};

pub const MANIFEST_FILE: &str = "run.json";
const LOCK_FILE: &str = ".lock";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<String>,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// An output directory held under an advisory lock for one command.
pub struct RunDir {
    pub path: PathBuf,
    lock: PathBuf,
    manifest: RunManifest,
}

impl RunDir {
    pub fn open(path: &Path, command: &str) -> Result<Self> {
        fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
        let lock = path.join(LOCK_FILE);
        let mut f: File = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
            .map_err(|e| {
                if e.kind() == std::io::ErrorKind::AlreadyExists {
                    Error::InvalidArgument(format!(
                        "{} is locked by another run (remove {} if stale)",
                        path.display(),
                        lock.display()
                    ))
                } else {
                    Error::io(&lock, e)
                }
            })?;
        let _ = writeln!(f, "{}", std::process::id());
        Ok(Self {
            path: path.to_path_buf(),
            lock,
            manifest: RunManifest {
                command: command.to_string(),
                args: std::env::args().skip(1).collect(),
                config_hash: None,
                seed: None,
                version: env!("CARGO_PKG_VERSION").to_string(),
                started_unix: now(),
                finished_unix: 0,
                outputs: Vec::new(),
            },
        })
    }

    pub fn set_config(&mut self, hash: String, seed: u64) {
        self.manifest.config_hash = Some(hash);
        self.manifest.seed = Some(seed);
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Writes `contents` to `name` inside the run directory and records it.
    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let p = self.file(name);
        fs::write(&p, contents).map_err(|e| Error::io(&p, e))?;
        self.record(name);
        Ok(p)
    }

    pub fn record(&mut self, name: &str) {
        if !self.manifest.outputs.iter().any(|o| o == name) {
            self.manifest.outputs.push(name.to_string());
        }
    }

    pub fn finish(mut self) -> Result<()> {
        self.manifest.finished_unix = now();
        self.manifest.outputs.sort();
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        let p = self.file(MANIFEST_FILE);
        fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}
