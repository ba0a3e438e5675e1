use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDigest {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

impl DatasetDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(DatasetDigest {
            path: path.canonicalize().unwrap_or_else(|_| path.to_path_buf()),
            sha256: hex::encode(Sha256::digest(&bytes)),
            bytes: bytes.len() as u64,
        })
    }
}

/// Everything needed to re-execute a command: `args` is a complete argument
/// vector with every setting resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub args: Vec<String>,
    pub config: BTreeMap<String, String>,
    pub datasets: Vec<DatasetDigest>,
    pub seed: Option<u64>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    /// Files written by the command, relative to the run directory.
    pub outputs: Vec<String>,
}

pub fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn start(command: &str, args: Vec<String>) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            args,
            config: BTreeMap::new(),
            datasets: Vec::new(),
            seed: None,
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
            outputs: Vec::new(),
        }
    }

    pub fn write(&mut self, dir: &Path) -> Result<PathBuf> {
        self.finished_unix_ms = now_ms();
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

/// Output directory for a command: `explicit` if given, else a fresh
/// `<command>-<millis>` directory under `$MOLBRIDGE_OUT` (default `runs`).
pub fn run_dir(explicit: Option<&Path>, command: &str) -> Result<PathBuf> {
    let dir = match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let root = std::env::var_os("MOLBRIDGE_OUT")
                .map_or_else(|| PathBuf::from("runs"), PathBuf::from);
            let stamp = now_ms();
            let mut candidate = root.join(format!("{command}-{stamp}"));
            let mut n = 1;
            while candidate.exists() {
                candidate = root.join(format!("{command}-{stamp}-{n}"));
                n += 1;
            }
            candidate
        }
    };
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}
