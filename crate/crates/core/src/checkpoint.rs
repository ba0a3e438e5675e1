//! Binary checkpoint container.
//!
//! All integers little-endian:
//!
//! | size          | field                                                 |
//! |---------------|-------------------------------------------------------|
//! | 8             | magic `MOLBRCKP`                                      |
//! | 4 (u32)       | format version, currently 1                           |
//! | 4 (u32)       | config block length `M` in bytes                      |
//! | M             | UTF-8 `key=value\n` lines, keys sorted ascending      |
//! | 4 (u32)       | parameter count `P`                                   |
//!
//! followed by `P` parameter records in store order:
//!
//! | size          | field                                  |
//! |---------------|----------------------------------------|
//! | 2 (u16)       | name length `K`                        |
//! | K             | UTF-8 parameter name                   |
//! | 4 (u32)       | rows                                   |
//! | 4 (u32)       | cols                                   |
//! | 8·rows·cols   | f64 values, row-major                  |
//!
//! Model architecture keys (`model.*`) must be present in the config block;
//! any other keys are carried through untouched.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

use crate::autodiff::ParamStore;
use crate::model::{ModelConfig, ModelError, ModelParams};

pub const MAGIC: &[u8; 8] = b"MOLBRCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Model parameters plus the free-form config block they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub config: BTreeMap<String, String>,
}

fn model_keys(config: &ModelConfig) -> [(&'static str, String); 7] {
    [
        ("model.feature_dim", config.feature_dim.to_string()),
        ("model.dim", config.dim.to_string()),
        ("model.hidden", config.hidden.to_string()),
        ("model.layers", config.layers.to_string()),
        ("model.heads", config.heads.to_string()),
        ("model.classes", config.classes.to_string()),
        ("model.ln_eps", format!("{:e}", config.ln_eps)),
    ]
}

fn model_config_from(block: &BTreeMap<String, String>) -> Result<ModelConfig, CheckpointError> {
    fn get<T: std::str::FromStr>(
        block: &BTreeMap<String, String>,
        key: &str,
    ) -> Result<T, CheckpointError> {
        let raw = block
            .get(key)
            .ok_or_else(|| CheckpointError::Malformed(format!("missing config key {key}")))?;
        raw.parse()
            .map_err(|_| CheckpointError::Malformed(format!("bad value {raw:?} for {key}")))
    }
    Ok(ModelConfig {
        feature_dim: get(block, "model.feature_dim")?,
        dim: get(block, "model.dim")?,
        hidden: get(block, "model.hidden")?,
        layers: get(block, "model.layers")?,
        heads: get(block, "model.heads")?,
        classes: get(block, "model.classes")?,
        ln_eps: get(block, "model.ln_eps")?,
    })
}

impl Checkpoint {
    pub fn new(params: ModelParams, mut config: BTreeMap<String, String>) -> Self {
        for (k, v) in model_keys(&params.config) {
            config.insert(k.to_string(), v);
        }
        Checkpoint { params, config }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let mut block = String::new();
        for (k, v) in &self.config {
            block.push_str(k);
            block.push('=');
            block.push_str(v);
            block.push('\n');
        }
        out.extend_from_slice(&(block.len() as u32).to_le_bytes());
        out.extend_from_slice(block.as_bytes());
        let store = &self.params.store;
        out.extend_from_slice(&(store.len() as u32).to_le_bytes());
        for (_, p) in store.iter() {
            out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            let (r, c) = p.value.dim();
            out.extend_from_slice(&(r as u32).to_le_bytes());
            out.extend_from_slice(&(c as u32).to_le_bytes());
            for v in p.value.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let len = cur.u32()? as usize;
        let block = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| CheckpointError::Malformed("config block is not UTF-8".into()))?;
        let mut config = BTreeMap::new();
        for line in block.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CheckpointError::Malformed(format!("config line {line:?}")))?;
            config.insert(k.to_string(), v.to_string());
        }
        let count = cur.u32()?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(cur.take(2)?.try_into().expect("2 bytes")) as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|_| CheckpointError::Malformed("parameter name is not UTF-8".into()))?
                .to_string();
            let rows = cur.u32()? as usize;
            let cols = cur.u32()? as usize;
            let n = rows
                .checked_mul(cols)
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= bytes.len()))
                .ok_or_else(|| CheckpointError::Malformed(format!("parameter {name} too large")))?;
            let raw = cur.take(n * 8)?;
            let values: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if store.find(&name).is_some() {
                return Err(CheckpointError::Malformed(format!(
                    "duplicate parameter {name}"
                )));
            }
            let value = Array2::from_shape_vec((rows, cols), values).expect("length checked");
            store.register(name, value);
        }
        if cur.pos != bytes.len() {
            return Err(CheckpointError::Malformed("trailing bytes".into()));
        }
        let model = model_config_from(&config)?;
        let params = ModelParams::from_store(model, store)?;
        Ok(Checkpoint { params, config })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CheckpointError::Malformed("truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}
