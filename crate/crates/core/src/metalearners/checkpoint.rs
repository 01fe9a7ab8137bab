use std::path::Path;

use serde::{Deserialize, Serialize};

use super::strategy::MetaModel;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "metastress-ckpt-v1";

/// Position in the run's deterministic seed stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub iteration: u64,
}

/// Everything needed to resume or evaluate a run: layouts, parameters,
/// optimizer moments, RNG position and the hash of the producing config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config_hash: String,
    pub rng: RngState,
    pub model: MetaModel,
}

impl Checkpoint {
    pub fn new(model: MetaModel, config_hash: String, rng: RngState) -> Self {
        Checkpoint { format: CHECKPOINT_FORMAT.to_string(), config_hash, rng, model }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_slice(bytes)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Invalid(format!("unsupported checkpoint format {:?}", ckpt.format)));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}
