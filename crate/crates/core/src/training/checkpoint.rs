use std::path::Path;

use serde::{Deserialize, Serialize};

use super::log::config_hash;
use crate::dataset::NormStats;
use crate::error::{Error, Result};
use crate::model::{HybridModel, ModelConfig, TargetStats};
use crate::nn::checkpoint::{decode_archive, encode_archive, restore, ArchiveHeader, FORMAT_VERSION};
use crate::nn::{ParamStore, Real};
use crate::run::RunManifest;

/// Everything besides the weights needed to reproduce predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub target: TargetStats,
    pub norm: NormStats,
    /// σ estimated from training residuals at the saved epoch.
    pub sigma: f64,
    pub fold: usize,
    pub epoch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunManifest>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Real> {
    pub meta: CheckpointMeta,
    pub model: HybridModel,
    pub params: ParamStore<T>,
}

impl<T: Real> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = ArchiveHeader {
            format_version: FORMAT_VERSION,
            config_hash: config_hash(&self.meta.model)?,
            payload: serde_json::to_value(&self.meta)?,
        };
        encode_archive(&self.params, &header)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, tensors) = decode_archive(bytes)?;
        let meta: CheckpointMeta = serde_json::from_value(header.payload)
            .map_err(|e| Error::Checkpoint(format!("bad checkpoint header: {e}")))?;
        if config_hash(&meta.model)? != header.config_hash {
            return Err(Error::Checkpoint("model config does not match its recorded hash".into()));
        }
        let (model, mut params) = HybridModel::init::<T>(&meta.model, 0)?;
        restore(&mut params, &tensors)?;
        Ok(Checkpoint { meta, model, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
