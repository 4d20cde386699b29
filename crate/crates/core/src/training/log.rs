use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::run::RunManifest;

/// Hex SHA-256 of the compact JSON form of `value`.
pub fn config_hash<S: Serialize>(value: &S) -> Result<String> {
    let json = serde_json::to_vec(value)?;
    Ok(Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEntry {
    Header {
        #[serde(skip_serializing_if = "Option::is_none")]
        run: Option<RunManifest>,
        model: ModelConfig,
        train: TrainConfig,
        config_hash: String,
    },
    Epoch {
        fold: usize,
        epoch: usize,
        train_loss: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        val_lll: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        val_rmse: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        sigma: Option<f64>,
    },
    Fold {
        fold: usize,
        train_patients: Vec<String>,
        test_patients: Vec<String>,
        best_epoch: usize,
        #[serde(skip_serializing_if = "Option::is_none")]
        best_val_lll: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        val_rmse: Option<f64>,
        sigma: f64,
    },
}

/// Line-delimited training record. It carries no wall-clock values, so two
/// runs with the same inputs and seed serialize to identical bytes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    pub fn with_header(run: Option<RunManifest>, model: &ModelConfig, train: &TrainConfig) -> Result<Self> {
        Ok(TrainLog {
            entries: vec![LogEntry::Header {
                run,
                model: model.clone(),
                train: train.clone(),
                config_hash: config_hash(&(model, train))?,
            }],
        })
    }

    pub fn push(&mut self, entry: LogEntry) {
        self.entries.push(entry);
    }

    /// Training loss per epoch for one fold, in epoch order.
    pub fn epoch_losses(&self, fold: usize) -> Vec<f64> {
        self.entries
            .iter()
            .filter_map(|e| match e {
                LogEntry::Epoch { fold: f, train_loss, .. } if *f == fold => Some(*train_loss),
                _ => None,
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn parse_jsonl(text: &str) -> Result<Self> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(TrainLog { entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }
}
