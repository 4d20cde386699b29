use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lung_mask::MaskParams;
use crate::metrics::SigmaPolicy;
use crate::nn::AdamWConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Invalid(format!("precision must be f32 or f64, got {other}"))),
        }
    }
}

/// How gate masks are obtained for each slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskPolicy {
    /// `false` feeds an all-ones mask (no context gating signal).
    pub enabled: bool,
    /// `None` scales the defaults to the slice size.
    #[serde(default)]
    pub params: Option<MaskParams>,
    /// Use an all-ones mask where no lung region is found instead of failing.
    #[serde(default)]
    pub fallback_ones: bool,
}

impl Default for MaskPolicy {
    fn default() -> Self {
        MaskPolicy {
            enabled: true,
            params: None,
            fallback_ones: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub folds: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
    pub precision: Precision,
    /// Validation is scored every `eval_every` epochs and after the last one.
    pub eval_every: usize,
    pub sigma: SigmaPolicy,
    pub masks: MaskPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            folds: 5,
            epochs: 50,
            batch_size: 8,
            optimizer: AdamWConfig::default(),
            seed: 0,
            precision: Precision::F32,
            eval_every: 1,
            sigma: SigmaPolicy::default(),
            masks: MaskPolicy::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Invalid("epochs must be >= 1".into()));
        }
        if self.folds < 2 {
            return Err(Error::Invalid("folds must be >= 2".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Invalid("eval_every must be >= 1".into()));
        }
        if !(self.optimizer.lr >= 0.0) {
            return Err(Error::Invalid("learning rate must be >= 0".into()));
        }
        if let Some(p) = &self.masks.params {
            p.validate()?;
        }
        self.sigma.validate()
    }
}
