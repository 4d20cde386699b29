use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VitConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub depth: usize,
    /// Hidden width of the token MLP as a multiple of `embed_dim`.
    pub mlp_ratio: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalEncoderConfig {
    pub steps: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    /// Prior relaxation: features may be reused until their prior is spent.
    pub relaxation: f64,
}

/// Which feature groups feed the regression head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Branches {
    pub local: bool,
    pub global: bool,
    pub clinical: bool,
}

impl Default for Branches {
    fn default() -> Self {
        Branches {
            local: true,
            global: true,
            clinical: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    pub gate_channels: usize,
    pub gate_kernel: usize,
    /// Output channels of each stride-2 stage; both CNN branches share it.
    pub cnn_channels: Vec<usize>,
    pub vit: VitConfig,
    pub clinical: ClinicalEncoderConfig,
    pub fusion_hidden_dim: usize,
    #[serde(default)]
    pub branches: Branches,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 64,
            gate_channels: 8,
            gate_kernel: 3,
            cnn_channels: vec![16, 32, 64],
            vit: VitConfig {
                embed_dim: 64,
                heads: 4,
                depth: 2,
                mlp_ratio: 2,
            },
            clinical: ClinicalEncoderConfig {
                steps: 2,
                hidden_dim: 16,
                out_dim: 32,
                relaxation: 1.3,
            },
            fusion_hidden_dim: 64,
            branches: Branches::default(),
        }
    }
}

impl ModelConfig {
    /// Smallest configuration that still runs every mechanism; for tests.
    pub fn tiny() -> Self {
        ModelConfig {
            image_size: 16,
            gate_channels: 2,
            gate_kernel: 3,
            cnn_channels: vec![4, 6],
            vit: VitConfig {
                embed_dim: 8,
                heads: 2,
                depth: 1,
                mlp_ratio: 2,
            },
            clinical: ClinicalEncoderConfig {
                steps: 2,
                hidden_dim: 4,
                out_dim: 4,
                relaxation: 1.3,
            },
            fusion_hidden_dim: 8,
            branches: Branches::default(),
        }
    }

    /// Side length of the token grid after the CNN stages.
    pub fn tokens_grid(&self) -> usize {
        self.image_size >> self.cnn_channels.len()
    }

    pub fn local_dim(&self) -> usize {
        *self.cnn_channels.last().unwrap_or(&0)
    }

    pub fn fusion_input_dim(&self) -> usize {
        let b = self.branches;
        usize::from(b.local) * self.local_dim()
            + usize::from(b.global) * self.vit.embed_dim
            + usize::from(b.clinical) * self.clinical.out_dim
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Invalid(format!("model config: {m}")));
        if self.cnn_channels.is_empty() || self.cnn_channels.contains(&0) {
            return fail("cnn_channels must be non-empty and positive".into());
        }
        let down = 1usize << self.cnn_channels.len();
        if self.image_size == 0 || self.image_size % down != 0 {
            return fail(format!("image_size {} not divisible by {down}", self.image_size));
        }
        if self.gate_channels == 0 || self.gate_kernel % 2 == 0 {
            return fail("gate needs channels > 0 and an odd kernel".into());
        }
        if self.vit.heads == 0 || self.vit.embed_dim % self.vit.heads != 0 {
            return fail(format!(
                "embed_dim {} not divisible by heads {}",
                self.vit.embed_dim, self.vit.heads
            ));
        }
        if self.vit.mlp_ratio == 0 || self.clinical.steps == 0 || self.clinical.hidden_dim == 0 || self.clinical.out_dim == 0 {
            return fail("zero-sized layer".into());
        }
        if !(self.clinical.relaxation >= 1.0) {
            return fail("relaxation must be >= 1".into());
        }
        if self.fusion_hidden_dim == 0 || self.fusion_input_dim() == 0 {
            return fail("fusion head has no inputs".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dims() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.tokens_grid(), 8);
        assert_eq!(c.fusion_input_dim(), 160);
    }

    #[test]
    fn invalid_configs() {
        let mut c = ModelConfig::default();
        c.image_size = 60;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.vit.heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.branches = Branches {
            local: false,
            global: false,
            clinical: false,
        };
        assert!(c.validate().is_err());
    }
}
