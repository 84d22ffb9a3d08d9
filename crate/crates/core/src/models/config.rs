use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    /// Bidirectional LSTM with keys-only attention pooling and an MLP head.
    BirnnAttn,
    /// Pre-norm residual transformer encoder pooled at the BOS position.
    Transformer,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::BirnnAttn => "birnn_attn",
            Arch::Transformer => "transformer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    pub embed_dim: usize,
    /// Per-direction LSTM width, or the transformer model width.
    pub hidden_dim: usize,
    /// Encoder layers; the recurrent model has exactly one.
    pub layers: usize,
    pub heads: usize,
    /// Probability of replacing a content token with UNK during training.
    pub word_dropout: f64,
    pub dropout: f64,
    pub max_len: usize,
}

impl ModelConfig {
    pub fn birnn_attn() -> Self {
        Self {
            arch: Arch::BirnnAttn,
            embed_dim: 32,
            hidden_dim: 32,
            layers: 1,
            heads: 1,
            word_dropout: 0.1,
            dropout: 0.0,
            max_len: 128,
        }
    }

    pub fn transformer() -> Self {
        Self {
            arch: Arch::Transformer,
            embed_dim: 32,
            hidden_dim: 32,
            layers: 2,
            heads: 2,
            word_dropout: 0.1,
            dropout: 0.1,
            max_len: 128,
        }
    }

    pub fn default_for(arch: Arch) -> Self {
        match arch {
            Arch::BirnnAttn => Self::birnn_attn(),
            Arch::Transformer => Self::transformer(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.layers == 0 || self.max_len < 3 {
            return Err(Error::Validation(
                "model dimensions must be positive and max_len at least 3".into(),
            ));
        }
        if self.heads == 0 || self.hidden_dim % self.heads != 0 {
            return Err(Error::Validation(format!(
                "heads ({}) must divide hidden_dim ({})",
                self.heads, self.hidden_dim
            )));
        }
        if self.arch == Arch::BirnnAttn && self.layers != 1 {
            return Err(Error::Validation(
                "the recurrent classifier has a single layer".into(),
            ));
        }
        for (name, p) in [
            ("word_dropout", self.word_dropout),
            ("dropout", self.dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Validation(format!("{name} must lie in [0, 1)")));
            }
        }
        Ok(())
    }

    /// Stable 64-bit FNV-1a digest of the configuration. Two models with the
    /// same hash have the same architecture, whatever their vocabularies.
    pub fn architecture_hash(&self) -> u64 {
        let json = serde_json::to_string(self).expect("config serializes");
        json.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
            (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    /// Momentum for SGD, β₁ for Adam.
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Steps without validation improvement before stopping.
    pub patience: usize,
    pub eval_every: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn birnn_attn() -> Self {
        Self {
            optimizer: Optimizer::SgdMomentum,
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 5e-6,
            batch_size: 16,
            max_steps: 3000,
            patience: 1000,
            eval_every: 100,
            clip_norm: 5.0,
            seed: 0,
        }
    }

    pub fn transformer() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            learning_rate: 2e-3,
            momentum: 0.9,
            weight_decay: 1e-5,
            batch_size: 16,
            max_steps: 3000,
            patience: 1000,
            eval_every: 100,
            clip_norm: 5.0,
            seed: 0,
        }
    }

    pub fn default_for(arch: Arch) -> Self {
        match arch {
            Arch::BirnnAttn => Self::birnn_attn(),
            Arch::Transformer => Self::transformer(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.max_steps == 0 {
            return Err(Error::Validation(
                "learning rate, batch size and max_steps must be positive".into(),
            ));
        }
        if self.eval_every == 0 || self.patience == 0 || self.patience > self.max_steps {
            return Err(Error::Validation(
                "patience must lie in [1, max_steps] and eval_every be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 || self.clip_norm < 0.0 {
            return Err(Error::Validation(
                "momentum must lie in [0, 1); decay and clip must be non-negative".into(),
            ));
        }
        Ok(())
    }
}
