use alloc::format;
use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormPlacement {
    /// Layer normalization after each residual addition.
    Post,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositionEncoding {
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub dropout_prob: f64,
    pub norm: NormPlacement,
    pub positions: PositionEncoding,
}

impl ModelConfig {
    /// `enc/dec/dim/heads` with `ffn_dim = 4 * dim`.
    pub fn new(
        enc_layers: usize,
        dec_layers: usize,
        dim: usize,
        heads: usize,
        vocab_size: usize,
        max_positions: usize,
    ) -> Self {
        ModelConfig {
            enc_layers,
            dec_layers,
            dim,
            heads,
            ffn_dim: 4 * dim,
            vocab_size,
            max_positions,
            dropout_prob: 0.0,
            norm: NormPlacement::Post,
            positions: PositionEncoding::Learned,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let counts = [
            ("enc_layers", self.enc_layers),
            ("dec_layers", self.dec_layers),
            ("dim", self.dim),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if self.dim % self.heads != 0 {
            return Err(ModelError::Config(format!(
                "dim {} is not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.vocab_size <= 2 {
            return Err(ModelError::Config(String::from(
                "vocabulary must hold PAD, BOS and EOS",
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(ModelError::Config(String::from("dropout_prob must lie in [0, 1)")));
        }
        Ok(())
    }

    /// `enc/dec/dim/heads` shorthand.
    pub fn shape_string(&self) -> String {
        format!("{}/{}/{}/{}", self.enc_layers, self.dec_layers, self.dim, self.heads)
    }
}

/// The `enc:dec:dim:heads` shape of a model, parsed from `1:1:64:8` or
/// `1/1/64/8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub dim: usize,
    pub heads: usize,
}

impl ModelShape {
    pub fn config(self, vocab_size: usize, max_positions: usize) -> ModelConfig {
        ModelConfig::new(
            self.enc_layers,
            self.dec_layers,
            self.dim,
            self.heads,
            vocab_size,
            max_positions,
        )
    }
}

impl FromStr for ModelShape {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Result<alloc::vec::Vec<usize>, _> =
            s.split([':', '/']).map(|p| p.trim().parse::<usize>()).collect();
        match parts.as_deref() {
            Ok([e, d, m, h]) => Ok(ModelShape {
                enc_layers: *e,
                dec_layers: *d,
                dim: *m,
                heads: *h,
            }),
            _ => Err(ModelError::Config(format!("bad model shape `{s}`"))),
        }
    }
}

impl fmt::Display for ModelShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}:{}", self.enc_layers, self.dec_layers, self.dim, self.heads)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub clip_norm: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Steps between checkpoints; zero disables them.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 5e-4,
            warmup_steps: 4000,
            total_steps: 20_000,
            clip_norm: 5.0,
            seed: 0,
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-9,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.batch_size == 0 {
            return Err(ModelError::Config(String::from("batch_size must be positive")));
        }
        let positive = [
            ("learning_rate", self.learning_rate),
            ("clip_norm", self.clip_norm),
            ("epsilon", self.epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(ModelError::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        Ok(())
    }

    /// Linear warmup to `learning_rate`, then inverse square root decay.
    /// `step` counts from 1.
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        let s = step.max(1) as f64;
        let w = self.warmup_steps.max(1) as f64;
        if s <= w {
            self.learning_rate * s / w
        } else {
            self.learning_rate * libm::sqrt(w / s)
        }
    }
}
