//! Model hyperparameters and the closed-form parameter count.

use serde::{Deserialize, Serialize};

use crate::corpus::N_SPECIALS;

/// Layer norm epsilon, fixed across the codebase.
pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Encoder and decoder depth (same N on both sides).
    pub n_layers: usize,
    pub model_dim: usize,
    /// Width of the embedding slice shared between dialects. The remaining
    /// `model_dim - pivot_dim` columns are private per dialect. The shared
    /// slice occupies the leading columns.
    pub pivot_dim: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    /// Number of encoder layers shared across directions, counted from the
    /// top of the stack.
    pub n_shared_enc: usize,
    /// Number of decoder layers shared across directions, counted from the
    /// bottom of the stack.
    pub n_shared_dec: usize,
    /// When on, decoder layer n cross-attends encoder layer n's output
    /// instead of every layer attending the final encoder state.
    pub layer_coordination: bool,
    /// When on, a learned per-dialect vector is prepended to encoder input
    /// and replaces BOS as the decoder's first input row.
    pub dialect_token: bool,
    /// Longest token sequence (excluding the prepended lead row).
    pub max_len: usize,
    pub dropout: f64,
    /// Set from the built vocabulary; 0 means "not yet filled in".
    pub vocab_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::desk(0)
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("pivot_dim {pivot_dim} exceeds model_dim {model_dim}")]
    PivotTooLarge { pivot_dim: usize, model_dim: usize },
    #[error("model_dim {model_dim} not divisible by n_heads {n_heads}")]
    HeadsDontDivide { model_dim: usize, n_heads: usize },
    #[error("n_shared_enc {shared} exceeds n_layers {layers}")]
    TooManySharedEnc { shared: usize, layers: usize },
    #[error("n_shared_dec {shared} exceeds n_layers {layers}")]
    TooManySharedDec { shared: usize, layers: usize },
    #[error("dropout {p} outside [0, 1)")]
    BadDropout { p: f64 },
    #[error("vocab_size {vocab} smaller than the {reserved} reserved specials")]
    VocabTooSmall { vocab: usize, reserved: usize },
    #[error("{field} must be at least 1")]
    Zero { field: &'static str },
}

impl ModelConfig {
    /// Small configuration that trains in minutes on one core.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            n_layers: 3,
            model_dim: 128,
            pivot_dim: 64,
            n_heads: 4,
            ffn_dim: 256,
            n_shared_enc: 3,
            n_shared_dec: 3,
            layer_coordination: true,
            dialect_token: true,
            max_len: 32,
            dropout: 0.1,
            vocab_size,
        }
    }

    /// Full-size configuration matching the original experimental setting.
    pub fn full_scale(vocab_size: usize) -> Self {
        ModelConfig {
            n_layers: 6,
            model_dim: 512,
            pivot_dim: 256,
            n_heads: 8,
            ffn_dim: 2048,
            n_shared_enc: 6,
            n_shared_dec: 6,
            layer_coordination: true,
            dialect_token: true,
            max_len: 32,
            dropout: 0.1,
            vocab_size,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (field, v) in [
            ("n_layers", self.n_layers),
            ("model_dim", self.model_dim),
            ("n_heads", self.n_heads),
            ("ffn_dim", self.ffn_dim),
            ("max_len", self.max_len),
        ] {
            if v == 0 {
                return Err(ConfigError::Zero { field });
            }
        }
        if self.pivot_dim > self.model_dim {
            return Err(ConfigError::PivotTooLarge {
                pivot_dim: self.pivot_dim,
                model_dim: self.model_dim,
            });
        }
        if self.model_dim % self.n_heads != 0 {
            return Err(ConfigError::HeadsDontDivide {
                model_dim: self.model_dim,
                n_heads: self.n_heads,
            });
        }
        if self.n_shared_enc > self.n_layers {
            return Err(ConfigError::TooManySharedEnc {
                shared: self.n_shared_enc,
                layers: self.n_layers,
            });
        }
        if self.n_shared_dec > self.n_layers {
            return Err(ConfigError::TooManySharedDec {
                shared: self.n_shared_dec,
                layers: self.n_layers,
            });
        }
        if !(0.0..1.0).contains(&self.dropout) || self.dropout.is_nan() {
            return Err(ConfigError::BadDropout { p: self.dropout });
        }
        if self.vocab_size < N_SPECIALS {
            return Err(ConfigError::VocabTooSmall {
                vocab: self.vocab_size,
                reserved: N_SPECIALS,
            });
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.n_heads
    }

    pub fn private_dim(&self) -> usize {
        self.model_dim - self.pivot_dim
    }
}

/// Scalar counts per component, plus their sum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    /// Pivot + both private tables: V * (2d - d_s).
    pub embedding: u64,
    pub dialect_vectors: u64,
    pub projection: u64,
    pub encoder: u64,
    pub decoder: u64,
    pub total: u64,
}

/// Closed-form scalar count. An independent structural count over the actual
/// parameter list is asserted equal in tests.
pub fn param_count(cfg: &ModelConfig) -> ParamCount {
    let v = cfg.vocab_size as u64;
    let d = cfg.model_dim as u64;
    let ds = cfg.pivot_dim as u64;
    let f = cfg.ffn_dim as u64;
    let n = cfg.n_layers as u64;

    let embedding = v * (2 * d - ds);
    let dialect_vectors = if cfg.dialect_token { 2 * d } else { 0 };
    let projection = d * v + v;

    let attn = 4 * d * d + 4 * d;
    let ln = 2 * d;
    let ffn = 2 * d * f + f + d;
    let enc_layer = attn + ln + ffn + ln;
    let dec_layer = 2 * attn + ln + ln + ffn + ln;

    // A shared layer exists once; an unshared layer exists per dialect.
    let enc_copies = cfg.n_shared_enc as u64 + 2 * (n - cfg.n_shared_enc as u64);
    let dec_copies = cfg.n_shared_dec as u64 + 2 * (n - cfg.n_shared_dec as u64);
    let encoder = enc_copies * enc_layer;
    let decoder = dec_copies * dec_layer;

    ParamCount {
        embedding,
        dialect_vectors,
        projection,
        encoder,
        decoder,
        total: embedding + dialect_vectors + projection + encoder + decoder,
    }
}
