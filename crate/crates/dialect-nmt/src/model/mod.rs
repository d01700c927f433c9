//! Shared-core translation model: a pivot-private embedding feeding a
//! transformer whose upper encoder and lower decoder layers are shared
//! between dialects, with optional cross-attention into matching encoder
//! depths and a learned dialect tag token.

pub mod checkpoint;
pub mod config;
pub mod forward;
pub mod infer;
pub mod params;

pub use checkpoint::{load_bag, load_model, save_bag, save_model};
pub use config::{ConfigError, ModelConfig, ParamCount, LN_EPS};
pub use forward::{positional_encoding, positional_row, DecodeOut, Forward, RunMode};
pub use infer::{encode_source, DecoderSession, EncodedSource};
pub use params::{build_model, param_specs, ParamSpec, ParameterStore, Side};

use crate::autodiff::TapeError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(#[from] ConfigError),
    #[error("tape error: {0}")]
    Tape(#[from] TapeError),
    #[error("no parameter named {name:?}")]
    MissingParam { name: String },
    #[error("gradient for {name:?} has {grad} scalars, parameter has {param}")]
    GradShape {
        name: String,
        param: usize,
        grad: usize,
    },
    #[error("sequence of {len} tokens exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("empty input sequence")]
    EmptyInput,
    #[error("decoder expects {want} memory layers, got {got}")]
    MemoryLayers { want: usize, got: usize },
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}
