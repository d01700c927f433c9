//! Unsupervised training: a decaying-weight reconstruction loss teaches the
//! shared latent space, a constant-weight round-trip loss teaches the
//! dialects apart, and a single Adam step merges both gradients.

mod adam;
mod config;
mod losses;
mod schedule;
mod trainer;

pub use adam::AdamState;
pub use config::{BtDecode, TrainConfig};
pub use losses::{backtranslate, denoise_ce, reconstruction_accuracy, supervised_ce};
pub use schedule::{lambda_com, lambda_div, lr_at};
pub use trainer::{MetricsRecord, StopReason, TrainData, TrainOutcome, Trainer};

use crate::bleu::BleuError;
use crate::decode::DecodeError;
use crate::model::ModelError;
use crate::noise::NoiseError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("invalid training data: {0}")]
    Data(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Bleu(#[from] BleuError),
    #[error(
        "non-finite loss at step {step}: loss_com={loss_com}, loss_div={loss_div}, \
         grad_norm={grad_norm}"
    )]
    NonFinite {
        step: u64,
        loss_com: f64,
        loss_div: f64,
        grad_norm: f64,
    },
    #[error("metrics io: {0}")]
    Io(#[from] std::io::Error),
    #[error("metrics serialization: {0}")]
    Serde(#[from] serde_json::Error),
}
