//! File-level pipeline: generate or prep data, train, translate, evaluate.
//! Each command takes typed arguments, writes outputs only under its
//! out_dir, and leaves a manifest.json describing the run.

mod commands;
mod config;
mod lock;
mod manifest;

pub use commands::{
    cmd_eval, cmd_gen_synth, cmd_prep, cmd_stats, cmd_train, cmd_translate, Direction, EvalArgs,
    GenSynthArgs, PrepArgs, PrepOutcome, StatsArgs, StatsDoc, TrainArgs, TranslateArgs,
    BEST_CKPT, BLEU_FILE, DATA_FILES, LAST_CKPT, METRICS_FILE, OPTIMIZER_CKPT, RULES_A2B_FILE,
    RULES_B2A_FILE, STATS_FILE, THREADS_ENV, TRANSLATIONS_FILE, VOCAB_FILE,
};
pub use config::{PrepConfig, RunConfig};
pub use lock::{OutDirLock, LOCK_FILE};
pub use manifest::{RunManifest, MANIFEST_FILE};

use crate::bleu::BleuError;
use crate::corpus::CorpusError;
use crate::decode::DecodeError;
use crate::model::ModelError;
use crate::synth::SynthError;
use crate::training::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error("config {path}: {msg}")]
    Config { path: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("out_dir is locked by another run ({path} exists)")]
    Locked { path: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Bleu(#[from] BleuError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("json: {0}")]
    Serde(#[from] serde_json::Error),
}

impl PipelineError {
    /// 2 for usage/config mistakes, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) | PipelineError::Config { .. } => 2,
            PipelineError::Train(TrainError::Config(_)) | PipelineError::Train(TrainError::Data(_)) => 2,
            PipelineError::Model(ModelError::Config(_)) => 2,
            PipelineError::Synth(SynthError::Config(_)) => 2,
            _ => 1,
        }
    }
}
