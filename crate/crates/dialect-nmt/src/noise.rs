//! Input corruption for denoising training. Order is fixed: token drops, then
//! blank substitutions, then adjacent swaps. The reconstruction target is
//! always the uncorrupted sentence.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, BLANK_ID};
use crate::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Per-token removal probability. One token always survives.
    pub p_drop: f64,
    /// Per-surviving-token probability of replacement with `<blank>`.
    pub p_blank: f64,
    /// Number of adjacent-pair swaps applied after drop and blank.
    pub n_swaps: usize,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            p_drop: 0.1,
            p_blank: 0.1,
            n_swaps: 1,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NoiseError {
    #[error("{field} must be a probability in [0, 1], got {value}")]
    BadProbability { field: &'static str, value: f64 },
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), NoiseError> {
        for (field, value) in [("p_drop", self.p_drop), ("p_blank", self.p_blank)] {
            if !(0.0..=1.0).contains(&value) || value.is_nan() {
                return Err(NoiseError::BadProbability { field, value });
            }
        }
        Ok(())
    }
}

/// Corrupt one sentence. Deterministic given the RNG state.
pub fn add_noise(sentence: &Sentence, cfg: &NoiseConfig, rng: &mut ChaCha8Rng) -> Sentence {
    let mut ids: Vec<_> = sentence
        .ids
        .iter()
        .copied()
        .filter(|_| rng.random::<f64>() >= cfg.p_drop)
        .collect();
    if ids.is_empty() && !sentence.ids.is_empty() {
        // Everything was dropped; resurrect one token so the encoder always
        // sees input.
        let keep = rng.random_range(0..sentence.ids.len());
        ids.push(sentence.ids[keep]);
    }
    for id in ids.iter_mut() {
        if rng.random::<f64>() < cfg.p_blank {
            *id = BLANK_ID;
        }
    }
    if ids.len() >= 2 {
        for _ in 0..cfg.n_swaps {
            let i = rng.random_range(0..ids.len() - 1);
            ids.swap(i, i + 1);
        }
    }
    Sentence::new(ids, sentence.dialect)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoisedBatch {
    pub original: Vec<Sentence>,
    pub corrupted: Vec<Sentence>,
}

/// Corrupt a batch with one independent RNG stream per sentence, so results
/// do not depend on batch composition order effects elsewhere.
pub fn noise_batch(batch: &[Sentence], cfg: &NoiseConfig, seed: u64) -> NoisedBatch {
    let corrupted = batch
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64]));
            add_noise(s, cfg, &mut rng)
        })
        .collect();
    NoisedBatch {
        original: batch.to_vec(),
        corrupted,
    }
}
