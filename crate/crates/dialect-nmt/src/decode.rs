//! Greedy and beam decoding over anything that can score the next token.
//!
//! Decoding never emits PAD or BOS, and emits EOS only once `min_len` tokens
//! are out. Argmax ties break toward the lowest token id so runs are
//! bit-reproducible.

use std::cmp::Ordering;
use std::collections::HashMap;

use crate::autodiff::kernels::log_softmax_row_f64;
use crate::autodiff::Scalar;
use crate::corpus::{BOS_ID, EOS_ID, PAD_ID};
use crate::corpus::Dialect;
use crate::model::{encode_source, DecoderSession, EncodedSource, ModelConfig, ModelError, ParameterStore};
use crate::TokenId;

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    /// 1 = greedy.
    pub beam_size: usize,
    /// Cap on emitted tokens (EOS excluded).
    pub max_len: usize,
    /// EOS is blocked until this many tokens are emitted.
    pub min_len: usize,
    /// Hypothesis scores are divided by ((5+len)/6)^alpha.
    pub length_penalty_alpha: f64,
}

impl DecodeConfig {
    pub fn greedy(max_len: usize) -> Self {
        DecodeConfig {
            beam_size: 1,
            max_len,
            min_len: 0,
            length_penalty_alpha: 0.0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("beam_size must be at least 1")]
    ZeroBeam,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Incremental next-token scorer. `prefix` is the tokens emitted so far;
/// implementations must be pure functions of the prefix.
pub trait StepScorer {
    fn vocab_size(&self) -> usize;
    /// Raw logits (not log-probs) over the vocabulary.
    fn next_logits(&mut self, prefix: &[TokenId]) -> Result<Vec<f64>, ModelError>;
}

/// StepScorer backed by the incremental decoder. Sessions are cached per
/// prefix, so extending any previously scored prefix by one token costs one
/// decoder step plus one cache clone.
pub struct ModelScorer<'m, T: Scalar> {
    sessions: HashMap<Vec<TokenId>, DecoderSession<'m, T>>,
    vocab: usize,
}

impl<'m, T: Scalar> ModelScorer<'m, T> {
    pub fn new(
        store: &'m ParameterStore<T>,
        cfg: &'m ModelConfig,
        memory: &EncodedSource<T>,
        tgt_dialect: Dialect,
    ) -> Result<Self, ModelError> {
        let root = DecoderSession::start(store, cfg, memory, tgt_dialect)?;
        let mut sessions = HashMap::new();
        sessions.insert(Vec::new(), root);
        Ok(ModelScorer {
            sessions,
            vocab: cfg.vocab_size,
        })
    }

    fn ensure(&mut self, prefix: &[TokenId]) -> Result<(), ModelError> {
        let mut depth = prefix.len();
        while depth > 0 && !self.sessions.contains_key(&prefix[..depth]) {
            depth -= 1;
        }
        while depth < prefix.len() {
            let mut session = self.sessions[&prefix[..depth]].clone();
            session.push(prefix[depth])?;
            depth += 1;
            self.sessions.insert(prefix[..depth].to_vec(), session);
        }
        Ok(())
    }
}

impl<T: Scalar> StepScorer for ModelScorer<'_, T> {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn next_logits(&mut self, prefix: &[TokenId]) -> Result<Vec<f64>, ModelError> {
        self.ensure(prefix)?;
        Ok(self.sessions[prefix]
            .last_logits()
            .iter()
            .map(|&v| v.as_f64())
            .collect())
    }
}

fn emittable(id: usize, emitted: usize, min_len: usize) -> bool {
    if id == PAD_ID as usize || id == BOS_ID as usize {
        return false;
    }
    id != EOS_ID as usize || emitted >= min_len
}

pub fn greedy<S: StepScorer>(scorer: &mut S, cfg: &DecodeConfig) -> Result<Vec<TokenId>, DecodeError> {
    let mut out = Vec::new();
    while out.len() < cfg.max_len {
        let logits = scorer.next_logits(&out)?;
        let mut best: Option<(usize, f64)> = None;
        for (id, &l) in logits.iter().enumerate() {
            if !emittable(id, out.len(), cfg.min_len) {
                continue;
            }
            if best.is_none_or(|(_, b)| l > b) {
                best = Some((id, l));
            }
        }
        let (id, _) = best.expect("vocabulary has emittable tokens");
        if id == EOS_ID as usize {
            break;
        }
        out.push(id as TokenId);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamOutcome {
    pub tokens: Vec<TokenId>,
    /// Sum of step log-probs; for finished hypotheses the EOS step is included.
    pub score: f64,
    /// score / ((5+len)/6)^alpha with len = tokens.len().
    pub normalized: f64,
    /// False when no hypothesis reached EOS within max_len.
    pub finished: bool,
}

fn length_penalty(len: usize, alpha: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(alpha)
}

#[derive(Clone)]
struct Hyp {
    tokens: Vec<TokenId>,
    score: f64,
}

/// Deterministic preference: higher normalized score, then shorter, then
/// lexicographically smaller token sequence.
fn better(a: &(f64, Hyp), b: &(f64, Hyp)) -> bool {
    match a.0.partial_cmp(&b.0) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Less) => false,
        _ => (a.1.tokens.len(), &a.1.tokens) < (b.1.tokens.len(), &b.1.tokens),
    }
}

pub fn beam<S: StepScorer>(scorer: &mut S, cfg: &DecodeConfig) -> Result<BeamOutcome, DecodeError> {
    if cfg.beam_size == 0 {
        return Err(DecodeError::ZeroBeam);
    }
    let alpha = cfg.length_penalty_alpha;
    let mut active = vec![Hyp {
        tokens: Vec::new(),
        score: 0.0,
    }];
    let mut finished: Vec<(f64, Hyp)> = Vec::new();
    for _ in 0..cfg.max_len {
        // (score, parent, token) for every legal one-token extension.
        let mut candidates: Vec<(f64, usize, TokenId)> = Vec::new();
        for (pi, h) in active.iter().enumerate() {
            let logits = scorer.next_logits(&h.tokens)?;
            let lp = log_softmax_row_f64(&logits);
            for (id, &l) in lp.iter().enumerate() {
                if emittable(id, h.tokens.len(), cfg.min_len) {
                    candidates.push((h.score + l, pi, id as TokenId));
                }
            }
        }
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        // Scan the top of the candidate list: EOS extensions retire into the
        // finished pool, others refill the beam.
        let mut next_active = Vec::with_capacity(cfg.beam_size);
        for (seen, &(score, pi, tok)) in candidates.iter().enumerate() {
            if next_active.len() == cfg.beam_size && seen >= 2 * cfg.beam_size {
                break;
            }
            if tok == EOS_ID {
                let h = Hyp {
                    tokens: active[pi].tokens.clone(),
                    score,
                };
                finished.push((score / length_penalty(h.tokens.len(), alpha), h));
            } else if next_active.len() < cfg.beam_size {
                let mut tokens = active[pi].tokens.clone();
                tokens.push(tok);
                next_active.push(Hyp { tokens, score });
            }
        }
        active = next_active;
        if active.is_empty() {
            break;
        }
    }
    // Hypotheses that used the full token budget may still terminate cleanly.
    for h in &active {
        if h.tokens.len() >= cfg.min_len {
            let lp = log_softmax_row_f64(&scorer.next_logits(&h.tokens)?);
            let score = h.score + lp[EOS_ID as usize];
            finished.push((
                score / length_penalty(h.tokens.len(), alpha),
                Hyp {
                    tokens: h.tokens.clone(),
                    score,
                },
            ));
        }
    }
    let best_finished = finished
        .into_iter()
        .reduce(|a, b| if better(&a, &b) { a } else { b });
    let outcome = match best_finished {
        Some((normalized, h)) => BeamOutcome {
            tokens: h.tokens,
            score: h.score,
            normalized,
            finished: true,
        },
        None => {
            let (normalized, h) = active
                .into_iter()
                .map(|h| (h.score / length_penalty(h.tokens.len(), alpha), h))
                .reduce(|a, b| if better(&a, &b) { a } else { b })
                .expect("at least one hypothesis survives");
            BeamOutcome {
                tokens: h.tokens,
                score: h.score,
                normalized,
                finished: false,
            }
        }
    };
    Ok(outcome)
}

/// Encode `src`, then decode into the opposite dialect.
pub fn translate_ids<T: Scalar>(
    store: &ParameterStore<T>,
    cfg: &ModelConfig,
    src: &[TokenId],
    src_dialect: Dialect,
    dcfg: &DecodeConfig,
) -> Result<Vec<TokenId>, DecodeError> {
    let memory = encode_source(store, cfg, src, src_dialect)?;
    let mut scorer = ModelScorer::new(store, cfg, &memory, src_dialect.other())?;
    if dcfg.beam_size == 1 {
        greedy(&mut scorer, dcfg)
    } else {
        beam(&mut scorer, dcfg).map(|o| o.tokens)
    }
}
