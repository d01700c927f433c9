//! Corpus-level BLEU-4: clipped modified n-gram precision, geometric mean,
//! brevity penalty, no smoothing. Any zero precision zeroes the score but the
//! per-order precisions are still reported.

use std::collections::HashMap;
use std::hash::Hash;

use serde::Serialize;

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct BleuReport {
    /// 0..=100.
    pub score: f64,
    /// Modified precisions p1..p4, each 0 when its denominator is 0.
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: u64,
    pub ref_len: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum BleuError {
    #[error("{hyps} hypotheses vs {refs} references")]
    LengthMismatch { hyps: usize, refs: usize },
}

fn ngram_counts<Tok: Eq + Hash>(tokens: &[Tok], n: usize) -> HashMap<&[Tok], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU over token sequences; one reference per hypothesis.
pub fn bleu<Tok, H, R>(hyps: &[H], refs: &[R]) -> Result<BleuReport, BleuError>
where
    Tok: Eq + Hash,
    H: AsRef<[Tok]>,
    R: AsRef<[Tok]>,
{
    if hyps.len() != refs.len() {
        return Err(BleuError::LengthMismatch {
            hyps: hyps.len(),
            refs: refs.len(),
        });
    }
    let mut matched = [0u64; MAX_ORDER];
    let mut total = [0u64; MAX_ORDER];
    let mut hyp_len = 0u64;
    let mut ref_len = 0u64;
    for (h, r) in hyps.iter().zip(refs) {
        let (h, r) = (h.as_ref(), r.as_ref());
        hyp_len += h.len() as u64;
        ref_len += r.len() as u64;
        for (n, (m, t)) in matched.iter_mut().zip(&mut total).enumerate() {
            let n = n + 1;
            let ref_counts = ngram_counts(r, n);
            for (gram, count) in ngram_counts(h, n) {
                *m += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            }
            *t += (h.len() + 1).saturating_sub(n) as u64;
        }
    }
    let mut precisions = [0.0; MAX_ORDER];
    for ((p, &m), &t) in precisions.iter_mut().zip(&matched).zip(&total) {
        if t > 0 {
            *p = m as f64 / t as f64;
        }
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let score = if precisions.iter().all(|&p| p > 0.0) {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        100.0 * brevity_penalty * log_mean.exp()
    } else {
        0.0
    };
    Ok(BleuReport {
        score,
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
    })
}
