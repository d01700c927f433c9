//! Descriptive statistics for one tokenized corpus and for a dialect pair.

use serde::{Deserialize, Serialize};

use super::spearman::freq_table;
use super::RawCorpus;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_sentences: usize,
    pub n_tokens: u64,
    pub n_unique_tokens: usize,
    pub len_min: usize,
    pub len_max: usize,
    pub len_mean: f64,
}

pub fn corpus_stats(raw: &RawCorpus) -> CorpusStats {
    let mut n_tokens = 0u64;
    let mut len_min = usize::MAX;
    let mut len_max = 0usize;
    let mut unique = std::collections::HashSet::new();
    for sentence in raw {
        n_tokens += sentence.len() as u64;
        len_min = len_min.min(sentence.len());
        len_max = len_max.max(sentence.len());
        for tok in sentence {
            unique.insert(tok.as_str());
        }
    }
    let n = raw.len();
    CorpusStats {
        n_sentences: n,
        n_tokens,
        n_unique_tokens: unique.len(),
        len_min: if n == 0 { 0 } else { len_min },
        len_max,
        len_mean: if n == 0 {
            0.0
        } else {
            n_tokens as f64 / n as f64
        },
    }
}

/// One side of a dialect pair, with counts relative to the other side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SideStats {
    pub n_sentences: usize,
    pub n_tokens: u64,
    pub vocab_size: usize,
    /// Tokens of this side absent from the other side. Always <= vocab_size.
    pub unique_token_count: usize,
    pub len_min: usize,
    pub len_max: usize,
    pub len_mean: f64,
}

/// Side-by-side statistics of a dialect pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub a: SideStats,
    pub b: SideStats,
    /// Tokens occurring on both sides.
    pub shared_vocab: usize,
    /// Tokens in both sides' top_k most-frequent lists (frequency desc, ties
    /// by codepoint).
    pub top_k_overlap: usize,
    pub top_k: usize,
}

fn top_tokens(table: &super::spearman::FreqTable, k: usize) -> Vec<&str> {
    let mut by_freq: Vec<(&str, u64)> = table.iter().map(|(t, &f)| (t.as_str(), f)).collect();
    by_freq.sort_by(|(ta, fa), (tb, fb)| fb.cmp(fa).then_with(|| ta.cmp(tb)));
    by_freq.into_iter().take(k).map(|(t, _)| t).collect()
}

pub fn pair_stats(raw_a: &RawCorpus, raw_b: &RawCorpus, top_k: usize) -> PairStats {
    let fa = freq_table(raw_a);
    let fb = freq_table(raw_b);
    let shared_vocab = fa.keys().filter(|t| fb.contains_key(*t)).count();
    let top_a = top_tokens(&fa, top_k);
    let top_b: std::collections::HashSet<&str> = top_tokens(&fb, top_k).into_iter().collect();
    let top_k_overlap = top_a.iter().filter(|t| top_b.contains(*t)).count();
    let side = |raw: &RawCorpus, unique: usize| {
        let s = corpus_stats(raw);
        SideStats {
            n_sentences: s.n_sentences,
            n_tokens: s.n_tokens,
            vocab_size: s.n_unique_tokens,
            unique_token_count: unique,
            len_min: s.len_min,
            len_max: s.len_max,
            len_mean: s.len_mean,
        }
    };
    PairStats {
        a: side(raw_a, fa.len() - shared_vocab),
        b: side(raw_b, fb.len() - shared_vocab),
        shared_vocab,
        top_k_overlap,
        top_k,
    }
}
