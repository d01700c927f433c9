//! Synthetic dialect-pair generation.
//!
//! Base sentences are drawn from a Zipf unigram model with a light bigram
//! flavor; dialect A is the base text and dialect B is the base text pushed
//! through an injective substitution table. The table swaps the surface forms
//! of selected high-frequency token pairs (so the top-of-vocabulary frequency
//! rankings disagree sharply while the full-vocabulary rankings stay close)
//! and rewrites a few mid-frequency tokens into characters only dialect B
//! uses. Train pools are sentence-disjoint across dialects; dev and test stay
//! parallel so the emitted table is a perfect oracle translator.

pub mod rules;

pub use rules::{rule_based_translate, rule_translate_corpus, RuleTable};

use std::collections::HashSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{freq_table, spearman, CorpusError, RawCorpus, SpearmanResult};
use crate::derive_seed;

// Stream tags for derived RNG seeds.
const TAG_SUCCESSOR: u64 = 1;
const TAG_TRAIN_A: u64 = 2;
const TAG_TRAIN_B: u64 = 3;
const TAG_DEV: u64 = 4;
const TAG_TEST: u64 = 5;
const TAG_SPEARMAN: u64 = 6;

const FIRST_CHAR: u32 = 0x4E00;
/// With what probability the next token is the previous token's designated
/// successor instead of a fresh Zipf draw.
const SUCCESSOR_PROB: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub base_vocab_size: usize,
    pub zipf_exponent: f64,
    pub n_train_per_dialect: usize,
    pub n_dev: usize,
    pub n_test: usize,
    /// Fraction of the top `substitution_top_window` token ranks whose
    /// surface forms get swapped pairwise in dialect B.
    pub substitution_fraction: f64,
    pub substitution_top_window: usize,
    /// Mid-frequency tokens rewritten to fresh dialect-B-only characters.
    pub unique_token_count: usize,
    pub len_min: usize,
    pub len_max: usize,
    pub seed: u64,
    /// Generation fails unless full-vocab Spearman exceeds this.
    pub target_full_spearman_min: Option<f64>,
    /// Generation fails unless top-k Spearman stays below this.
    pub target_top_k_spearman_max: Option<f64>,
    pub spearman_top_k: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            base_vocab_size: 200,
            zipf_exponent: 1.1,
            n_train_per_dialect: 20_000,
            n_dev: 400,
            n_test: 400,
            substitution_fraction: 0.3,
            substitution_top_window: 50,
            unique_token_count: 2,
            len_min: 4,
            len_max: 16,
            seed: 7,
            target_full_spearman_min: Some(0.7),
            target_top_k_spearman_max: Some(0.5),
            spearman_top_k: 50,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |msg: String| Err(SynthError::Config(msg));
        if self.base_vocab_size < 10 {
            return err(format!("base_vocab_size {} < 10", self.base_vocab_size));
        }
        if self.base_vocab_size + self.unique_token_count > 20_000 {
            return err("vocabulary exceeds the contiguous CJK range".into());
        }
        if self.zipf_exponent <= 0.0 || !self.zipf_exponent.is_finite() {
            return err(format!("zipf_exponent {} must be positive", self.zipf_exponent));
        }
        if !(0.0..=1.0).contains(&self.substitution_fraction) {
            return err(format!(
                "substitution_fraction {} outside [0,1]",
                self.substitution_fraction
            ));
        }
        if self.substitution_top_window > self.base_vocab_size {
            return err(format!(
                "substitution_top_window {} exceeds vocab {}",
                self.substitution_top_window, self.base_vocab_size
            ));
        }
        if !(4..=32).contains(&self.len_min)
            || !(4..=32).contains(&self.len_max)
            || self.len_min > self.len_max
        {
            return err(format!(
                "length bounds {}..{} must satisfy 4 <= min <= max <= 32",
                self.len_min, self.len_max
            ));
        }
        if self.unique_token_count > 0 {
            // Unique rewrites claim ranks starting at vocab/2; they must not
            // collide with the swap window.
            let mid = self.base_vocab_size / 2;
            if self.substitution_top_window > mid {
                return err(format!(
                    "substitution_top_window {} overlaps the mid-frequency ranks \
                     used for unique tokens (vocab {})",
                    self.substitution_top_window, self.base_vocab_size
                ));
            }
            if mid + self.unique_token_count > self.base_vocab_size {
                return err(format!(
                    "unique_token_count {} exceeds vocab headroom",
                    self.unique_token_count
                ));
            }
        }
        if self.spearman_top_k < 3 {
            return err(format!("spearman_top_k {} < 3", self.spearman_top_k));
        }
        Ok(())
    }

    /// Number of swap pairs; each pair rewrites two tokens.
    fn n_swap_pairs(&self) -> usize {
        let rewritten = (self.substitution_fraction * self.substitution_top_window as f64).round();
        (rewritten as usize) / 2
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error("rule table: {0}")]
    Rules(String),
    #[error(
        "generated pair missed its divergence targets: full-vocab Spearman {full:.4} \
         (needs > {full_min:?}), top-{top_k} Spearman {top:.4} (needs < {top_max:?})"
    )]
    TargetsMissed {
        full: f64,
        top: f64,
        top_k: usize,
        full_min: Option<f64>,
        top_max: Option<f64>,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Stats(#[from] CorpusError),
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthStats {
    pub spearman_full: SpearmanResult,
    pub spearman_top_k: SpearmanResult,
    pub top_k: usize,
    pub n_rules: usize,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub train_a: RawCorpus,
    pub train_b: RawCorpus,
    pub dev_a: RawCorpus,
    pub dev_b: RawCorpus,
    pub test_a: RawCorpus,
    pub test_b: RawCorpus,
    /// A-to-B table; its inverse translates B back to A.
    pub rules: RuleTable,
    pub stats: SynthStats,
}

fn token_string(rank: usize) -> String {
    char::from_u32(FIRST_CHAR + rank as u32)
        .expect("rank stays inside the CJK block")
        .to_string()
}

/// Inverse-CDF sampler over ranks 0..n with weight (rank+1)^-s.
struct ZipfSampler {
    cumulative: Vec<f64>,
}

impl ZipfSampler {
    fn new(n: usize, s: f64) -> Self {
        let mut cumulative = Vec::with_capacity(n);
        let mut acc = 0.0;
        for k in 0..n {
            acc += ((k + 1) as f64).powf(-s);
            cumulative.push(acc);
        }
        let total = acc;
        for c in &mut cumulative {
            *c /= total;
        }
        ZipfSampler { cumulative }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random();
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }
}

struct BaseSampler<'c> {
    cfg: &'c SynthConfig,
    zipf: ZipfSampler,
    successor: Vec<usize>,
}

impl<'c> BaseSampler<'c> {
    fn new(cfg: &'c SynthConfig) -> Self {
        let zipf = ZipfSampler::new(cfg.base_vocab_size, cfg.zipf_exponent);
        let mut successor: Vec<usize> = (0..cfg.base_vocab_size).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[TAG_SUCCESSOR]));
        for i in (1..successor.len()).rev() {
            successor.swap(i, rng.random_range(0..=i));
        }
        BaseSampler {
            cfg,
            zipf,
            successor,
        }
    }

    fn next_token(&self, rng: &mut ChaCha8Rng, prev: Option<usize>) -> usize {
        if let Some(p) = prev {
            if rng.random::<f64>() < SUCCESSOR_PROB && self.successor[p] != p {
                return self.successor[p];
            }
            for _ in 0..16 {
                let cand = self.zipf.sample(rng);
                if cand != p {
                    return cand;
                }
            }
            (p + 1) % self.cfg.base_vocab_size
        } else {
            self.zipf.sample(rng)
        }
    }

    /// One sentence as token ranks.
    fn sentence(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let len = rng.random_range(self.cfg.len_min..=self.cfg.len_max);
        let mut out = Vec::with_capacity(len);
        let mut prev = None;
        for _ in 0..len {
            let t = self.next_token(rng, prev);
            out.push(t);
            prev = Some(t);
        }
        out
    }
}

fn ranks_to_tokens(ranks: &[usize]) -> Vec<String> {
    ranks.iter().map(|&r| token_string(r)).collect()
}

fn build_rules(cfg: &SynthConfig) -> Result<RuleTable, SynthError> {
    let mut pairs = Vec::new();
    let window = cfg.substitution_top_window;
    for i in 0..cfg.n_swap_pairs() {
        // Swap an alternating high rank with one scanned up from the window
        // bottom; both tokens stay in circulation, so their frequency ranks
        // trade places instead of one vanishing from the corpus.
        let hi = 2 * i;
        let lo = window - 1 - i;
        if hi >= lo {
            break;
        }
        pairs.push((token_string(hi), token_string(lo)));
        pairs.push((token_string(lo), token_string(hi)));
    }
    let mid = cfg.base_vocab_size / 2;
    for j in 0..cfg.unique_token_count {
        pairs.push((token_string(mid + j), token_string(cfg.base_vocab_size + j)));
    }
    RuleTable::new(pairs, "a2b")
}

pub fn generate_synthetic_pair(cfg: &SynthConfig) -> Result<SynthOutput, SynthError> {
    cfg.validate()?;
    let rules = build_rules(cfg)?;
    let sampler = BaseSampler::new(cfg);

    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut draw_pool = |tag: u64, n: usize, disjoint: bool| -> RawCorpus {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[tag]));
        let mut pool = Vec::with_capacity(n);
        for _ in 0..n {
            let mut base = sampler.sentence(&mut rng);
            if disjoint {
                for _ in 0..1000 {
                    if !seen.contains(&base) {
                        break;
                    }
                    base = sampler.sentence(&mut rng);
                }
                seen.insert(base.clone());
            }
            pool.push(base);
        }
        pool.iter().map(|s| ranks_to_tokens(s)).collect()
    };

    let train_a = draw_pool(TAG_TRAIN_A, cfg.n_train_per_dialect, true);
    let train_b_base = draw_pool(TAG_TRAIN_B, cfg.n_train_per_dialect, true);
    let dev_a = draw_pool(TAG_DEV, cfg.n_dev, true);
    let test_a = draw_pool(TAG_TEST, cfg.n_test, true);

    let train_b = rule_translate_corpus(&train_b_base, &rules);
    let dev_b = rule_translate_corpus(&dev_a, &rules);
    let test_b = rule_translate_corpus(&test_a, &rules);

    let freq_a = freq_table(&train_a);
    let freq_b = freq_table(&train_b);
    let sp_seed = derive_seed(cfg.seed, &[TAG_SPEARMAN]);
    let spearman_full = spearman(&freq_a, &freq_b, None, 1000, sp_seed)?;
    let spearman_top_k = spearman(&freq_a, &freq_b, Some(cfg.spearman_top_k), 1000, sp_seed)?;

    let full_ok = cfg
        .target_full_spearman_min
        .is_none_or(|min| spearman_full.coefficient > min);
    let top_ok = cfg
        .target_top_k_spearman_max
        .is_none_or(|max| spearman_top_k.coefficient < max);
    if !full_ok || !top_ok {
        return Err(SynthError::TargetsMissed {
            full: spearman_full.coefficient,
            top: spearman_top_k.coefficient,
            top_k: cfg.spearman_top_k,
            full_min: cfg.target_full_spearman_min,
            top_max: cfg.target_top_k_spearman_max,
        });
    }

    Ok(SynthOutput {
        train_a,
        train_b,
        dev_a,
        dev_b,
        test_a,
        test_b,
        stats: SynthStats {
            spearman_full,
            spearman_top_k,
            top_k: cfg.spearman_top_k,
            n_rules: rules.len(),
        },
        rules,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            n_train_per_dialect: 1500,
            n_dev: 60,
            n_test: 60,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_cfg();
        let x = generate_synthetic_pair(&cfg).unwrap();
        let y = generate_synthetic_pair(&cfg).unwrap();
        assert_eq!(x.train_a, y.train_a);
        assert_eq!(x.train_b, y.train_b);
        assert_eq!(x.dev_b, y.dev_b);
        assert_eq!(x.rules, y.rules);
    }

    #[test]
    fn dev_and_test_are_rule_parallel() {
        let out = generate_synthetic_pair(&small_cfg()).unwrap();
        for (a, b) in out.dev_a.iter().zip(&out.dev_b) {
            assert_eq!(&rule_based_translate(a, &out.rules), b);
        }
        for (a, b) in out.test_a.iter().zip(&out.test_b) {
            assert_eq!(&rule_based_translate(a, &out.rules), b);
        }
        let inv = out.rules.invert();
        for (a, b) in out.dev_a.iter().zip(&out.dev_b) {
            assert_eq!(&rule_based_translate(b, &inv), a);
        }
    }

    #[test]
    fn train_pools_are_sentence_disjoint() {
        let out = generate_synthetic_pair(&small_cfg()).unwrap();
        let inv = out.rules.invert();
        let a_set: HashSet<&Vec<String>> = out.train_a.iter().collect();
        for b in &out.train_b {
            let base = rule_based_translate(b, &inv);
            assert!(!a_set.contains(&base), "parallel leak: {base:?}");
        }
    }

    #[test]
    fn unique_tokens_split_across_dialects() {
        let cfg = small_cfg();
        let out = generate_synthetic_pair(&cfg).unwrap();
        let freq_a = freq_table(&out.train_a);
        let freq_b = freq_table(&out.train_b);
        let mid = cfg.base_vocab_size / 2;
        for j in 0..cfg.unique_token_count {
            let a_only = token_string(mid + j);
            let b_only = token_string(cfg.base_vocab_size + j);
            assert!(freq_a.contains_key(&a_only) && !freq_b.contains_key(&a_only));
            assert!(freq_b.contains_key(&b_only) && !freq_a.contains_key(&b_only));
        }
    }

    #[test]
    fn default_scale_hits_divergence_targets() {
        let out = generate_synthetic_pair(&SynthConfig::default()).unwrap();
        assert!(out.stats.spearman_full.coefficient > 0.7);
        assert!(out.stats.spearman_top_k.coefficient < 0.5);
    }

    #[test]
    fn identity_config_collapses_the_dialects() {
        let cfg = SynthConfig {
            substitution_fraction: 0.0,
            unique_token_count: 0,
            target_full_spearman_min: None,
            target_top_k_spearman_max: None,
            n_train_per_dialect: 300,
            n_dev: 40,
            n_test: 40,
            ..SynthConfig::default()
        };
        let out = generate_synthetic_pair(&cfg).unwrap();
        assert!(out.rules.is_empty());
        assert_eq!(out.dev_a, out.dev_b);
        assert_eq!(out.test_a, out.test_b);
    }

    #[test]
    fn sentences_respect_length_and_repeat_constraints() {
        let cfg = small_cfg();
        let out = generate_synthetic_pair(&cfg).unwrap();
        for s in out.train_a.iter().chain(&out.dev_a) {
            assert!(s.len() >= cfg.len_min && s.len() <= cfg.len_max);
            for w in s.windows(2) {
                assert_ne!(w[0], w[1], "immediate repeat in {s:?}");
            }
        }
    }

    #[test]
    fn infeasible_configs_are_rejected() {
        let bad = SynthConfig {
            substitution_top_window: 300,
            ..SynthConfig::default()
        };
        assert!(matches!(
            generate_synthetic_pair(&bad),
            Err(SynthError::Config(_))
        ));
        let bad = SynthConfig {
            len_min: 2,
            ..SynthConfig::default()
        };
        assert!(generate_synthetic_pair(&bad).is_err());
        let bad = SynthConfig {
            unique_token_count: 150,
            ..SynthConfig::default()
        };
        assert!(generate_synthetic_pair(&bad).is_err());
    }

    #[test]
    fn missed_targets_surface_as_errors() {
        // An identity pair cannot push top-k Spearman below 0.5.
        let cfg = SynthConfig {
            substitution_fraction: 0.0,
            unique_token_count: 0,
            n_train_per_dialect: 300,
            n_dev: 10,
            n_test: 10,
            ..SynthConfig::default()
        };
        assert!(matches!(
            generate_synthetic_pair(&cfg),
            Err(SynthError::TargetsMissed { .. })
        ));
    }
}
