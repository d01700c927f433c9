//! Metric and search correctness against independent oracles: BLEU vs an
//! exhaustive scan-counting implementation, rank correlation vs the tie-free
//! closed form, and beam search vs greedy.

mod common;

use common::{closed_form_spearman, naive_bleu};
use dialect_nmt::bleu::bleu;
use dialect_nmt::corpus::{spearman, Dialect, FreqTable, BOS_ID, EOS_ID, N_SPECIALS, PAD_ID};
use dialect_nmt::decode::{beam, greedy, translate_ids, DecodeConfig, ModelScorer, StepScorer};
use dialect_nmt::model::{build_model, encode_source, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pair(rng: &mut ChaCha8Rng) -> (Vec<Vec<u32>>, Vec<Vec<u32>>) {
    let n_sents = rng.random_range(1..8);
    let vocab = rng.random_range(2u32..12);
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    for _ in 0..n_sents {
        let hl = rng.random_range(0..15);
        let rl = rng.random_range(1..15);
        hyps.push((0..hl).map(|_| rng.random_range(0..vocab)).collect());
        refs.push((0..rl).map(|_| rng.random_range(0..vocab)).collect());
    }
    (hyps, refs)
}

#[test]
fn bleu_matches_exhaustive_oracle_on_random_corpora() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xB1E0);
    for case in 0..120 {
        let (hyps, refs) = random_pair(&mut rng);
        let fast = bleu(&hyps, &refs).unwrap().score;
        let slow = naive_bleu(&hyps, &refs);
        assert!(
            (fast - slow).abs() < 1e-9,
            "case {case}: library {fast} vs oracle {slow}\nhyps={hyps:?}\nrefs={refs:?}"
        );
    }
}

#[test]
fn bleu_boundary_behavior() {
    // Perfect match, small vocab with heavy repetition, and overlong repeats
    // all stress the clipping logic.
    let h = vec![vec![1u32, 1, 1, 1, 2, 2]];
    let r = vec![vec![1u32, 1, 2]];
    assert!((bleu(&h, &r).unwrap().score - naive_bleu(&h, &r)).abs() < 1e-12);
    let c = vec![vec![3u32, 4, 5, 6, 7]];
    assert_eq!(bleu(&c, &c).unwrap().score, 100.0);
}

#[test]
fn spearman_matches_closed_form_when_tie_free() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EA3);
    for case in 0..50 {
        let n = rng.random_range(3..40usize);
        // Distinct frequencies on both sides: a random permutation of
        // distinct magnitudes keyed by the same token set.
        let mut freqs_a: Vec<u64> = (0..n as u64).map(|i| 10 + i * 3).collect();
        let mut freqs_b = freqs_a.clone();
        for i in (1..n).rev() {
            freqs_a.swap(i, rng.random_range(0..=i));
            freqs_b.swap(i, rng.random_range(0..=i));
        }
        let mut fa = FreqTable::new();
        let mut fb = FreqTable::new();
        for i in 0..n {
            let tok = format!("t{i:03}");
            fa.insert(tok.clone(), freqs_a[i]);
            fb.insert(tok, freqs_b[i]);
        }
        let got = spearman(&fa, &fb, None, 0, 0).unwrap();
        let want = closed_form_spearman(&freqs_a, &freqs_b);
        assert!(
            (got.coefficient - want).abs() < 1e-12,
            "case {case}: {} vs {want}",
            got.coefficient
        );
        assert_eq!(got.n_pairs, n);
    }
}

fn test_model() -> (ModelConfig, dialect_nmt::model::ParameterStore<f32>) {
    let cfg = ModelConfig {
        n_layers: 2,
        model_dim: 16,
        pivot_dim: 8,
        n_heads: 2,
        ffn_dim: 32,
        n_shared_enc: 1,
        n_shared_dec: 1,
        max_len: 12,
        dropout: 0.0,
        vocab_size: N_SPECIALS + 20,
        ..ModelConfig::desk(0)
    };
    let store = build_model(&cfg, 0xD0_DE).unwrap();
    (cfg, store)
}

/// Prefix-dependent logits from an integer mix, so search order matters and
/// every prefix has a distinct, reproducible score row.
struct MixScorer {
    vocab: usize,
    seed: u64,
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 33)).wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    z = (z ^ (z >> 33)).wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    z ^ (z >> 33)
}

impl StepScorer for MixScorer {
    fn vocab_size(&self) -> usize {
        self.vocab
    }
    fn next_logits(&mut self, prefix: &[u32]) -> Result<Vec<f64>, dialect_nmt::model::ModelError> {
        let mut h = self.seed;
        for &t in prefix {
            h = mix(h ^ u64::from(t).wrapping_add(0x9E37));
        }
        Ok((0..self.vocab)
            .map(|id| {
                let draw = mix(h ^ (id as u64).wrapping_mul(0x1234_5677));
                (draw as f64 / u64::MAX as f64) * 6.0 - 3.0
            })
            .collect())
    }
}

fn own_log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|v| v - lse).collect()
}

/// Score of a complete hypothesis: step log-probs of each token plus the
/// final EOS step, straight from the definition.
fn own_score(scorer: &mut MixScorer, tokens: &[u32]) -> f64 {
    let mut score = 0.0;
    for t in 0..tokens.len() {
        score += own_log_softmax(&scorer.next_logits(&tokens[..t]).unwrap())[tokens[t] as usize];
    }
    score + own_log_softmax(&scorer.next_logits(tokens).unwrap())[EOS_ID as usize]
}

/// A beam wide enough to hold every hypothesis prunes nothing, so it must
/// return exactly the best sequence that brute-force enumeration finds.
#[test]
fn unpruned_beam_equals_exhaustive_search() {
    let vocab = N_SPECIALS + 2; // emittable non-EOS alphabet: UNK, BLANK, 5, 6
    let alphabet: Vec<u32> = (0..vocab as u32)
        .filter(|&id| id != PAD_ID && id != BOS_ID && id != EOS_ID)
        .collect();
    let max_len = 4usize;
    for (min_len, alpha, seed) in [(0usize, 0.0, 1u64), (0, 0.6, 2), (2, 0.0, 3), (2, 1.0, 4)] {
        let mut scorer = MixScorer { vocab, seed };
        // Enumerate every sequence with min_len <= len <= max_len.
        let mut frontier: Vec<Vec<u32>> = vec![Vec::new()];
        let mut best: Option<(f64, Vec<u32>)> = None;
        for len in 0..=max_len {
            for seq in &frontier {
                if len >= min_len {
                    let penalty = ((5.0 + seq.len() as f64) / 6.0).powf(alpha);
                    let normalized = own_score(&mut scorer, seq) / penalty;
                    let replace = match &best {
                        None => true,
                        Some((b, t)) => {
                            normalized > *b
                                || (normalized == *b
                                    && (seq.len(), seq.as_slice()) < (t.len(), t.as_slice()))
                        }
                    };
                    if replace {
                        best = Some((normalized, seq.clone()));
                    }
                }
            }
            if len < max_len {
                frontier = frontier
                    .iter()
                    .flat_map(|s| {
                        alphabet.iter().map(move |&a| {
                            let mut e = s.clone();
                            e.push(a);
                            e
                        })
                    })
                    .collect();
            }
        }
        let (best_norm, best_tokens) = best.unwrap();

        let dcfg = DecodeConfig {
            beam_size: 4000, // > alphabet^max_len, so nothing is ever pruned
            max_len,
            min_len,
            length_penalty_alpha: alpha,
        };
        let mut scorer = MixScorer { vocab, seed };
        let out = beam(&mut scorer, &dcfg).unwrap();
        assert!(out.finished);
        assert_eq!(
            out.tokens, best_tokens,
            "min_len {min_len} alpha {alpha}: beam {:?} vs exhaustive {best_tokens:?}",
            out.tokens
        );
        assert!((out.normalized - best_norm).abs() < 1e-9);
    }
}

/// Narrow beams may miss the optimum but must never misreport: the returned
/// score has to equal the independently recomputed score of the returned
/// tokens, and greedy must equal single-step argmax following.
#[test]
fn beam_and_greedy_scores_are_self_consistent() {
    let (cfg, store) = test_model();
    let src: Vec<u32> = vec![6, 7, 8, 9, 10];
    let memory = encode_source(&store, &cfg, &src, Dialect::A).unwrap();

    for width in [1usize, 2, 4] {
        let dcfg = DecodeConfig {
            beam_size: width,
            max_len: 10,
            min_len: 0,
            length_penalty_alpha: 0.4,
        };
        let mut scorer = ModelScorer::new(&store, &cfg, &memory, Dialect::B).unwrap();
        let out = beam(&mut scorer, &dcfg).unwrap();
        assert!(out.tokens.len() <= 10);
        // Recompute the claimed score from raw logits.
        let mut check = ModelScorer::new(&store, &cfg, &memory, Dialect::B).unwrap();
        let mut score = 0.0;
        for t in 0..out.tokens.len() {
            let lp = own_log_softmax(&check.next_logits(&out.tokens[..t]).unwrap());
            score += lp[out.tokens[t] as usize];
        }
        if out.finished {
            score += own_log_softmax(&check.next_logits(&out.tokens).unwrap())[EOS_ID as usize];
        }
        assert!(
            (out.score - score).abs() < 1e-9,
            "width {width}: reported {} vs recomputed {score}",
            out.score
        );
        let penalty = ((5.0 + out.tokens.len() as f64) / 6.0).powf(0.4);
        assert!((out.normalized - out.score / penalty).abs() < 1e-12);
    }

    // Greedy: each emitted token must be the logit argmax over emittable ids.
    let mut scorer = ModelScorer::new(&store, &cfg, &memory, Dialect::B).unwrap();
    let dcfg = DecodeConfig::greedy(10);
    let g = greedy(&mut scorer, &dcfg).unwrap();
    let mut check = ModelScorer::new(&store, &cfg, &memory, Dialect::B).unwrap();
    for t in 0..g.len() {
        let logits = check.next_logits(&g[..t]).unwrap();
        let argmax = logits
            .iter()
            .enumerate()
            .filter(|&(id, _)| id != PAD_ID as usize && id != BOS_ID as usize)
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
            .unwrap()
            .0;
        assert_eq!(g[t] as usize, argmax, "greedy step {t}");
    }
}

#[test]
fn translate_ids_is_deterministic_and_respects_max_len() {
    let (cfg, store) = test_model();
    let src: Vec<u32> = vec![5, 6, 7, 8];
    let dcfg = DecodeConfig::greedy(cfg.max_len);
    let a = translate_ids(&store, &cfg, &src, Dialect::A, &dcfg).unwrap();
    let b = translate_ids(&store, &cfg, &src, Dialect::A, &dcfg).unwrap();
    assert_eq!(a, b);
    assert!(a.len() <= cfg.max_len);
}
