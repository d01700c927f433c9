//! Spearman rank correlation between token frequency tables, the working
//! measure of how far two dialects' surface statistics have drifted apart.
//! High over the full shared vocabulary plus low over the most frequent
//! tokens is the signature of closely related but diverged dialects.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::{CorpusError, RawCorpus};

/// Token -> count. BTreeMap so iteration order (and thus tie handling and
/// permutation draws) is identical across runs.
pub type FreqTable = BTreeMap<String, u64>;

pub fn freq_table(raw: &RawCorpus) -> FreqTable {
    let mut table = FreqTable::new();
    for sentence in raw {
        for tok in sentence {
            *table.entry(tok.clone()).or_insert(0) += 1;
        }
    }
    table
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SpearmanResult {
    pub coefficient: f64,
    /// Two-sided permutation p-value; None when `n_permutations` was 0.
    pub p_value: Option<f64>,
    /// Number of token pairs actually correlated.
    pub n_pairs: usize,
}

/// Ranks with ties averaged; rank 1 is the smallest value.
fn average_ranks(xs: &[u64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by_key(|&i| xs[i]);
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx <= 0.0 || vy <= 0.0 {
        return None;
    }
    Some(cov / (vx.sqrt() * vy.sqrt()))
}

/// Spearman correlation of token frequencies between two tables.
///
/// With `top_k = Some(k)`: take table A's k most frequent tokens (ties by
/// codepoint) and keep those that also occur in B. With `None`: all tokens
/// present in both tables. Needs at least 3 surviving pairs. Significance is
/// a two-sided permutation test shuffling B's ranks.
pub fn spearman(
    freq_a: &FreqTable,
    freq_b: &FreqTable,
    top_k: Option<usize>,
    n_permutations: usize,
    seed: u64,
) -> Result<SpearmanResult, CorpusError> {
    let selected: Vec<&str> = match top_k {
        Some(k) => {
            let mut by_freq: Vec<(&str, u64)> =
                freq_a.iter().map(|(t, &f)| (t.as_str(), f)).collect();
            by_freq.sort_by(|(ta, fa), (tb, fb)| fb.cmp(fa).then_with(|| ta.cmp(tb)));
            by_freq
                .into_iter()
                .take(k)
                .map(|(t, _)| t)
                .filter(|t| freq_b.contains_key(*t))
                .collect()
        }
        None => freq_a
            .keys()
            .map(String::as_str)
            .filter(|t| freq_b.contains_key(*t))
            .collect(),
    };
    if selected.len() < 3 {
        return Err(CorpusError::InsufficientOverlap {
            needed: 3,
            found: selected.len(),
        });
    }
    let fa: Vec<u64> = selected.iter().map(|t| freq_a[*t]).collect();
    let fb: Vec<u64> = selected.iter().map(|t| freq_b[*t]).collect();
    let ra = average_ranks(&fa);
    let rb = average_ranks(&fb);
    let coefficient = match (pearson(&ra, &rb), all_equal(&fa), all_equal(&fb)) {
        (Some(c), _, _) => c,
        (None, true, _) => return Err(CorpusError::ConstantRanks { side: "first" }),
        (None, _, _) => return Err(CorpusError::ConstantRanks { side: "second" }),
    };

    let p_value = if n_permutations == 0 {
        None
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shuffled = rb.clone();
        let mut at_least = 0usize;
        for _ in 0..n_permutations {
            shuffled.shuffle(&mut rng);
            let r = pearson(&ra, &shuffled).unwrap_or(0.0);
            if r.abs() >= coefficient.abs() - 1e-12 {
                at_least += 1;
            }
        }
        Some((at_least + 1) as f64 / (n_permutations + 1) as f64)
    };

    Ok(SpearmanResult {
        coefficient,
        p_value,
        n_pairs: selected.len(),
    })
}

fn all_equal(xs: &[u64]) -> bool {
    xs.windows(2).all(|w| w[0] == w[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(pairs: &[(&str, u64)]) -> FreqTable {
        pairs.iter().map(|(t, f)| ((*t).to_string(), *f)).collect()
    }

    #[test]
    fn identical_tables_give_one() {
        let t = table(&[("a", 10), ("b", 5), ("c", 2), ("d", 1)]);
        let r = spearman(&t, &t, None, 200, 7).unwrap();
        assert!((r.coefficient - 1.0).abs() < 1e-12);
        assert_eq!(r.n_pairs, 4);
        assert!(r.p_value.unwrap() < 0.2);
    }

    #[test]
    fn reversed_order_gives_minus_one() {
        let a = table(&[("a", 10), ("b", 5), ("c", 2), ("d", 1)]);
        let b = table(&[("a", 1), ("b", 2), ("c", 5), ("d", 10)]);
        let r = spearman(&a, &b, None, 0, 0).unwrap();
        assert!((r.coefficient + 1.0).abs() < 1e-12);
        assert!(r.p_value.is_none());
    }

    #[test]
    fn textbook_value_with_distinct_ranks() {
        // ranks A: 1..5; ranks B: 2,1,4,3,5 -> d^2 sum = 4
        // rho = 1 - 6*4 / (5*24) = 0.8
        let a = table(&[("v", 1), ("w", 2), ("x", 3), ("y", 4), ("z", 5)]);
        let b = table(&[("v", 20), ("w", 10), ("x", 40), ("y", 30), ("z", 50)]);
        let r = spearman(&a, &b, None, 0, 0).unwrap();
        assert!((r.coefficient - 0.8).abs() < 1e-12);
    }

    #[test]
    fn tied_freqs_use_average_ranks() {
        // A: a=3,b=2,c=2,d=1 -> ranks 4, 2.5, 2.5, 1
        // B: a=9,b=8,c=7,d=6 -> ranks 4, 3, 2, 1
        // cov = 4.5, var_a = 4.5, var_b = 5
        let a = table(&[("a", 3), ("b", 2), ("c", 2), ("d", 1)]);
        let b = table(&[("a", 9), ("b", 8), ("c", 7), ("d", 6)]);
        let r = spearman(&a, &b, None, 0, 0).unwrap();
        let expect = 4.5 / (4.5f64.sqrt() * 5.0f64.sqrt());
        assert!((r.coefficient - expect).abs() < 1e-12, "{}", r.coefficient);
    }

    #[test]
    fn top_k_restricts_to_first_tables_head() {
        // Top-2 of A = a,b. Within those, B reverses the order.
        let a = table(&[("a", 100), ("b", 50), ("c", 3), ("d", 2), ("e", 1)]);
        let b = table(&[("a", 50), ("b", 100), ("c", 3), ("d", 2), ("e", 1)]);
        let full = spearman(&a, &b, None, 0, 0).unwrap();
        let top3 = spearman(&a, &b, Some(3), 0, 0).unwrap();
        assert_eq!(top3.n_pairs, 3);
        assert!(top3.coefficient < full.coefficient);
    }

    #[test]
    fn top_k_drops_tokens_missing_from_b() {
        let a = table(&[("a", 9), ("b", 8), ("c", 7), ("d", 6)]);
        let b = table(&[("a", 1), ("c", 2), ("d", 3)]);
        let r = spearman(&a, &b, Some(4), 0, 0).unwrap();
        assert_eq!(r.n_pairs, 3);
    }

    #[test]
    fn too_little_overlap_errors() {
        let a = table(&[("a", 2), ("b", 1)]);
        let b = table(&[("a", 1), ("b", 2)]);
        let err = spearman(&a, &b, None, 0, 0).unwrap_err();
        assert!(matches!(
            err,
            CorpusError::InsufficientOverlap { needed: 3, found: 2 }
        ));
    }

    #[test]
    fn constant_side_errors() {
        let a = table(&[("a", 5), ("b", 5), ("c", 5)]);
        let b = table(&[("a", 1), ("b", 2), ("c", 3)]);
        let err = spearman(&a, &b, None, 0, 0).unwrap_err();
        assert!(matches!(err, CorpusError::ConstantRanks { side: "first" }));
    }

    #[test]
    fn permutation_p_value_is_deterministic() {
        let a = table(&[("a", 5), ("b", 4), ("c", 3), ("d", 2), ("e", 1)]);
        let b = table(&[("a", 50), ("b", 45), ("c", 20), ("d", 9), ("e", 2)]);
        let r1 = spearman(&a, &b, None, 1000, 123).unwrap();
        let r2 = spearman(&a, &b, None, 1000, 123).unwrap();
        assert_eq!(r1.p_value, r2.p_value);
    }
}
