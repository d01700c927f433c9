//! Shared across integration test targets: independent oracles written from
//! the metric definitions (no code shared with src/), plus CLI helpers.
#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

// ── oracles ──

/// Corpus BLEU-4 from the definition, by exhaustive window scanning. Clipped
/// counts come from enumerating each distinct n-gram at its first occurrence
/// and counting matches with linear scans, deliberately avoiding the hashed
/// counting the library uses.
pub fn naive_bleu(hyps: &[Vec<u32>], refs: &[Vec<u32>]) -> f64 {
    assert_eq!(hyps.len(), refs.len());
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    let mut matched = [0u64; 4];
    let mut total = [0u64; 4];
    for (h, r) in hyps.iter().zip(refs) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4usize {
            if h.len() < n {
                continue;
            }
            total[n - 1] += (h.len() - n + 1) as u64;
            for i in 0..=h.len() - n {
                let g = &h[i..i + n];
                if i > 0 && h[..i + n - 1].windows(n).any(|w| w == g) {
                    continue; // not the first occurrence of this n-gram
                }
                let in_hyp = h.windows(n).filter(|w| *w == g).count() as u64;
                let in_ref = if r.len() >= n {
                    r.windows(n).filter(|w| *w == g).count() as u64
                } else {
                    0
                };
                matched[n - 1] += in_hyp.min(in_ref);
            }
        }
    }
    let mut precisions = [0.0f64; 4];
    for k in 0..4 {
        if total[k] > 0 {
            precisions[k] = matched[k] as f64 / total[k] as f64;
        }
    }
    let bp = if hyp_len == 0 {
        0.0
    } else if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    if precisions.iter().all(|&p| p > 0.0) {
        100.0 * bp * (precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0).exp()
    } else {
        0.0
    }
}

/// Spearman coefficient for tie-free data via 1 - 6*sum(d^2)/(n(n^2-1)).
/// Only valid when each slice has all-distinct values.
pub fn closed_form_spearman(xs: &[u64], ys: &[u64]) -> f64 {
    let n = xs.len();
    assert_eq!(n, ys.len());
    let rank = |v: &[u64]| -> Vec<f64> {
        v.iter()
            .map(|&a| v.iter().filter(|&&b| b < a).count() as f64 + 1.0)
            .collect()
    };
    let (rx, ry) = (rank(xs), rank(ys));
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
    let nf = n as f64;
    1.0 - 6.0 * d2 / (nf * (nf * nf - 1.0))
}

// ── CLI helpers ──

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dialect-nmt")
}

pub fn run_cli<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(bin()).args(args).output().expect("spawn dialect-nmt")
}

pub fn stdout_str(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr_str(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn assert_exit(out: &Output, code: i32, context: &str) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "{context}\nstdout:\n{}\nstderr:\n{}",
        stdout_str(out),
        stderr_str(out)
    );
}

/// Config small enough that gen-synth and a few train steps finish in
/// seconds, while still exercising every code path (pivot split, sharing,
/// coordination, noise, back-translation, eval).
pub const MICRO_CONFIG: &str = r#"
[model]
n_layers = 1
model_dim = 16
pivot_dim = 8
n_heads = 2
ffn_dim = 32
n_shared_enc = 1
n_shared_dec = 1
max_len = 32
dropout = 0.1

[train]
total_steps = 4
lambda_decay_steps = 4
batch_size = 2
warmup_steps = 2
eval_every = 2
eval_max_sentences = 8
seed = 5

[synth]
base_vocab_size = 60
n_train_per_dialect = 120
n_dev = 24
n_test = 24
substitution_top_window = 20
unique_token_count = 1
seed = 11
target_full_spearman_min = 0.3
target_top_k_spearman_max = 0.9
spearman_top_k = 10
"#;

pub fn write_micro_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("micro.toml");
    std::fs::write(&path, MICRO_CONFIG).expect("write micro config");
    path
}

pub fn read_to_string(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}
