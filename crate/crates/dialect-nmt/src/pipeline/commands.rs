//! The six pipeline commands as plain functions over typed argument structs.
//! The binary is a thin argument-parsing wrapper; tests and examples call
//! these directly. Outputs land only under each command's out_dir.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bleu::{bleu, BleuReport};
use crate::corpus::{
    build_joint_vocab, detokenize, filter_corpus, freq_table, pair_stats, read_corpus_file,
    spearman, tokenize, write_corpus_file, Corpus, Dialect, FilterReport, PairStats, RawCorpus,
    Sentence, SpearmanResult, TokenizeMode, Vocab,
};
use crate::decode::{translate_ids, DecodeConfig};
use crate::model::{load_bag, load_model, save_bag, save_model, ModelConfig, ParameterStore};
use crate::pipeline::config::RunConfig;
use crate::pipeline::lock::OutDirLock;
use crate::pipeline::manifest::RunManifest;
use crate::pipeline::PipelineError;
use crate::synth::{generate_synthetic_pair, RuleTable, SynthStats};
use crate::training::{AdamState, TrainData, TrainError, TrainOutcome, Trainer};
use crate::TokenId;

pub const THREADS_ENV: &str = "DIALECT_NMT_THREADS";

pub const VOCAB_FILE: &str = "vocab.tsv";
pub const STATS_FILE: &str = "stats.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TRANSLATIONS_FILE: &str = "translations.txt";
pub const BLEU_FILE: &str = "bleu.json";
pub const BEST_CKPT: &str = "best.ckpt";
pub const LAST_CKPT: &str = "last.ckpt";
pub const OPTIMIZER_CKPT: &str = "optimizer.ckpt";
pub const RULES_A2B_FILE: &str = "rules_a2b.tsv";
pub const RULES_B2A_FILE: &str = "rules_b2a.tsv";

/// Canonical data-dir file names, shared by gen-synth output, prep output,
/// and train input.
pub const DATA_FILES: [&str; 6] = [
    "train_a.txt",
    "train_b.txt",
    "dev_a.txt",
    "dev_b.txt",
    "test_a.txt",
    "test_b.txt",
];

// ── shared plumbing ──

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    A2b,
    B2a,
}

impl Direction {
    pub fn src_dialect(self) -> Dialect {
        match self {
            Direction::A2b => Dialect::A,
            Direction::B2a => Dialect::B,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Direction::A2b => "a2b",
            Direction::B2a => "b2a",
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "a2b" => Ok(Direction::A2b),
            "b2a" => Ok(Direction::B2a),
            other => Err(format!("unknown direction {other:?} (a2b|b2a)")),
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

fn io_err(path: &Path, source: std::io::Error) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn require_file(path: &Path) -> Result<(), PipelineError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(PipelineError::Usage(format!(
            "expected file {} does not exist",
            path.display()
        )))
    }
}

fn read_tokenized(path: &Path, mode: TokenizeMode) -> Result<RawCorpus, PipelineError> {
    require_file(path)?;
    let lines = read_corpus_file(path)?;
    Ok(lines.iter().map(|l| tokenize(l, mode)).collect())
}

fn write_tokenized(path: &Path, raw: &RawCorpus, mode: TokenizeMode) -> Result<(), PipelineError> {
    let lines: Vec<String> = raw.iter().map(|s| detokenize(s, mode)).collect();
    write_corpus_file(path, &lines)?;
    Ok(())
}

fn create_out_dir(dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn parse_thread_count(raw: Option<&str>) -> Result<usize, PipelineError> {
    match raw {
        None => Ok(1),
        Some(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(PipelineError::Usage(format!(
                "{THREADS_ENV} must be a positive integer, got {s:?}"
            ))),
        },
    }
}

fn thread_count() -> Result<usize, PipelineError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => parse_thread_count(Some(&v)),
        Err(std::env::VarError::NotPresent) => Ok(1),
        Err(e) => Err(PipelineError::Usage(format!("{THREADS_ENV}: {e}"))),
    }
}

/// Spearman wrapped so undefined cases (too little overlap, constant ranks)
/// degrade to None instead of failing the whole stats run.
fn spearman_or_none(
    fa: &crate::corpus::FreqTable,
    fb: &crate::corpus::FreqTable,
    top_k: Option<usize>,
) -> Option<SpearmanResult> {
    const PERMUTATIONS: usize = 1000;
    const SEED: u64 = 0x57A7;
    spearman(fa, fb, top_k, PERMUTATIONS, SEED).ok()
}

/// Pair-level statistics document written by prep and stats.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StatsDoc {
    pub pair: PairStats,
    /// Rank correlation over the shared vocabulary; None when undefined.
    pub spearman_full: Option<SpearmanResult>,
    /// Rank correlation over side A's top_k tokens; None when undefined.
    pub spearman_top_k: Option<SpearmanResult>,
}

fn stats_doc(raw_a: &RawCorpus, raw_b: &RawCorpus, top_k: usize) -> StatsDoc {
    let fa = freq_table(raw_a);
    let fb = freq_table(raw_b);
    StatsDoc {
        pair: pair_stats(raw_a, raw_b, top_k),
        spearman_full: spearman_or_none(&fa, &fb, None),
        spearman_top_k: spearman_or_none(&fa, &fb, Some(top_k)),
    }
}

fn write_stats(dir: &Path, doc: &StatsDoc) -> Result<(), PipelineError> {
    let path = dir.join(STATS_FILE);
    let text = serde_json::to_string_pretty(doc)?;
    std::fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
}

// ── gen-synth ──

#[derive(Clone, Debug, Serialize)]
pub struct GenSynthArgs {
    pub config: PathBuf,
    pub out_dir: PathBuf,
    /// Overrides [synth].seed when set.
    pub seed: Option<u64>,
}

/// Generates the dialect pair and writes the six corpus files, both rule
/// tables, and a manifest recording the achieved statistics.
pub fn cmd_gen_synth(args: &GenSynthArgs) -> Result<SynthStats, PipelineError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.synth.seed = seed;
    }
    cfg.validate()?;
    create_out_dir(&args.out_dir)?;
    let mut manifest = RunManifest::start("gen-synth", Some(cfg.synth.seed), &cfg.synth)?;
    manifest.input(&args.config);

    let out = generate_synthetic_pair(&cfg.synth)?;
    let mode = TokenizeMode::Char;
    let corpora = [
        &out.train_a, &out.train_b, &out.dev_a, &out.dev_b, &out.test_a, &out.test_b,
    ];
    for (name, raw) in DATA_FILES.iter().zip(corpora) {
        let path = args.out_dir.join(name);
        write_tokenized(&path, raw, mode)?;
        manifest.output(&path);
    }
    let a2b = args.out_dir.join(RULES_A2B_FILE);
    out.rules.save(&a2b)?;
    manifest.output(&a2b);
    let b2a = args.out_dir.join(RULES_B2A_FILE);
    out.rules.invert().save(&b2a)?;
    manifest.output(&b2a);

    manifest.set_extra("stats", serde_json::to_value(&out.stats)?);
    manifest.write(&args.out_dir)?;
    Ok(out.stats)
}

// ── prep ──

#[derive(Clone, Debug, Serialize)]
pub struct PrepArgs {
    pub train_a: PathBuf,
    pub train_b: PathBuf,
    pub dev_a: Option<PathBuf>,
    pub dev_b: Option<PathBuf>,
    pub test_a: Option<PathBuf>,
    pub test_b: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub mode: TokenizeMode,
    pub min_freq: u64,
    pub min_len: usize,
    pub max_len: usize,
    pub top_k: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct PrepOutcome {
    pub vocab_size: usize,
    pub stats: StatsDoc,
    pub reports: BTreeMap<String, FilterReport>,
}

fn filter_raw(
    raw: &RawCorpus,
    vocab: &Vocab,
    min_len: usize,
    max_len: usize,
) -> (RawCorpus, FilterReport) {
    // Reuses the encoding filter, then maps survivors back to tokens so prep
    // emits text; Dialect::A is a placeholder that never leaves this scope.
    let (corpus, report) = filter_corpus(raw, vocab, Dialect::A, min_len, max_len);
    let kept = corpus
        .sentences
        .iter()
        .map(|s| {
            vocab
                .decode_sentence(&s.ids)
                .expect("ids came from this vocab")
        })
        .collect();
    (kept, report)
}

/// Keeps a dev/test pair only when both sides pass, so files stay parallel.
fn filter_raw_parallel(
    raw_a: &RawCorpus,
    raw_b: &RawCorpus,
    vocab: &Vocab,
    min_len: usize,
    max_len: usize,
) -> Result<(RawCorpus, RawCorpus, usize), PipelineError> {
    if raw_a.len() != raw_b.len() {
        return Err(PipelineError::Usage(format!(
            "parallel files must have equal line counts, got {} vs {}",
            raw_a.len(),
            raw_b.len()
        )));
    }
    let ok = |tokens: &Vec<String>| {
        tokens.len() >= min_len
            && tokens.len() <= max_len
            && vocab.encode_strict(tokens).is_some()
    };
    let mut kept_a = RawCorpus::new();
    let mut kept_b = RawCorpus::new();
    let mut dropped = 0usize;
    for (a, b) in raw_a.iter().zip(raw_b) {
        if ok(a) && ok(b) {
            kept_a.push(a.clone());
            kept_b.push(b.clone());
        } else {
            dropped += 1;
        }
    }
    Ok((kept_a, kept_b, dropped))
}

/// Tokenize, build the joint vocabulary from the two training sides, filter
/// everything, and write canonical data files plus vocab.tsv and stats.json.
pub fn cmd_prep(args: &PrepArgs) -> Result<PrepOutcome, PipelineError> {
    match (&args.dev_a, &args.dev_b) {
        (Some(_), None) | (None, Some(_)) => {
            return Err(PipelineError::Usage(
                "--dev-a and --dev-b must be given together".into(),
            ))
        }
        _ => {}
    }
    match (&args.test_a, &args.test_b) {
        (Some(_), None) | (None, Some(_)) => {
            return Err(PipelineError::Usage(
                "--test-a and --test-b must be given together".into(),
            ))
        }
        _ => {}
    }
    if args.min_len == 0 || args.max_len < args.min_len || args.min_freq == 0 || args.top_k < 3 {
        return Err(PipelineError::Usage(
            "need min_len >= 1, max_len >= min_len, min_freq >= 1, top_k >= 3".into(),
        ));
    }
    create_out_dir(&args.out_dir)?;
    let mut manifest = RunManifest::start("prep", None, args)?;

    let raw_train_a = read_tokenized(&args.train_a, args.mode)?;
    let raw_train_b = read_tokenized(&args.train_b, args.mode)?;
    manifest.input(&args.train_a);
    manifest.input(&args.train_b);

    let vocab = build_joint_vocab(&[&raw_train_a, &raw_train_b], args.min_freq);
    let vocab_path = args.out_dir.join(VOCAB_FILE);
    vocab.save(&vocab_path)?;
    manifest.output(&vocab_path);

    let mut reports = BTreeMap::new();
    let (kept_a, report_a) = filter_raw(&raw_train_a, &vocab, args.min_len, args.max_len);
    let (kept_b, report_b) = filter_raw(&raw_train_b, &vocab, args.min_len, args.max_len);
    reports.insert("train_a".to_string(), report_a);
    reports.insert("train_b".to_string(), report_b);
    for (name, raw) in [("train_a.txt", &kept_a), ("train_b.txt", &kept_b)] {
        let path = args.out_dir.join(name);
        write_tokenized(&path, raw, args.mode)?;
        manifest.output(&path);
    }

    let write_pair = |pa: &PathBuf,
                          pb: &PathBuf,
                          name_a: &str,
                          name_b: &str,
                          label: &str,
                          manifest: &mut RunManifest,
                          reports: &mut BTreeMap<String, FilterReport>|
     -> Result<(), PipelineError> {
        let raw_a = read_tokenized(pa, args.mode)?;
        let raw_b = read_tokenized(pb, args.mode)?;
        manifest.input(pa);
        manifest.input(pb);
        let (kept_a, kept_b, dropped) =
            filter_raw_parallel(&raw_a, &raw_b, &vocab, args.min_len, args.max_len)?;
        reports.insert(
            label.to_string(),
            FilterReport {
                kept: kept_a.len(),
                dropped_short: 0,
                dropped_long: 0,
                dropped_oov: dropped,
            },
        );
        for (name, raw) in [(name_a, &kept_a), (name_b, &kept_b)] {
            let path = args.out_dir.join(name);
            write_tokenized(&path, raw, args.mode)?;
            manifest.output(&path);
        }
        Ok(())
    };
    if let (Some(pa), Some(pb)) = (&args.dev_a, &args.dev_b) {
        write_pair(pa, pb, "dev_a.txt", "dev_b.txt", "dev", &mut manifest, &mut reports)?;
    }
    if let (Some(pa), Some(pb)) = (&args.test_a, &args.test_b) {
        write_pair(pa, pb, "test_a.txt", "test_b.txt", "test", &mut manifest, &mut reports)?;
    }

    let stats = stats_doc(&kept_a, &kept_b, args.top_k);
    write_stats(&args.out_dir, &stats)?;
    manifest.output(&args.out_dir.join(STATS_FILE));
    manifest.set_extra("vocab_size", json!(vocab.len()));
    manifest.set_extra("filter_reports", serde_json::to_value(&reports)?);
    manifest.write(&args.out_dir)?;
    Ok(PrepOutcome {
        vocab_size: vocab.len(),
        stats,
        reports,
    })
}

// ── stats ──

#[derive(Clone, Debug, Serialize)]
pub struct StatsArgs {
    pub corpus_a: PathBuf,
    pub corpus_b: PathBuf,
    pub out_dir: PathBuf,
    pub mode: TokenizeMode,
    pub top_k: usize,
}

/// Side-by-side statistics of two corpora exactly as given (no filtering).
pub fn cmd_stats(args: &StatsArgs) -> Result<StatsDoc, PipelineError> {
    if args.top_k < 3 {
        return Err(PipelineError::Usage("--top-k must be at least 3".into()));
    }
    create_out_dir(&args.out_dir)?;
    let mut manifest = RunManifest::start("stats", None, args)?;
    let raw_a = read_tokenized(&args.corpus_a, args.mode)?;
    let raw_b = read_tokenized(&args.corpus_b, args.mode)?;
    manifest.input(&args.corpus_a);
    manifest.input(&args.corpus_b);
    let doc = stats_doc(&raw_a, &raw_b, args.top_k);
    write_stats(&args.out_dir, &doc)?;
    manifest.output(&args.out_dir.join(STATS_FILE));
    manifest.write(&args.out_dir)?;
    Ok(doc)
}

// ── train ──

#[derive(Clone, Debug, Serialize)]
pub struct TrainArgs {
    pub config: PathBuf,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Sets pivot_dim = 0: no embedding columns shared between dialects.
    pub no_pivot_private: bool,
    /// Routes every decoder layer to the final encoder state.
    pub no_layer_coordination: bool,
    pub resume: bool,
    /// Overrides [train].seed when set.
    pub seed: Option<u64>,
}

/// Loop counters persisted in the optimizer checkpoint's extra field.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct TrainState {
    step: u64,
    adam_steps: u64,
    best_dev_bleu: Option<f64>,
    evals_since_best: u32,
}

fn load_data_corpus(
    dir: &Path,
    name: &str,
    mode: TokenizeMode,
    required: bool,
) -> Result<Option<RawCorpus>, PipelineError> {
    let path = dir.join(name);
    if !path.is_file() {
        if required {
            return Err(PipelineError::Usage(format!(
                "data dir is missing {}",
                path.display()
            )));
        }
        return Ok(None);
    }
    Ok(Some(read_tokenized(&path, mode)?))
}

/// Trains from canonical data files, writing metrics.jsonl, best/last model
/// checkpoints, the optimizer checkpoint, a vocab snapshot, and a manifest.
pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome, PipelineError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if args.no_pivot_private {
        cfg.model.pivot_dim = 0;
    }
    if args.no_layer_coordination {
        cfg.model.layer_coordination = false;
    }
    cfg.validate()?;

    create_out_dir(&args.out_dir)?;
    let _lock = OutDirLock::acquire(&args.out_dir)?;
    let metrics_path = args.out_dir.join(METRICS_FILE);
    if !args.resume && metrics_path.exists() {
        return Err(PipelineError::Usage(format!(
            "{} already contains a run; pass --resume or use a fresh out_dir",
            args.out_dir.display()
        )));
    }

    // Data and vocabulary.
    let mode = cfg.prep.mode;
    let raw_train_a = load_data_corpus(&args.data_dir, "train_a.txt", mode, true)?.unwrap();
    let raw_train_b = load_data_corpus(&args.data_dir, "train_b.txt", mode, true)?.unwrap();
    let raw_dev_a = load_data_corpus(&args.data_dir, "dev_a.txt", mode, false)?;
    let raw_dev_b = load_data_corpus(&args.data_dir, "dev_b.txt", mode, false)?;
    if raw_dev_a.is_some() != raw_dev_b.is_some() {
        return Err(PipelineError::Usage(
            "dev_a.txt and dev_b.txt must both exist or both be absent".into(),
        ));
    }
    let vocab_path = args.data_dir.join(VOCAB_FILE);
    let vocab = if vocab_path.is_file() {
        Vocab::load(&vocab_path)?
    } else {
        build_joint_vocab(&[&raw_train_a, &raw_train_b], cfg.prep.min_freq)
    };
    cfg.model.vocab_size = vocab.len();
    cfg.model.validate().map_err(crate::model::ModelError::from)?;

    let max_len = cfg.prep.max_len.min(cfg.model.max_len);
    let (train_a, report_a) =
        filter_corpus(&raw_train_a, &vocab, Dialect::A, cfg.prep.min_len, max_len);
    let (train_b, report_b) =
        filter_corpus(&raw_train_b, &vocab, Dialect::B, cfg.prep.min_len, max_len);
    let (dev_a, dev_b, dev_dropped) = match (&raw_dev_a, &raw_dev_b) {
        (Some(ra), Some(rb)) => {
            let (ka, kb, dropped) =
                filter_raw_parallel(ra, rb, &vocab, cfg.prep.min_len, max_len)?;
            let enc = |raw: &RawCorpus, dialect| Corpus {
                sentences: raw
                    .iter()
                    .map(|t| {
                        Sentence::new(
                            vocab.encode_strict(t).expect("survived the joint filter"),
                            dialect,
                        )
                    })
                    .collect(),
                dialect,
            };
            (enc(&ka, Dialect::A), enc(&kb, Dialect::B), dropped)
        }
        _ => (
            Corpus {
                sentences: Vec::new(),
                dialect: Dialect::A,
            },
            Corpus {
                sentences: Vec::new(),
                dialect: Dialect::B,
            },
            0,
        ),
    };
    let data = TrainData {
        train_a,
        train_b,
        dev_a,
        dev_b,
    };

    let mut manifest = RunManifest::start("train", Some(cfg.train.seed), &cfg)?;
    manifest.input(&args.config);
    for name in ["train_a.txt", "train_b.txt", "dev_a.txt", "dev_b.txt"] {
        let p = args.data_dir.join(name);
        if p.is_file() {
            manifest.input(&p);
        }
    }
    if vocab_path.is_file() {
        manifest.input(&vocab_path);
    }
    manifest.set_extra("args", serde_json::to_value(args)?);
    manifest.set_extra("vocab_size", json!(vocab.len()));
    manifest.set_extra(
        "filter_reports",
        json!({"train_a": report_a, "train_b": report_b, "dev_pairs_dropped": dev_dropped}),
    );

    let vocab_out = args.out_dir.join(VOCAB_FILE);
    vocab.save(&vocab_out)?;
    manifest.output(&vocab_out);

    // Trainer, fresh or resumed.
    let best_path = args.out_dir.join(BEST_CKPT);
    let last_path = args.out_dir.join(LAST_CKPT);
    let opt_path = args.out_dir.join(OPTIMIZER_CKPT);
    let mut trainer: Trainer<f32> = if args.resume {
        for p in [&last_path, &opt_path] {
            if !p.is_file() {
                return Err(PipelineError::Usage(format!(
                    "--resume needs {}, which does not exist",
                    p.display()
                )));
            }
        }
        let (ck_cfg, store, _extra) = load_model::<f32>(&last_path)?;
        if ck_cfg != cfg.model {
            return Err(PipelineError::Usage(format!(
                "checkpoint model config differs from {} (ablation flags or model \
                 section changed between runs)",
                args.config.display()
            )));
        }
        let (kind, _, tensors, extra) = load_bag::<f32>(&opt_path)?;
        if kind != "optimizer" {
            return Err(PipelineError::Usage(format!(
                "{} is a {kind:?} checkpoint, expected optimizer",
                opt_path.display()
            )));
        }
        let state: TrainState = serde_json::from_value(extra)?;
        let opt = AdamState::from_tensors(&store, &cfg.train, &tensors, state.adam_steps)?;
        Trainer::with_state(
            cfg.model.clone(),
            cfg.train.clone(),
            data,
            store,
            opt,
            state.step,
            state.best_dev_bleu,
            state.evals_since_best,
        )?
    } else {
        Trainer::new(cfg.model.clone(), cfg.train.clone(), data)?
    };

    let metrics_file = if args.resume {
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&metrics_path)
    } else {
        std::fs::File::create(&metrics_path)
    }
    .map_err(|e| io_err(&metrics_path, e))?;
    let mut metrics = std::io::BufWriter::new(metrics_file);

    let outcome = trainer.run_with(&mut metrics, |tr, rec, new_best| {
        if new_best {
            let mean = match (rec.dev_bleu_ab, rec.dev_bleu_ba) {
                (Some(ab), Some(ba)) => (ab + ba) / 2.0,
                _ => f64::NAN,
            };
            save_model(
                &best_path,
                tr.model_config(),
                tr.best_model(),
                json!({"step": rec.step, "dev_bleu_mean": mean}),
            )
            .map_err(TrainError::from)?;
        }
        Ok(())
    })?;
    drop(metrics);

    save_model(
        &last_path,
        trainer.model_config(),
        trainer.store(),
        json!({"step": trainer.current_step()}),
    )?;
    if !best_path.is_file() {
        // No evaluation ever ran; downstream still gets a best.ckpt.
        save_model(
            &best_path,
            trainer.model_config(),
            trainer.store(),
            json!({"step": trainer.current_step(), "dev_bleu_mean": null}),
        )?;
    }
    let state = TrainState {
        step: trainer.current_step(),
        adam_steps: trainer.optimizer().steps_taken(),
        best_dev_bleu: trainer.best_dev_bleu(),
        evals_since_best: trainer.evals_since_best(),
    };
    let moments = trainer.optimizer().to_tensors();
    let items: Vec<(&str, &crate::autodiff::Tensor<f32>)> =
        moments.iter().map(|(n, t)| (n.as_str(), t)).collect();
    save_bag(&opt_path, "optimizer", None, &items, serde_json::to_value(&state)?)?;

    for p in [&metrics_path, &best_path, &last_path, &opt_path] {
        manifest.output(p);
    }
    manifest.set_extra("outcome", serde_json::to_value(&outcome)?);
    manifest.write(&args.out_dir)?;
    Ok(outcome)
}

// ── translate / eval ──

#[derive(Clone, Debug, Serialize)]
pub struct TranslateArgs {
    /// Exactly one of checkpoint/baseline must be set.
    pub checkpoint: Option<PathBuf>,
    /// TSV rule table applied with the flag direction.
    pub baseline: Option<PathBuf>,
    /// Defaults to vocab.tsv next to the checkpoint.
    pub vocab: Option<PathBuf>,
    pub input: PathBuf,
    pub out_dir: PathBuf,
    pub direction: Direction,
    pub beam: usize,
    pub length_penalty_alpha: f64,
    pub mode: TokenizeMode,
}

struct TranslationRun {
    hyps: Vec<Vec<String>>,
    system: serde_json::Value,
    inputs: Vec<PathBuf>,
    n_truncated: usize,
}

fn model_translate_all(
    store: &ParameterStore<f32>,
    model_cfg: &ModelConfig,
    vocab: &Vocab,
    raw: &RawCorpus,
    direction: Direction,
    dcfg: &DecodeConfig,
    n_threads: usize,
) -> Result<(Vec<Vec<String>>, usize), PipelineError> {
    let ids_in: Vec<Vec<TokenId>> = raw.iter().map(|toks| vocab.encode_sentence(toks)).collect();
    let n_truncated = ids_in.iter().filter(|s| s.len() > model_cfg.max_len).count();
    let translate_one = |ids: &[TokenId]| -> Result<Vec<String>, PipelineError> {
        if ids.is_empty() {
            return Ok(Vec::new());
        }
        let capped = &ids[..ids.len().min(model_cfg.max_len)];
        let out = translate_ids(store, model_cfg, capped, direction.src_dialect(), dcfg)?;
        let tokens = out
            .iter()
            .map(|&id| vocab.token(id).map(str::to_string))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(tokens)
    };
    if n_threads <= 1 || ids_in.len() <= 1 {
        let mut hyps = Vec::with_capacity(ids_in.len());
        for ids in &ids_in {
            hyps.push(translate_one(ids)?);
        }
        return Ok((hyps, n_truncated));
    }
    let chunk = ids_in.len().div_ceil(n_threads);
    let results: Vec<Result<Vec<Vec<String>>, PipelineError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = ids_in
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || part.iter().map(|ids| translate_one(ids)).collect())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("no panics")).collect()
    });
    let mut hyps = Vec::with_capacity(ids_in.len());
    for r in results {
        hyps.extend(r?);
    }
    Ok((hyps, n_truncated))
}

fn run_translation(args: &TranslateArgs) -> Result<TranslationRun, PipelineError> {
    let raw = read_tokenized(&args.input, args.mode)?;
    let mut inputs = vec![args.input.clone()];
    match (&args.checkpoint, &args.baseline) {
        (Some(_), Some(_)) | (None, None) => Err(PipelineError::Usage(
            "pass exactly one of --checkpoint or --baseline".into(),
        )),
        (None, Some(rules_path)) => {
            require_file(rules_path)?;
            let table = RuleTable::load(rules_path, args.direction.tag())?;
            inputs.push(rules_path.clone());
            let hyps = raw
                .iter()
                .map(|toks| crate::synth::rule_based_translate(toks, &table))
                .collect();
            Ok(TranslationRun {
                hyps,
                system: json!({"kind": "baseline", "rules": table.len()}),
                inputs,
                n_truncated: 0,
            })
        }
        (Some(ckpt), None) => {
            if args.beam == 0 {
                return Err(PipelineError::Usage("--beam must be at least 1".into()));
            }
            require_file(ckpt)?;
            let (model_cfg, store) = {
                let (c, s, _extra) = load_model::<f32>(ckpt)?;
                (c, s)
            };
            let vocab_path = match &args.vocab {
                Some(p) => p.clone(),
                None => ckpt
                    .parent()
                    .unwrap_or_else(|| Path::new("."))
                    .join(VOCAB_FILE),
            };
            require_file(&vocab_path)?;
            let vocab = Vocab::load(&vocab_path)?;
            if vocab.len() != model_cfg.vocab_size {
                return Err(PipelineError::Usage(format!(
                    "vocabulary {} has {} entries, checkpoint expects {}",
                    vocab_path.display(),
                    vocab.len(),
                    model_cfg.vocab_size
                )));
            }
            inputs.push(ckpt.clone());
            inputs.push(vocab_path.clone());
            let dcfg = DecodeConfig {
                beam_size: args.beam,
                max_len: model_cfg.max_len,
                min_len: 0,
                length_penalty_alpha: args.length_penalty_alpha,
            };
            let n_threads = thread_count()?;
            let (hyps, n_truncated) = model_translate_all(
                &store, &model_cfg, &vocab, &raw, args.direction, &dcfg, n_threads,
            )?;
            Ok(TranslationRun {
                hyps,
                system: json!({
                    "kind": "model",
                    "beam": args.beam,
                    "length_penalty_alpha": args.length_penalty_alpha,
                    "threads": n_threads,
                }),
                inputs,
                n_truncated,
            })
        }
    }
}

fn write_translation(
    args: &TranslateArgs,
    command: &str,
    run: &TranslationRun,
) -> Result<RunManifest, PipelineError> {
    create_out_dir(&args.out_dir)?;
    let mut manifest = RunManifest::start(command, None, args)?;
    for p in &run.inputs {
        manifest.input(p);
    }
    let out_path = args.out_dir.join(TRANSLATIONS_FILE);
    write_tokenized(&out_path, &run.hyps, args.mode)?;
    manifest.output(&out_path);
    manifest.set_extra("system", run.system.clone());
    manifest.set_extra("direction", json!(args.direction.tag()));
    manifest.set_extra("n_sentences", json!(run.hyps.len()));
    manifest.set_extra("n_truncated", json!(run.n_truncated));
    Ok(manifest)
}

/// Translates input line by line (model checkpoint or rule baseline) into
/// out_dir/translations.txt. Returns the number of sentences translated.
pub fn cmd_translate(args: &TranslateArgs) -> Result<usize, PipelineError> {
    let run = run_translation(args)?;
    let manifest = write_translation(args, "translate", &run)?;
    manifest.write(&args.out_dir)?;
    Ok(run.hyps.len())
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalArgs {
    pub translate: TranslateArgs,
    pub reference: PathBuf,
}

/// Translate then score against a reference with corpus BLEU over tokens.
/// Writes translations.txt and bleu.json; returns the report.
pub fn cmd_eval(args: &EvalArgs) -> Result<BleuReport, PipelineError> {
    let run = run_translation(&args.translate)?;
    let refs = read_tokenized(&args.reference, args.translate.mode)?;
    let report = bleu(&run.hyps, &refs)?;
    let mut manifest = write_translation(&args.translate, "eval", &run)?;
    manifest.input(&args.reference);
    let bleu_path = args.translate.out_dir.join(BLEU_FILE);
    let text = serde_json::to_string_pretty(&report)?;
    std::fs::write(&bleu_path, text + "\n").map_err(|e| io_err(&bleu_path, e))?;
    manifest.output(&bleu_path);
    manifest.set_extra("bleu", serde_json::to_value(&report)?);
    manifest.write(&args.translate.out_dir)?;
    Ok(report)
}
