//! Step loop: shared batches feed the reconstruction and round-trip losses,
//! gradients merge into one clipped buffer, Adam applies it. All randomness
//! is derived from (seed, tag, step, ...), so a resumed run replays the exact
//! step sequence of an uninterrupted one.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{GradBuffer, Scalar};
use crate::bleu::bleu;
use crate::corpus::{Corpus, Dialect};
use crate::decode::{translate_ids, DecodeConfig};
use crate::model::{build_model, ModelConfig, ParameterStore};
use crate::training::losses::{backtranslate, denoise_ce, supervised_ce};
use crate::training::schedule::{lambda_com, lambda_div, lr_at};
use crate::training::{AdamState, TrainConfig, TrainError};
use crate::{derive_seed, TokenId};
use crate::model::RunMode;

const TAG_BATCH: u64 = 0x4241;
const TAG_NOISE: u64 = 0x4E4F;
const TAG_DROPOUT: u64 = 0x4452;

/// Monolingual training pools plus a parallel dev set. Dev sentence i in A
/// and B are translations of each other; train sides are unaligned.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub train_a: Corpus,
    pub train_b: Corpus,
    pub dev_a: Corpus,
    pub dev_b: Corpus,
}

impl TrainData {
    pub fn validate(&self, model_cfg: &ModelConfig) -> Result<(), TrainError> {
        let err = |msg: String| Err(TrainError::Data(msg));
        for (name, corpus, want) in [
            ("train_a", &self.train_a, Dialect::A),
            ("train_b", &self.train_b, Dialect::B),
            ("dev_a", &self.dev_a, Dialect::A),
            ("dev_b", &self.dev_b, Dialect::B),
        ] {
            if corpus.dialect != want {
                return err(format!("{name} is tagged {}, expected {want}", corpus.dialect));
            }
            for (i, s) in corpus.sentences.iter().enumerate() {
                if s.dialect != want {
                    return err(format!("{name}[{i}] is tagged {}, expected {want}", s.dialect));
                }
                if s.is_empty() {
                    return err(format!("{name}[{i}] is empty"));
                }
                if s.len() > model_cfg.max_len {
                    return err(format!(
                        "{name}[{i}] has {} tokens, model max_len is {}",
                        s.len(),
                        model_cfg.max_len
                    ));
                }
                if let Some(&id) = s.ids.iter().find(|&&id| id as usize >= model_cfg.vocab_size) {
                    return err(format!(
                        "{name}[{i}] contains id {id}, vocabulary has {} entries",
                        model_cfg.vocab_size
                    ));
                }
            }
        }
        if self.train_a.sentences.is_empty() || self.train_b.sentences.is_empty() {
            return err("training pools must be non-empty on both sides".into());
        }
        if self.dev_a.sentences.len() != self.dev_b.sentences.len() {
            return err(format!(
                "dev sides must be parallel: {} vs {} sentences",
                self.dev_a.sentences.len(),
                self.dev_b.sentences.len()
            ));
        }
        Ok(())
    }
}

/// One JSONL line per step. Dev BLEU fields are null except on steps where
/// evaluation ran. A loss component is logged as 0 when its weight is 0 and
/// the term was skipped. wallclock_s is seconds since this process started
/// training and is the only nondeterministic field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub lambda_com: f64,
    pub lambda_div: f64,
    pub loss_com: f64,
    pub loss_div: f64,
    pub loss_total: f64,
    #[serde(rename = "dev_bleu_AB")]
    pub dev_bleu_ab: Option<f64>,
    #[serde(rename = "dev_bleu_BA")]
    pub dev_bleu_ba: Option<f64>,
    pub wallclock_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    CompletedTotalSteps,
    DevBleuTarget,
    Patience,
    Wallclock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub steps_run: u64,
    pub final_step: u64,
    pub best_dev_bleu: Option<f64>,
    pub stop: StopReason,
}

pub struct Trainer<T: Scalar> {
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    data: TrainData,
    store: ParameterStore<T>,
    opt: AdamState<T>,
    step: u64,
    best_dev: Option<f64>,
    evals_since_best: u32,
    best_store: Option<ParameterStore<T>>,
    wall_start: Instant,
}

impl<T: Scalar> Trainer<T> {
    /// Fresh run: parameters drawn from the training seed.
    pub fn new(model_cfg: ModelConfig, cfg: TrainConfig, data: TrainData) -> Result<Self, TrainError> {
        model_cfg.validate().map_err(crate::model::ModelError::from)?;
        cfg.validate()?;
        data.validate(&model_cfg)?;
        let store = build_model(&model_cfg, cfg.seed)?;
        let opt = AdamState::new(&store, &cfg);
        Ok(Trainer {
            model_cfg,
            cfg,
            data,
            store,
            opt,
            step: 0,
            best_dev: None,
            evals_since_best: 0,
            best_store: None,
            wall_start: Instant::now(),
        })
    }

    /// Resume from checkpointed parameters, moments, and loop counters.
    #[allow(clippy::too_many_arguments)]
    pub fn with_state(
        model_cfg: ModelConfig,
        cfg: TrainConfig,
        data: TrainData,
        store: ParameterStore<T>,
        opt: AdamState<T>,
        step: u64,
        best_dev: Option<f64>,
        evals_since_best: u32,
    ) -> Result<Self, TrainError> {
        model_cfg.validate().map_err(crate::model::ModelError::from)?;
        cfg.validate()?;
        data.validate(&model_cfg)?;
        Ok(Trainer {
            model_cfg,
            cfg,
            data,
            store,
            opt,
            step,
            best_dev,
            evals_since_best,
            best_store: None,
            wall_start: Instant::now(),
        })
    }

    pub fn store(&self) -> &ParameterStore<T> {
        &self.store
    }

    /// Weights of the best dev evaluation seen by this process, falling back
    /// to the current weights if no evaluation has run yet.
    pub fn best_model(&self) -> &ParameterStore<T> {
        self.best_store.as_ref().unwrap_or(&self.store)
    }

    pub fn optimizer(&self) -> &AdamState<T> {
        &self.opt
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.model_cfg
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn current_step(&self) -> u64 {
        self.step
    }

    pub fn best_dev_bleu(&self) -> Option<f64> {
        self.best_dev
    }

    pub fn evals_since_best(&self) -> u32 {
        self.evals_since_best
    }

    pub fn elapsed_s(&self) -> f64 {
        self.wall_start.elapsed().as_secs_f64()
    }

    fn sample_batch(&self, corpus_len: usize, step: u64, dialect_idx: u64) -> Vec<usize> {
        if corpus_len <= self.cfg.batch_size {
            return (0..corpus_len).collect();
        }
        let seed = derive_seed(self.cfg.seed, &[TAG_BATCH, step, dialect_idx]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, corpus_len, self.cfg.batch_size).into_vec()
    }

    /// One optimizer step. Evaluation runs afterwards when
    /// (step + 1) % eval_every == 0 and the dev set is non-empty.
    pub fn train_step(&mut self) -> Result<MetricsRecord, TrainError> {
        let s = self.step;
        let lam_c = lambda_com(&self.cfg, s);
        let lam_d = lambda_div(&self.cfg, s);
        let lr = lr_at(&self.cfg, s);
        let mut buf: GradBuffer<T> = GradBuffer::new();
        let mut loss_com = 0.0f64;
        let mut loss_div = 0.0f64;

        let corpora = [&self.data.train_a, &self.data.train_b];
        let batches: Vec<Vec<usize>> = corpora
            .iter()
            .enumerate()
            .map(|(d, c)| self.sample_batch(c.sentences.len(), s, d as u64))
            .collect();

        // Reconstruction term: corrupt each sentence and score recovering it.
        // Forward-only when the weight has decayed to 0 so the trace stays
        // honest without paying for backward.
        for (d, batch) in batches.iter().enumerate() {
            let corpus = corpora[d];
            let n = batch.len() as f64;
            for (k, &i) in batch.iter().enumerate() {
                let sentence = &corpus.sentences[i];
                let noise_seed = derive_seed(self.cfg.seed, &[TAG_NOISE, s, d as u64, k as u64]);
                let drop_seed = derive_seed(self.cfg.seed, &[TAG_DROPOUT, s, d as u64, k as u64]);
                let value = if lam_c > 0.0 {
                    denoise_ce(
                        &self.store,
                        &self.model_cfg,
                        sentence,
                        &self.cfg.noise,
                        noise_seed,
                        RunMode::Train,
                        drop_seed,
                        T::from_f64(lam_c / n),
                        Some(&mut buf),
                    )?
                } else {
                    denoise_ce(
                        &self.store,
                        &self.model_cfg,
                        sentence,
                        &self.cfg.noise,
                        noise_seed,
                        RunMode::Train,
                        drop_seed,
                        T::zero(),
                        None,
                    )?
                };
                loss_com += value / n;
            }
        }

        // Round-trip term: translate with frozen weights, then score mapping
        // the machine translation back onto its source. Skipped entirely when
        // the weight is 0 (its logged value is then 0).
        if lam_d > 0.0 {
            for (d, batch) in batches.iter().enumerate() {
                let corpus = corpora[d];
                let n = batch.len() as f64;
                for (k, &i) in batch.iter().enumerate() {
                    let sentence = &corpus.sentences[i];
                    let synthetic = backtranslate(&self.store, &self.model_cfg, sentence)?;
                    let drop_seed =
                        derive_seed(self.cfg.seed, &[TAG_DROPOUT, s, 2 + d as u64, k as u64]);
                    let value = supervised_ce(
                        &self.store,
                        &self.model_cfg,
                        &synthetic.ids,
                        synthetic.dialect,
                        &sentence.ids,
                        sentence.dialect,
                        RunMode::Train,
                        drop_seed,
                        T::from_f64(lam_d / n),
                        Some(&mut buf),
                    )?;
                    loss_div += value / n;
                }
            }
        }

        let mut norm_sq = 0.0f64;
        for g in buf.values() {
            for &v in g {
                let v = v.as_f64();
                norm_sq += v * v;
            }
        }
        let grad_norm = norm_sq.sqrt();
        if !loss_com.is_finite() || !loss_div.is_finite() || !grad_norm.is_finite() {
            return Err(TrainError::NonFinite {
                step: s,
                loss_com,
                loss_div,
                grad_norm,
            });
        }
        if grad_norm > self.cfg.grad_clip_norm {
            let scale = T::from_f64(self.cfg.grad_clip_norm / grad_norm);
            for g in buf.values_mut() {
                for v in g.iter_mut() {
                    *v *= scale;
                }
            }
        }
        self.opt.update(&mut self.store, &buf, lr)?;
        self.step = s + 1;

        let mut record = MetricsRecord {
            step: s,
            lambda_com: lam_c,
            lambda_div: lam_d,
            loss_com,
            loss_div,
            loss_total: lam_c * loss_com + lam_d * loss_div,
            dev_bleu_ab: None,
            dev_bleu_ba: None,
            wallclock_s: 0.0,
        };

        if (s + 1) % self.cfg.eval_every == 0 && !self.data.dev_a.sentences.is_empty() {
            let (ab, ba) = self.evaluate_dev()?;
            record.dev_bleu_ab = Some(ab);
            record.dev_bleu_ba = Some(ba);
            let mean = (ab + ba) / 2.0;
            if self.best_dev.is_none_or(|b| mean > b) {
                self.best_dev = Some(mean);
                self.best_store = Some(self.store.clone());
                self.evals_since_best = 0;
            } else {
                self.evals_since_best += 1;
            }
        }
        record.wallclock_s = self.elapsed_s();
        Ok(record)
    }

    /// Greedy dev BLEU in both directions, capped at eval_max_sentences
    /// sentence pairs.
    pub fn evaluate_dev(&self) -> Result<(f64, f64), TrainError> {
        let n_pairs = self.data.dev_a.sentences.len();
        let m = self.cfg.eval_max_sentences.map_or(n_pairs, |c| c.min(n_pairs));
        let dcfg = DecodeConfig::greedy(self.model_cfg.max_len);
        let mut scores = [0.0f64; 2];
        for (slot, (src, refs)) in [
            (&self.data.dev_a, &self.data.dev_b),
            (&self.data.dev_b, &self.data.dev_a),
        ]
        .iter()
        .enumerate()
        {
            let mut hyps: Vec<Vec<TokenId>> = Vec::with_capacity(m);
            for sentence in &src.sentences[..m] {
                hyps.push(translate_ids(
                    &self.store,
                    &self.model_cfg,
                    &sentence.ids,
                    sentence.dialect,
                    &dcfg,
                )?);
            }
            let refs: Vec<&[TokenId]> = refs.sentences[..m].iter().map(|s| &s.ids[..]).collect();
            scores[slot] = bleu(&hyps, &refs)?.score;
        }
        Ok((scores[0], scores[1]))
    }

    /// Drive steps until total_steps or an early-stop condition, writing one
    /// JSONL record per step. `on_step` runs after each step with the fresh
    /// record and whether this step produced a new best dev score.
    pub fn run_with<W, F>(&mut self, metrics: &mut W, mut on_step: F) -> Result<TrainOutcome, TrainError>
    where
        W: Write,
        F: FnMut(&Trainer<T>, &MetricsRecord, bool) -> Result<(), TrainError>,
    {
        let first = self.step;
        let mut stop = StopReason::CompletedTotalSteps;
        while self.step < self.cfg.total_steps {
            if let Some(max_s) = self.cfg.max_wallclock_s {
                if self.elapsed_s() >= max_s {
                    stop = StopReason::Wallclock;
                    break;
                }
            }
            let best_before = self.best_dev;
            let record = match self.train_step() {
                Ok(r) => r,
                Err(TrainError::NonFinite {
                    step,
                    loss_com,
                    loss_div,
                    grad_norm,
                }) => {
                    // NaN cannot be a JSON number, so the abort line carries
                    // the values as strings.
                    let diag = serde_json::json!({
                        "step": step,
                        "event": "non_finite_abort",
                        "loss_com": format!("{loss_com}"),
                        "loss_div": format!("{loss_div}"),
                        "grad_norm": format!("{grad_norm}"),
                    });
                    writeln!(metrics, "{diag}")?;
                    metrics.flush()?;
                    return Err(TrainError::NonFinite {
                        step,
                        loss_com,
                        loss_div,
                        grad_norm,
                    });
                }
                Err(e) => return Err(e),
            };
            writeln!(metrics, "{}", serde_json::to_string(&record)?)?;
            let new_best = self.best_dev != best_before;
            on_step(self, &record, new_best)?;
            if let (Some(ab), Some(ba)) = (record.dev_bleu_ab, record.dev_bleu_ba) {
                let mean = (ab + ba) / 2.0;
                if self.cfg.stop_at_dev_bleu.is_some_and(|t| mean >= t) {
                    stop = StopReason::DevBleuTarget;
                    break;
                }
                if self.cfg.patience.is_some_and(|p| self.evals_since_best >= p) {
                    stop = StopReason::Patience;
                    break;
                }
            }
        }
        metrics.flush()?;
        Ok(TrainOutcome {
            steps_run: self.step - first,
            final_step: self.step,
            best_dev_bleu: self.best_dev,
            stop,
        })
    }

    pub fn run<W: Write>(&mut self, metrics: &mut W) -> Result<TrainOutcome, TrainError> {
        self.run_with(metrics, |_, _, _| Ok(()))
    }
}
