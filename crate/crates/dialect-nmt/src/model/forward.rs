//! Tape-building forward pass: embedding with the shared pivot slice, the
//! encoder stack, and the teacher-forced decoder with optional per-layer
//! coordination to encoder outputs. One `Forward` builds one graph.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, LN_EPS};
use super::params::{dec_side, enc_side, ParameterStore};
use super::ModelError;
use crate::autodiff::{Scalar, Tape, Tensor, Val};
use crate::corpus::{Dialect, BOS_ID};
use crate::TokenId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunMode {
    /// Dropout active; requires a dropout seed.
    Train,
    Eval,
}

/// Additive mask value for disallowed attention positions.
const NEG_INF: f64 = -1e9;

/// One sinusoidal position row of width `d`.
pub fn positional_row<T: Scalar>(pos: usize, d: usize) -> Vec<T> {
    (0..d)
        .map(|i| {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
            T::from_f64(if i % 2 == 0 { angle.sin() } else { angle.cos() })
        })
        .collect()
}

/// Sinusoidal position table for `rows` positions.
pub fn positional_encoding<T: Scalar>(rows: usize, d: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(rows * d);
    for pos in 0..rows {
        data.extend(positional_row::<T>(pos, d));
    }
    Tensor::new(vec![rows, d], data).expect("shape matches construction")
}

#[derive(Debug)]
pub struct DecodeOut {
    /// Output of each decoder layer, bottom to top.
    pub states: Vec<Val>,
    /// One row per decoder input row, width vocab_size.
    pub logits: Val,
}

pub struct Forward<'s, T: Scalar> {
    pub tape: Tape<'s, T>,
    store: &'s ParameterStore<T>,
    cfg: &'s ModelConfig,
    mode: RunMode,
    dropout_rng: ChaCha8Rng,
    bound: HashMap<String, Val>,
}

impl<'s, T: Scalar> Forward<'s, T> {
    /// `dropout_seed` only matters in Train mode with dropout > 0.
    pub fn new(
        store: &'s ParameterStore<T>,
        cfg: &'s ModelConfig,
        mode: RunMode,
        dropout_seed: u64,
    ) -> Self {
        Forward {
            tape: Tape::new(),
            store,
            cfg,
            mode,
            dropout_rng: ChaCha8Rng::seed_from_u64(dropout_seed),
            bound: HashMap::new(),
        }
    }

    /// Parameter leaf, bound at most once per tape so reuse shares the slot.
    fn p(&mut self, name: &str) -> Result<Val, ModelError> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self.store.get(name)?;
        let v = self.tape.param(name, t);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    fn dropout(&mut self, x: Val) -> Val {
        let p = self.cfg.dropout;
        if self.mode == RunMode::Eval || p == 0.0 {
            return x;
        }
        let keep = 1.0 - p;
        let scale = T::from_f64(1.0 / keep);
        let shape = self.tape.shape(x).to_vec();
        let numel: usize = shape.iter().product();
        let data: Vec<T> = (0..numel)
            .map(|_| {
                if self.dropout_rng.random::<f64>() < keep {
                    scale
                } else {
                    T::zero()
                }
            })
            .collect();
        let mask = self
            .tape
            .constant(Tensor::new(shape, data).expect("mask matches x"));
        self.tape.mul(x, mask).expect("same shape by construction")
    }

    /// Token embedding rows: shared pivot columns first, then the dialect's
    /// private columns.
    fn token_rows(&mut self, ids: &[TokenId], dialect: Dialect) -> Result<Val, ModelError> {
        let ds = self.cfg.pivot_dim;
        let d = self.cfg.model_dim;
        let mut parts = Vec::new();
        if ds > 0 {
            let pivot = self.p("emb.pivot")?;
            parts.push(self.tape.embed(pivot, ids)?);
        }
        if ds < d {
            let private = self.p(&format!("emb.private.{}", dialect.tag()))?;
            parts.push(self.tape.embed(private, ids)?);
        }
        Ok(if parts.len() == 1 {
            parts[0]
        } else {
            self.tape.concat_cols(&parts)?
        })
    }

    /// First decoder input row; also the encoder's lead row when the dialect
    /// token is enabled.
    fn lead_row(&mut self, dialect: Dialect) -> Result<Val, ModelError> {
        if self.cfg.dialect_token {
            self.p(&format!("emb.dialect.{}", dialect.tag()))
        } else {
            self.token_rows(&[BOS_ID], dialect)
        }
    }

    /// Input matrix: optional lead row + token rows, scaled by sqrt(d), plus
    /// positions, with dropout in Train mode.
    fn input_rows(
        &mut self,
        ids: &[TokenId],
        dialect: Dialect,
        with_lead: bool,
    ) -> Result<Val, ModelError> {
        if ids.len() > self.cfg.max_len {
            return Err(ModelError::SequenceTooLong {
                len: ids.len(),
                max_len: self.cfg.max_len,
            });
        }
        let mut rows = Vec::new();
        if with_lead {
            rows.push(self.lead_row(dialect)?);
        }
        if !ids.is_empty() {
            rows.push(self.token_rows(ids, dialect)?);
        }
        let x = if rows.len() == 1 {
            rows[0]
        } else {
            self.tape.concat_rows(&rows)?
        };
        let x = if self.tape.shape(x).len() == 1 {
            // Single rank-1 lead row; lift to (1, d) for the layer stack.
            self.tape.concat_rows(&[x])?
        } else {
            x
        };
        let scaled = self
            .tape
            .scale(x, T::from_f64((self.cfg.model_dim as f64).sqrt()));
        let n_rows = self.tape.shape(scaled)[0];
        let pe = self
            .tape
            .constant(positional_encoding(n_rows, self.cfg.model_dim));
        let with_pos = self.tape.add(scaled, pe)?;
        Ok(self.dropout(with_pos))
    }

    /// Multi-head attention: queries from `q_in`, keys/values from `kv_in`,
    /// parameters under `prefix` (wq..bo). Causal masking requires square
    /// score matrices.
    fn attention(
        &mut self,
        q_in: Val,
        kv_in: Val,
        prefix: &str,
        causal: bool,
    ) -> Result<Val, ModelError> {
        let dh = self.cfg.head_dim();
        let (wq, bq) = (self.p(&format!("{prefix}.wq"))?, self.p(&format!("{prefix}.bq"))?);
        let (wk, bk) = (self.p(&format!("{prefix}.wk"))?, self.p(&format!("{prefix}.bk"))?);
        let (wv, bv) = (self.p(&format!("{prefix}.wv"))?, self.p(&format!("{prefix}.bv"))?);
        let (wo, bo) = (self.p(&format!("{prefix}.wo"))?, self.p(&format!("{prefix}.bo"))?);

        let q = self.tape.matmul(q_in, wq)?;
        let q = self.tape.add_bias(q, bq)?;
        let k = self.tape.matmul(kv_in, wk)?;
        let k = self.tape.add_bias(k, bk)?;
        let v = self.tape.matmul(kv_in, wv)?;
        let v = self.tape.add_bias(v, bv)?;

        let lq = self.tape.shape(q)[0];
        let lk = self.tape.shape(k)[0];
        let mask = if causal {
            debug_assert_eq!(lq, lk);
            let mut data = vec![T::zero(); lq * lk];
            for i in 0..lq {
                for j in (i + 1)..lk {
                    data[i * lk + j] = T::from_f64(NEG_INF);
                }
            }
            Some(
                self.tape
                    .constant(Tensor::new(vec![lq, lk], data).expect("mask shape")),
            )
        } else {
            None
        };

        let inv_sqrt = T::from_f64(1.0 / (dh as f64).sqrt());
        let mut head_outs = Vec::with_capacity(self.cfg.n_heads);
        for h in 0..self.cfg.n_heads {
            let qh = self.tape.slice_cols(q, h * dh, dh)?;
            let kh = self.tape.slice_cols(k, h * dh, dh)?;
            let vh = self.tape.slice_cols(v, h * dh, dh)?;
            let scores = self.tape.matmul_nt(qh, kh)?;
            let scores = self.tape.scale(scores, inv_sqrt);
            let scores = match mask {
                Some(m) => self.tape.add(scores, m)?,
                None => scores,
            };
            let weights = self.tape.softmax(scores, 1)?;
            head_outs.push(self.tape.matmul(weights, vh)?);
        }
        let ctx = self.tape.concat_cols(&head_outs)?;
        let out = self.tape.matmul(ctx, wo)?;
        Ok(self.tape.add_bias(out, bo)?)
    }

    /// Post-norm residual: LN(x + dropout(sub)).
    fn residual_ln(&mut self, x: Val, sub: Val, ln_prefix: &str) -> Result<Val, ModelError> {
        let sub = self.dropout(sub);
        let sum = self.tape.add(x, sub)?;
        let g = self.p(&format!("{ln_prefix}.g"))?;
        let b = self.p(&format!("{ln_prefix}.b"))?;
        Ok(self.tape.layer_norm(sum, g, b, LN_EPS)?)
    }

    fn ffn(&mut self, x: Val, prefix: &str) -> Result<Val, ModelError> {
        let w1 = self.p(&format!("{prefix}.w1"))?;
        let b1 = self.p(&format!("{prefix}.b1"))?;
        let w2 = self.p(&format!("{prefix}.w2"))?;
        let b2 = self.p(&format!("{prefix}.b2"))?;
        let h = self.tape.matmul(x, w1)?;
        let h = self.tape.add_bias(h, b1)?;
        let h = self.tape.relu(h);
        let out = self.tape.matmul(h, w2)?;
        Ok(self.tape.add_bias(out, b2)?)
    }

    /// Run the encoder; returns every layer's output, bottom to top.
    pub fn encode(&mut self, ids: &[TokenId], dialect: Dialect) -> Result<Vec<Val>, ModelError> {
        if ids.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        let mut x = self.input_rows(ids, dialect, self.cfg.dialect_token)?;
        let mut layers = Vec::with_capacity(self.cfg.n_layers);
        for i in 0..self.cfg.n_layers {
            let side = enc_side(self.cfg, i, dialect).tag();
            let prefix = format!("enc.{i}.{side}");
            let a = self.attention(x, x, &format!("{prefix}.attn"), false)?;
            x = self.residual_ln(x, a, &format!("{prefix}.ln1"))?;
            let f = self.ffn(x, &format!("{prefix}.ffn"))?;
            x = self.residual_ln(x, f, &format!("{prefix}.ln2"))?;
            layers.push(x);
        }
        Ok(layers)
    }

    /// Teacher-forced decoder over `memory` (one entry per encoder layer).
    /// Input rows are the lead row then `tgt_ids`; row j of the logits
    /// predicts the token after consuming j input rows.
    pub fn decode(
        &mut self,
        tgt_ids: &[TokenId],
        tgt_dialect: Dialect,
        memory: &[Val],
    ) -> Result<DecodeOut, ModelError> {
        if memory.len() != self.cfg.n_layers {
            return Err(ModelError::MemoryLayers {
                want: self.cfg.n_layers,
                got: memory.len(),
            });
        }
        let mut x = self.input_rows(tgt_ids, tgt_dialect, true)?;
        let mut states = Vec::with_capacity(self.cfg.n_layers);
        for i in 0..self.cfg.n_layers {
            let side = dec_side(self.cfg, i, tgt_dialect).tag();
            let prefix = format!("dec.{i}.{side}");
            let mem = if self.cfg.layer_coordination {
                memory[i]
            } else {
                *memory.last().expect("n_layers >= 1")
            };
            let a = self.attention(x, x, &format!("{prefix}.self"), true)?;
            x = self.residual_ln(x, a, &format!("{prefix}.ln1"))?;
            let c = self.attention(x, mem, &format!("{prefix}.cross"), false)?;
            x = self.residual_ln(x, c, &format!("{prefix}.ln2"))?;
            let f = self.ffn(x, &format!("{prefix}.ffn"))?;
            x = self.residual_ln(x, f, &format!("{prefix}.ln3"))?;
            states.push(x);
        }
        let w = self.p("proj.w")?;
        let b = self.p("proj.b")?;
        let logits = self.tape.matmul(x, w)?;
        let logits = self.tape.add_bias(logits, b)?;
        Ok(DecodeOut { states, logits })
    }

    /// Register externally supplied encoder activations as constants, e.g.
    /// for probing or for gradient-free back-translation outputs.
    pub fn memory_from_tensors(&mut self, layers: &[Tensor<T>]) -> Vec<Val> {
        layers.iter().map(|t| self.tape.constant(t.clone())).collect()
    }

    /// Teacher-forcing targets for `decode`: the sentence plus EOS.
    pub fn targets(tgt_ids: &[TokenId]) -> Vec<TokenId> {
        let mut t = tgt_ids.to_vec();
        t.push(crate::corpus::EOS_ID);
        t
    }
}
