//! Gradient-free inference. Encoding reuses the tape forward in eval mode
//! (one pass, parity for free); incremental decoding keeps per-layer KV
//! caches so each generated token costs one row of work.

use super::config::{ModelConfig, LN_EPS};
use super::forward::{positional_row, Forward, RunMode};
use super::params::{dec_side, ParameterStore};
use super::ModelError;
use crate::autodiff::kernels;
use crate::autodiff::{Scalar, Tensor};
use crate::corpus::{Dialect, BOS_ID};
use crate::TokenId;

/// Encoder activations for one source sentence, all layers bottom to top.
#[derive(Clone, Debug)]
pub struct EncodedSource<T> {
    pub layers: Vec<Tensor<T>>,
    pub dialect: Dialect,
}

/// Run the encoder without keeping gradients.
pub fn encode_source<T: Scalar>(
    store: &ParameterStore<T>,
    cfg: &ModelConfig,
    ids: &[TokenId],
    dialect: Dialect,
) -> Result<EncodedSource<T>, ModelError> {
    let mut fwd = Forward::new(store, cfg, RunMode::Eval, 0);
    let layers = fwd.encode(ids, dialect)?;
    Ok(EncodedSource {
        layers: layers.iter().map(|&v| fwd.tape.value_tensor(v)).collect(),
        dialect,
    })
}

/// x(d_in) * w(d_in, d_out) + b -> (d_out)
fn linear_row<T: Scalar>(x: &[T], w: &Tensor<T>, b: &Tensor<T>) -> Vec<T> {
    let (d_in, d_out) = (w.shape()[0], w.shape()[1]);
    debug_assert_eq!(x.len(), d_in);
    let mut out = b.data().to_vec();
    kernels::gemm_nn(1, d_in, d_out, T::one(), x, w.data(), &mut out);
    out
}

/// rows(n, d_in) * w(d_in, d_out) + b per row -> (n, d_out)
fn linear_rows<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (n, d_in) = (x.shape()[0], x.shape()[1]);
    let d_out = w.shape()[1];
    let mut out = Vec::with_capacity(n * d_out);
    for _ in 0..n {
        out.extend_from_slice(b.data());
    }
    kernels::gemm_nn(n, d_in, d_out, T::one(), x.data(), w.data(), &mut out);
    Tensor::new(vec![n, d_out], out).expect("gemm output shape")
}

fn ln_row_inplace<T: Scalar>(x: &mut [T], g: &Tensor<T>, b: &Tensor<T>) {
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    kernels::layer_norm_row(x, g.data(), b.data(), T::from_f64(LN_EPS), &mut xhat, &mut out);
    x.copy_from_slice(&out);
}

/// Multi-head attention of one query row against cached keys/values laid out
/// row-major (t, d).
fn attend_row<T: Scalar>(
    q: &[T],
    keys: &[T],
    values: &[T],
    n_heads: usize,
    out: &mut [T],
) {
    let d = q.len();
    let dh = d / n_heads;
    let t = keys.len() / d;
    let inv_sqrt = T::from_f64(1.0 / (dh as f64).sqrt());
    let mut scores = vec![T::zero(); t];
    let mut weights = vec![T::zero(); t];
    for h in 0..n_heads {
        let off = h * dh;
        for (j, score) in scores.iter_mut().enumerate() {
            let krow = &keys[j * d + off..j * d + off + dh];
            let mut dot = T::zero();
            for (a, b) in q[off..off + dh].iter().zip(krow) {
                dot += *a * *b;
            }
            *score = dot * inv_sqrt;
        }
        kernels::softmax_row(&scores, &mut weights);
        let ctx = &mut out[off..off + dh];
        for c in ctx.iter_mut() {
            *c = T::zero();
        }
        for (j, &w) in weights.iter().enumerate() {
            let vrow = &values[j * d + off..j * d + off + dh];
            for (c, &v) in ctx.iter_mut().zip(vrow) {
                *c += w * v;
            }
        }
    }
}

/// Incremental decoder state for one (source, target dialect) pair. Cloning
/// a session clones its caches, which is how beam search forks hypotheses.
#[derive(Clone)]
pub struct DecoderSession<'m, T: Scalar> {
    store: &'m ParameterStore<T>,
    cfg: &'m ModelConfig,
    dialect: Dialect,
    /// Per layer: projected memory keys and values for cross-attention.
    cross_kv: Vec<(Tensor<T>, Tensor<T>)>,
    /// Per layer: self-attention keys and values, one row per consumed row.
    self_kv: Vec<(Vec<T>, Vec<T>)>,
    /// Input rows consumed so far (lead row included).
    rows: usize,
    last_logits: Vec<T>,
}

impl<'m, T: Scalar> DecoderSession<'m, T> {
    /// Precompute cross-attention KV and consume the lead row. After this,
    /// `last_logits` already scores the first real token.
    pub fn start(
        store: &'m ParameterStore<T>,
        cfg: &'m ModelConfig,
        memory: &EncodedSource<T>,
        tgt_dialect: Dialect,
    ) -> Result<Self, ModelError> {
        if memory.layers.len() != cfg.n_layers {
            return Err(ModelError::MemoryLayers {
                want: cfg.n_layers,
                got: memory.layers.len(),
            });
        }
        let mut cross_kv = Vec::with_capacity(cfg.n_layers);
        for i in 0..cfg.n_layers {
            let side = dec_side(cfg, i, tgt_dialect).tag();
            let mem = if cfg.layer_coordination {
                &memory.layers[i]
            } else {
                &memory.layers[cfg.n_layers - 1]
            };
            let p = format!("dec.{i}.{side}.cross");
            let k = linear_rows(mem, store.get(&format!("{p}.wk"))?, store.get(&format!("{p}.bk"))?);
            let v = linear_rows(mem, store.get(&format!("{p}.wv"))?, store.get(&format!("{p}.bv"))?);
            cross_kv.push((k, v));
        }
        let mut session = DecoderSession {
            store,
            cfg,
            dialect: tgt_dialect,
            cross_kv,
            self_kv: vec![(Vec::new(), Vec::new()); cfg.n_layers],
            rows: 0,
            last_logits: Vec::new(),
        };
        let lead = session.lead_embedding()?;
        session.consume_row(lead)?;
        Ok(session)
    }

    fn lead_embedding(&self) -> Result<Vec<T>, ModelError> {
        if self.cfg.dialect_token {
            let v = self
                .store
                .get(&format!("emb.dialect.{}", self.dialect.tag()))?;
            Ok(v.data().to_vec())
        } else {
            self.token_embedding(BOS_ID)
        }
    }

    fn token_embedding(&self, id: TokenId) -> Result<Vec<T>, ModelError> {
        let (d, ds) = (self.cfg.model_dim, self.cfg.pivot_dim);
        let mut row = Vec::with_capacity(d);
        if ds > 0 {
            let pivot = self.store.get("emb.pivot")?;
            if (id as usize) >= pivot.shape()[0] {
                return Err(ModelError::Tape(
                    crate::autodiff::TapeError::TokenOutOfRange {
                        id,
                        size: pivot.shape()[0],
                    },
                ));
            }
            row.extend_from_slice(pivot.row(id as usize));
        }
        if ds < d {
            let private = self
                .store
                .get(&format!("emb.private.{}", self.dialect.tag()))?;
            if (id as usize) >= private.shape()[0] {
                return Err(ModelError::Tape(
                    crate::autodiff::TapeError::TokenOutOfRange {
                        id,
                        size: private.shape()[0],
                    },
                ));
            }
            row.extend_from_slice(private.row(id as usize));
        }
        Ok(row)
    }

    /// Number of real tokens consumed (lead row excluded).
    pub fn tokens_consumed(&self) -> usize {
        self.rows.saturating_sub(1)
    }

    pub fn last_logits(&self) -> &[T] {
        &self.last_logits
    }

    /// Feed the next target token and refresh `last_logits`.
    pub fn push(&mut self, id: TokenId) -> Result<(), ModelError> {
        if self.tokens_consumed() >= self.cfg.max_len {
            return Err(ModelError::SequenceTooLong {
                len: self.tokens_consumed() + 1,
                max_len: self.cfg.max_len,
            });
        }
        let row = self.token_embedding(id)?;
        self.consume_row(row)
    }

    fn consume_row(&mut self, embedding: Vec<T>) -> Result<(), ModelError> {
        let d = self.cfg.model_dim;
        let pos = self.rows;
        let pe = positional_row::<T>(pos, d);
        let scale = T::from_f64((d as f64).sqrt());
        let mut x: Vec<T> = embedding
            .iter()
            .zip(&pe)
            .map(|(&e, &p)| e * scale + p)
            .collect();

        for i in 0..self.cfg.n_layers {
            let side = dec_side(self.cfg, i, self.dialect).tag();
            let p = format!("dec.{i}.{side}");
            // Self-attention: extend this layer's KV with the current row,
            // then attend over everything so far (causality is implicit).
            let q = linear_row(&x, self.store.get(&format!("{p}.self.wq"))?, self.store.get(&format!("{p}.self.bq"))?);
            let k = linear_row(&x, self.store.get(&format!("{p}.self.wk"))?, self.store.get(&format!("{p}.self.bk"))?);
            let v = linear_row(&x, self.store.get(&format!("{p}.self.wv"))?, self.store.get(&format!("{p}.self.bv"))?);
            let (keys, values) = &mut self.self_kv[i];
            keys.extend_from_slice(&k);
            values.extend_from_slice(&v);
            let mut ctx = vec![T::zero(); d];
            attend_row(&q, keys, values, self.cfg.n_heads, &mut ctx);
            let a = linear_row(&ctx, self.store.get(&format!("{p}.self.wo"))?, self.store.get(&format!("{p}.self.bo"))?);
            for (xi, ai) in x.iter_mut().zip(&a) {
                *xi += *ai;
            }
            ln_row_inplace(&mut x, self.store.get(&format!("{p}.ln1.g"))?, self.store.get(&format!("{p}.ln1.b"))?);

            // Cross-attention against the precomputed memory KV.
            let q = linear_row(&x, self.store.get(&format!("{p}.cross.wq"))?, self.store.get(&format!("{p}.cross.bq"))?);
            let (ck, cv) = &self.cross_kv[i];
            let mut ctx = vec![T::zero(); d];
            attend_row(&q, ck.data(), cv.data(), self.cfg.n_heads, &mut ctx);
            let c = linear_row(&ctx, self.store.get(&format!("{p}.cross.wo"))?, self.store.get(&format!("{p}.cross.bo"))?);
            for (xi, ci) in x.iter_mut().zip(&c) {
                *xi += *ci;
            }
            ln_row_inplace(&mut x, self.store.get(&format!("{p}.ln2.g"))?, self.store.get(&format!("{p}.ln2.b"))?);

            // Feed-forward.
            let mut h = linear_row(&x, self.store.get(&format!("{p}.ffn.w1"))?, self.store.get(&format!("{p}.ffn.b1"))?);
            for v in h.iter_mut() {
                if *v < T::zero() {
                    *v = T::zero();
                }
            }
            let f = linear_row(&h, self.store.get(&format!("{p}.ffn.w2"))?, self.store.get(&format!("{p}.ffn.b2"))?);
            for (xi, fi) in x.iter_mut().zip(&f) {
                *xi += *fi;
            }
            ln_row_inplace(&mut x, self.store.get(&format!("{p}.ln3.g"))?, self.store.get(&format!("{p}.ln3.b"))?);
        }

        self.last_logits = linear_row(&x, self.store.get("proj.w")?, self.store.get("proj.b")?);
        self.rows += 1;
        Ok(())
    }
}
