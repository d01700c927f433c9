//! Parameter enumeration, initialization and storage. `param_specs` is the
//! single source of truth for what exists at which shape; building, counting,
//! checkpointing and forward binding all go through it.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::ModelError;
use crate::autodiff::{GradBuffer, Scalar, Tensor};
use crate::corpus::Dialect;
use crate::derive_seed;

/// Which copy of a layer a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Shared,
    Dia(Dialect),
}

impl Side {
    pub fn tag(self) -> &'static str {
        match self {
            Side::Shared => "shared",
            Side::Dia(Dialect::A) => "A",
            Side::Dia(Dialect::B) => "B",
        }
    }
}

/// Encoder layers are shared from the top of the stack down.
pub fn enc_side(cfg: &ModelConfig, layer: usize, dialect: Dialect) -> Side {
    if layer >= cfg.n_layers - cfg.n_shared_enc {
        Side::Shared
    } else {
        Side::Dia(dialect)
    }
}

/// Decoder layers are shared from the bottom of the stack up.
pub fn dec_side(cfg: &ModelConfig, layer: usize, dialect: Dialect) -> Side {
    if layer < cfg.n_shared_dec {
        Side::Shared
    } else {
        Side::Dia(dialect)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform on ±sqrt(6 / (fan_in + fan_out)).
    Xavier { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn mat(name: String, r: usize, c: usize) -> ParamSpec {
    ParamSpec {
        name,
        shape: vec![r, c],
        init: Init::Xavier {
            fan_in: r,
            fan_out: c,
        },
    }
}

fn bias(name: String, n: usize) -> ParamSpec {
    ParamSpec {
        name,
        shape: vec![n],
        init: Init::Zeros,
    }
}

fn gain(name: String, n: usize) -> ParamSpec {
    ParamSpec {
        name,
        shape: vec![n],
        init: Init::Ones,
    }
}

fn attn_block(out: &mut Vec<ParamSpec>, prefix: &str, d: usize) {
    for w in ["wq", "wk", "wv", "wo"] {
        out.push(mat(format!("{prefix}.{w}"), d, d));
    }
    for b in ["bq", "bk", "bv", "bo"] {
        out.push(bias(format!("{prefix}.{b}"), d));
    }
}

fn ln_block(out: &mut Vec<ParamSpec>, prefix: &str, d: usize) {
    out.push(gain(format!("{prefix}.g"), d));
    out.push(bias(format!("{prefix}.b"), d));
}

fn ffn_block(out: &mut Vec<ParamSpec>, prefix: &str, d: usize, f: usize) {
    out.push(mat(format!("{prefix}.w1"), d, f));
    out.push(bias(format!("{prefix}.b1"), f));
    out.push(mat(format!("{prefix}.w2"), f, d));
    out.push(bias(format!("{prefix}.b2"), d));
}

fn sides_for(shared: bool) -> Vec<Side> {
    if shared {
        vec![Side::Shared]
    } else {
        vec![Side::Dia(Dialect::A), Side::Dia(Dialect::B)]
    }
}

/// Full list of parameters for a configuration, in a stable order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let (v, d, ds, f) = (
        cfg.vocab_size,
        cfg.model_dim,
        cfg.pivot_dim,
        cfg.ffn_dim,
    );
    let mut specs = Vec::new();

    if ds > 0 {
        specs.push(mat("emb.pivot".into(), v, ds));
    }
    if ds < d {
        for dia in ["A", "B"] {
            specs.push(mat(format!("emb.private.{dia}"), v, d - ds));
        }
    }
    if cfg.dialect_token {
        for dia in ["A", "B"] {
            specs.push(ParamSpec {
                name: format!("emb.dialect.{dia}"),
                shape: vec![d],
                init: Init::Xavier {
                    fan_in: 1,
                    fan_out: d,
                },
            });
        }
    }
    specs.push(mat("proj.w".into(), d, v));
    specs.push(bias("proj.b".into(), v));

    for i in 0..cfg.n_layers {
        let shared = enc_side(cfg, i, Dialect::A) == Side::Shared;
        for side in sides_for(shared) {
            let p = format!("enc.{i}.{}", side.tag());
            attn_block(&mut specs, &format!("{p}.attn"), d);
            ln_block(&mut specs, &format!("{p}.ln1"), d);
            ffn_block(&mut specs, &format!("{p}.ffn"), d, f);
            ln_block(&mut specs, &format!("{p}.ln2"), d);
        }
    }
    for i in 0..cfg.n_layers {
        let shared = dec_side(cfg, i, Dialect::A) == Side::Shared;
        for side in sides_for(shared) {
            let p = format!("dec.{i}.{}", side.tag());
            attn_block(&mut specs, &format!("{p}.self"), d);
            ln_block(&mut specs, &format!("{p}.ln1"), d);
            attn_block(&mut specs, &format!("{p}.cross"), d);
            ln_block(&mut specs, &format!("{p}.ln2"), d);
            ffn_block(&mut specs, &format!("{p}.ffn"), d, f);
            ln_block(&mut specs, &format!("{p}.ln3"), d);
        }
    }
    specs
}

/// All model parameters, keyed by name.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore<T> {
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParameterStore<T> {
    pub fn from_map(params: BTreeMap<String, Tensor<T>>) -> Self {
        ParameterStore { params }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>, ModelError> {
        self.params.get(name).ok_or_else(|| ModelError::MissingParam {
            name: name.to_string(),
        })
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>, ModelError> {
        self.params
            .get_mut(name)
            .ok_or_else(|| ModelError::MissingParam {
                name: name.to_string(),
            })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn n_scalars(&self) -> u64 {
        self.params.values().map(|t| t.numel() as u64).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in self.params.values_mut() {
            t.zero_grad();
        }
    }

    /// Move accumulated per-name gradients into the tensors' grad slots.
    pub fn apply_grad_buffer(&mut self, buf: &GradBuffer<T>) -> Result<(), ModelError> {
        for (name, g) in buf {
            let t = self
                .params
                .get_mut(name)
                .ok_or_else(|| ModelError::MissingParam { name: name.clone() })?;
            if g.len() != t.numel() {
                return Err(ModelError::GradShape {
                    name: name.clone(),
                    param: t.numel(),
                    grad: g.len(),
                });
            }
            let slot = t.grad_mut();
            for (s, &v) in slot.iter_mut().zip(g) {
                *s += v;
            }
        }
        Ok(())
    }

    /// Global L2 norm over every gradient slot (absent slots count as zero).
    pub fn grad_norm(&self) -> f64 {
        let mut sq = 0.0f64;
        for t in self.params.values() {
            if let Some(g) = &t.grad {
                for &v in g {
                    let x = v.as_f64();
                    sq += x * x;
                }
            }
        }
        sq.sqrt()
    }

    pub fn cast<U: Scalar>(&self) -> ParameterStore<U> {
        ParameterStore {
            params: self
                .params
                .iter()
                .map(|(k, t)| (k.clone(), t.cast::<U>()))
                .collect(),
        }
    }
}

/// FNV-1a over the parameter name; keeps each parameter's init stream
/// independent of the rest of the parameter set.
fn name_tag(name: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Initialize every parameter. Draws happen in f64 and are cast, so an f32
/// and an f64 build from the same seed represent the same numbers.
pub fn build_model<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ParameterStore<T>, ModelError> {
    cfg.validate()?;
    let mut params = BTreeMap::new();
    for spec in param_specs(cfg) {
        let numel: usize = spec.shape.iter().product();
        let data: Vec<T> = match spec.init {
            Init::Zeros => vec![T::zero(); numel],
            Init::Ones => vec![T::one(); numel],
            Init::Xavier { fan_in, fan_out } => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[name_tag(&spec.name)]));
                (0..numel)
                    .map(|_| T::from_f64(rng.random_range(-bound..bound)))
                    .collect()
            }
        };
        let tensor = Tensor::new(spec.shape, data).expect("spec shape matches generated data");
        params.insert(spec.name, tensor);
    }
    Ok(ParameterStore { params })
}

#[cfg(test)]
mod tests {
    use super::super::config::param_count;
    use super::*;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            model_dim: 8,
            pivot_dim: 4,
            n_heads: 2,
            ffn_dim: 16,
            n_shared_enc: 1,
            n_shared_dec: 1,
            vocab_size: 20,
            ..ModelConfig::desk(20)
        }
    }

    #[test]
    fn structural_count_matches_closed_form() {
        for (ds, shared_e, shared_d, dia_tok) in
            [(4, 1, 1, true), (0, 2, 0, false), (8, 0, 2, true)]
        {
            let cfg = ModelConfig {
                pivot_dim: ds,
                n_shared_enc: shared_e,
                n_shared_dec: shared_d,
                dialect_token: dia_tok,
                ..small_cfg()
            };
            let structural: u64 = param_specs(&cfg)
                .iter()
                .map(|s| s.shape.iter().product::<usize>() as u64)
                .sum();
            assert_eq!(structural, param_count(&cfg).total, "cfg {cfg:?}");
        }
    }

    #[test]
    fn store_matches_specs() {
        let cfg = small_cfg();
        let store: ParameterStore<f32> = build_model(&cfg, 7).unwrap();
        let specs = param_specs(&cfg);
        assert_eq!(store.n_params(), specs.len());
        for spec in &specs {
            assert_eq!(store.get(&spec.name).unwrap().shape(), &spec.shape[..]);
        }
        assert_eq!(store.n_scalars(), param_count(&cfg).total);
    }

    #[test]
    fn sharing_controls_which_sides_exist() {
        let cfg = small_cfg(); // 2 layers, 1 shared each side
        let store: ParameterStore<f32> = build_model(&cfg, 7).unwrap();
        // Encoder: layer 1 (top) shared, layer 0 per dialect.
        assert!(store.contains("enc.0.A.attn.wq"));
        assert!(store.contains("enc.0.B.attn.wq"));
        assert!(!store.contains("enc.0.shared.attn.wq"));
        assert!(store.contains("enc.1.shared.attn.wq"));
        assert!(!store.contains("enc.1.A.attn.wq"));
        // Decoder: layer 0 (bottom) shared, layer 1 per dialect.
        assert!(store.contains("dec.0.shared.self.wq"));
        assert!(store.contains("dec.1.A.cross.wo"));
        assert!(store.contains("dec.1.B.ffn.w1"));
    }

    #[test]
    fn full_sharing_collapses_to_one_copy() {
        let cfg = ModelConfig {
            n_shared_enc: 2,
            n_shared_dec: 2,
            ..small_cfg()
        };
        let store: ParameterStore<f32> = build_model(&cfg, 7).unwrap();
        for i in 0..2 {
            assert!(store.contains(&format!("enc.{i}.shared.attn.wq")));
            assert!(!store.contains(&format!("enc.{i}.A.attn.wq")));
            assert!(store.contains(&format!("dec.{i}.shared.self.wq")));
            assert!(!store.contains(&format!("dec.{i}.B.self.wq")));
        }
    }

    #[test]
    fn init_is_deterministic_and_respects_kind() {
        let cfg = small_cfg();
        let s1: ParameterStore<f32> = build_model(&cfg, 42).unwrap();
        let s2: ParameterStore<f32> = build_model(&cfg, 42).unwrap();
        assert_eq!(s1, s2);
        let s3: ParameterStore<f32> = build_model(&cfg, 43).unwrap();
        assert_ne!(s1, s3);

        let wq = s1.get("enc.0.A.attn.wq").unwrap();
        let bound = (6.0 / 16.0f64).sqrt();
        assert!(wq.data().iter().any(|&v| v != 0.0));
        assert!(wq.max_abs() <= bound);
        assert!(s1.get("enc.0.A.attn.bq").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(s1.get("enc.0.A.ln1.g").unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn f32_and_f64_builds_agree() {
        let cfg = small_cfg();
        let s32: ParameterStore<f32> = build_model(&cfg, 5).unwrap();
        let s64: ParameterStore<f64> = build_model(&cfg, 5).unwrap();
        let w32 = s32.get("proj.w").unwrap();
        let w64 = s64.get("proj.w").unwrap();
        for (&a, &b) in w32.data().iter().zip(w64.data()) {
            assert_eq!(a, b as f32);
        }
    }

    #[test]
    fn grad_buffer_applies_and_norms() {
        let cfg = small_cfg();
        let mut store: ParameterStore<f64> = build_model(&cfg, 1).unwrap();
        let mut buf = GradBuffer::new();
        buf.insert("proj.b".to_string(), vec![3.0; cfg.vocab_size]);
        store.apply_grad_buffer(&buf).unwrap();
        let expect = (9.0 * cfg.vocab_size as f64).sqrt();
        assert!((store.grad_norm() - expect).abs() < 1e-12);
        store.zero_grads();
        assert_eq!(store.grad_norm(), 0.0);
    }

    #[test]
    fn grad_buffer_shape_mismatch_is_an_error() {
        let cfg = small_cfg();
        let mut store: ParameterStore<f64> = build_model(&cfg, 1).unwrap();
        let mut buf = GradBuffer::new();
        buf.insert("proj.b".to_string(), vec![1.0; 3]);
        assert!(matches!(
            store.apply_grad_buffer(&buf),
            Err(ModelError::GradShape { .. })
        ));
    }
}
