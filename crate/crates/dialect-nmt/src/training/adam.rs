//! Adam with bias correction. Moments cover every parameter in the store;
//! parameters absent from a step's gradient buffer see a zero gradient, so
//! an untouched parameter with zero moments stays bitwise unchanged.

use std::collections::BTreeMap;

use crate::autodiff::{GradBuffer, Scalar, Tensor};
use crate::model::{ModelError, ParameterStore};
use crate::training::{TrainConfig, TrainError};

pub struct AdamState<T: Scalar> {
    m: BTreeMap<String, Vec<T>>,
    v: BTreeMap<String, Vec<T>>,
    /// Number of updates applied so far.
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParameterStore<T>, cfg: &TrainConfig) -> Self {
        let zeros = |store: &ParameterStore<T>| {
            store
                .iter()
                .map(|(name, t)| (name.clone(), vec![T::zero(); t.numel()]))
                .collect::<BTreeMap<_, _>>()
        };
        AdamState {
            m: zeros(store),
            v: zeros(store),
            t: 0,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update over all parameters. `grads` may cover any subset of the
    /// store; names outside the store are an error.
    pub fn update(
        &mut self,
        store: &mut ParameterStore<T>,
        grads: &GradBuffer<T>,
        lr: f64,
    ) -> Result<(), TrainError> {
        for (name, g) in grads {
            let param = store.get(name)?;
            if g.len() != param.numel() {
                return Err(TrainError::Model(ModelError::GradShape {
                    name: name.clone(),
                    param: param.numel(),
                    grad: g.len(),
                }));
            }
        }
        self.t += 1;
        let bc1 = T::from_f64(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = T::from_f64(1.0 - self.beta2.powi(self.t as i32));
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one_m_b1 = T::from_f64(1.0 - self.beta1);
        let one_m_b2 = T::from_f64(1.0 - self.beta2);
        let lr_t = T::from_f64(lr);
        let eps = T::from_f64(self.eps);
        for (name, param) in store.iter_mut() {
            let m = self.m.get_mut(name).expect("moment keys mirror the store");
            let v = self.v.get_mut(name).expect("moment keys mirror the store");
            let g_slice = grads.get(name).map(|g| g.as_slice());
            for (i, p) in param.data_mut().iter_mut().enumerate() {
                let g = g_slice.map_or(T::zero(), |s| s[i]);
                m[i] = b1 * m[i] + one_m_b1 * g;
                v[i] = b2 * v[i] + one_m_b2 * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *p = *p - lr_t * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Moment tensors under "m."/"v." prefixes, for checkpointing.
    pub fn to_tensors(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::with_capacity(2 * self.m.len());
        for (prefix, map) in [("m", &self.m), ("v", &self.v)] {
            for (name, data) in map {
                let t = Tensor::new(vec![data.len()], data.clone()).expect("flat shape");
                out.push((format!("{prefix}.{name}"), t));
            }
        }
        out
    }

    /// Rebuild from checkpointed tensors. Every store parameter must appear
    /// under both prefixes with a matching element count.
    pub fn from_tensors(
        store: &ParameterStore<T>,
        cfg: &TrainConfig,
        tensors: &[(String, Tensor<T>)],
        steps_taken: u64,
    ) -> Result<Self, TrainError> {
        let mut state = AdamState::new(store, cfg);
        state.t = steps_taken;
        let by_name: BTreeMap<&str, &Tensor<T>> =
            tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for (prefix, map) in [("m", &mut state.m), ("v", &mut state.v)] {
            for (name, slot) in map.iter_mut() {
                let key = format!("{prefix}.{name}");
                let tensor = by_name.get(key.as_str()).ok_or_else(|| {
                    TrainError::Config(format!("optimizer checkpoint is missing {key:?}"))
                })?;
                if tensor.numel() != slot.len() {
                    return Err(TrainError::Config(format!(
                        "optimizer checkpoint {key:?} has {} scalars, expected {}",
                        tensor.numel(),
                        slot.len()
                    )));
                }
                slot.copy_from_slice(tensor.data());
            }
        }
        Ok(state)
    }
}
