//! Training hyperparameters.

use serde::{Deserialize, Serialize};

use crate::noise::NoiseConfig;
use crate::training::TrainError;

/// How back-translation targets are produced. Greedy is the only mode; the
/// enum keeps the config format stable if sampling is added later.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BtDecode {
    #[default]
    Greedy,
}

/// Weights, schedule, and loop control for unsupervised training.
///
/// The commonality weight decays linearly from `lambda_com_start` to
/// `lambda_com_end` over `lambda_decay_steps` steps and stays at the end
/// value afterwards. The diversity weight is constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_com_start: f64,
    pub lambda_com_end: f64,
    pub lambda_decay_steps: u64,
    pub lambda_div: f64,
    pub total_steps: u64,
    /// Sentences drawn per dialect per step.
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate ramps linearly over the first `warmup_steps` steps.
    pub warmup_steps: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global L2 clip applied to the merged gradient of one step.
    pub grad_clip_norm: f64,
    /// Dev BLEU is measured after steps s with (s+1) % eval_every == 0.
    pub eval_every: u64,
    /// Cap on dev sentences scored per direction at each evaluation.
    pub eval_max_sentences: Option<usize>,
    /// Stop after this many evaluations without a new best mean dev BLEU.
    pub patience: Option<u32>,
    /// Stop once mean dev BLEU reaches this value.
    pub stop_at_dev_bleu: Option<f64>,
    /// Stop before starting a step once this much wall time has elapsed.
    pub max_wallclock_s: Option<f64>,
    pub seed: u64,
    pub noise: NoiseConfig,
    pub bt_decode: BtDecode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_com_start: 1.0,
            lambda_com_end: 0.0,
            lambda_decay_steps: 10_000,
            lambda_div: 1.0,
            total_steps: 20_000,
            batch_size: 8,
            lr: 3e-4,
            warmup_steps: 200,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-8,
            grad_clip_norm: 5.0,
            eval_every: 250,
            eval_max_sentences: Some(200),
            patience: None,
            stop_at_dev_bleu: None,
            max_wallclock_s: None,
            seed: 42,
            noise: NoiseConfig::default(),
            bt_decode: BtDecode::Greedy,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |msg: String| Err(TrainError::Config(msg));
        for (name, v) in [
            ("lambda_com_start", self.lambda_com_start),
            ("lambda_com_end", self.lambda_com_end),
            ("lambda_div", self.lambda_div),
        ] {
            if !v.is_finite() || v < 0.0 {
                return err(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.lambda_decay_steps > self.total_steps {
            return err(format!(
                "lambda_decay_steps ({}) must not exceed total_steps ({})",
                self.lambda_decay_steps, self.total_steps
            ));
        }
        if self.batch_size == 0 {
            return err("batch_size must be at least 1".into());
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return err(format!("lr must be finite and > 0, got {}", self.lr));
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return err(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if !self.adam_eps.is_finite() || self.adam_eps <= 0.0 {
            return err(format!("adam_eps must be finite and > 0, got {}", self.adam_eps));
        }
        if !self.grad_clip_norm.is_finite() || self.grad_clip_norm <= 0.0 {
            return err(format!(
                "grad_clip_norm must be finite and > 0, got {}",
                self.grad_clip_norm
            ));
        }
        if self.eval_every == 0 {
            return err("eval_every must be at least 1".into());
        }
        if self.eval_max_sentences == Some(0) {
            return err("eval_max_sentences must be at least 1 when set".into());
        }
        if let Some(b) = self.stop_at_dev_bleu {
            if !b.is_finite() {
                return err(format!("stop_at_dev_bleu must be finite, got {b}"));
            }
        }
        if let Some(w) = self.max_wallclock_s {
            if !w.is_finite() || w <= 0.0 {
                return err(format!("max_wallclock_s must be finite and > 0, got {w}"));
            }
        }
        self.noise.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn bad_fields_are_rejected() {
        let decay = TrainConfig {
            lambda_decay_steps: 30_000,
            ..TrainConfig::default()
        };
        assert!(decay.validate().is_err());

        let lr = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(lr.validate().is_err());

        let beta = TrainConfig {
            adam_beta2: 1.0,
            ..TrainConfig::default()
        };
        assert!(beta.validate().is_err());

        let noise = TrainConfig {
            noise: crate::noise::NoiseConfig {
                p_drop: 1.5,
                ..Default::default()
            },
            ..TrainConfig::default()
        };
        assert!(noise.validate().is_err());
    }

    #[test]
    fn toml_round_trip_with_defaults() {
        let cfg: TrainConfig = toml::from_str("total_steps = 5\nbt_decode = \"greedy\"\n").unwrap();
        assert_eq!(cfg.total_steps, 5);
        assert_eq!(cfg.batch_size, TrainConfig::default().batch_size);
        let back: TrainConfig = toml::from_str(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<TrainConfig>("learning_rate = 0.1\n").is_err());
    }
}
