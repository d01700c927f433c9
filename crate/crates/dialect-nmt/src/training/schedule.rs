//! Loss-weight and learning-rate schedules as pure functions of the step.

use crate::training::TrainConfig;

/// Commonality weight at `step`. With the default start 1 / end 0 this is
/// exactly max(0, 1 - step/decay): the linear form below evaluates to
/// 1.0 - t with no rounding because (0.0 - 1.0) * t is -t exactly.
pub fn lambda_com(cfg: &TrainConfig, step: u64) -> f64 {
    let t = if cfg.lambda_decay_steps == 0 {
        1.0
    } else {
        (step as f64 / cfg.lambda_decay_steps as f64).min(1.0)
    };
    cfg.lambda_com_start + (cfg.lambda_com_end - cfg.lambda_com_start) * t
}

/// Diversity weight is constant over training.
pub fn lambda_div(cfg: &TrainConfig, _step: u64) -> f64 {
    cfg.lambda_div
}

/// Linear warmup from lr/warmup to lr over the first `warmup_steps` steps,
/// flat afterwards. Step 0 already takes a nonzero rate.
pub fn lr_at(cfg: &TrainConfig, step: u64) -> f64 {
    let warmup = cfg.warmup_steps.max(1);
    cfg.lr * (((step + 1) as f64 / warmup as f64).min(1.0))
}
