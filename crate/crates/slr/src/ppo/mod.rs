//! PPO with clipped surrogate, GAE, entropy bonus, KL-adaptive learning rate,
//! and the combined `L_ppo + alpha * L_trip` update.

pub mod buffer;
pub mod update;

pub use buffer::RolloutBuffer;
pub use update::{update, UpdateMetrics, UpdateOptions};

use serde::{Deserialize, Serialize};

/// Trainer hyperparameters; defaults are the published values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub clip_range: f32,
    pub entropy_coef: f32,
    pub gamma: f32,
    pub gae_lambda: f32,
    pub desired_kl: f32,
    pub learning_rate: f32,
    pub adam_epsilon: f32,
    /// Triplet loss coefficient alpha.
    pub triplet_coef: f32,
    pub value_coef: f32,
    pub epochs: usize,
    pub minibatches: usize,
    /// Joint gradient-norm clip; non-positive disables it.
    pub max_grad_norm: f32,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_range: 0.2,
            entropy_coef: 0.01,
            gamma: 0.99,
            gae_lambda: 0.95,
            desired_kl: 0.01,
            learning_rate: 1e-3,
            adam_epsilon: 1e-8,
            triplet_coef: 1.0,
            value_coef: 1.0,
            epochs: 5,
            minibatches: 4,
            max_grad_norm: 1.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> crate::error::Result<()> {
        let positive = [
            ("clip_range", self.clip_range),
            ("gamma", self.gamma),
            ("gae_lambda", self.gae_lambda),
            ("desired_kl", self.desired_kl),
            ("learning_rate", self.learning_rate),
            ("adam_epsilon", self.adam_epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(crate::error::Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.clip_range >= 1.0 {
            return Err(crate::error::Error::Config("clip_range must be < 1".into()));
        }
        if self.entropy_coef < 0.0 || self.triplet_coef < 0.0 || self.value_coef < 0.0 {
            return Err(crate::error::Error::Config("coefficients must be >= 0".into()));
        }
        if self.epochs == 0 || self.minibatches == 0 {
            return Err(crate::error::Error::Config("epochs/minibatches must be >= 1".into()));
        }
        Ok(())
    }
}

/// GAE over one environment's trajectory segment.
///
/// `delta_t = r_t + gamma * v_{t+1} * (1 - done_t) - v_t`,
/// `A_t = delta_t + gamma * lambda * (1 - done_t) * A_{t+1}`,
/// with `v_T` taken from `bootstrap_value`. Returns (advantages, returns).
pub fn compute_gae(
    rewards: &[f32],
    values: &[f32],
    dones: &[bool],
    bootstrap_value: f32,
    gamma: f32,
    lambda: f32,
) -> crate::error::Result<(Vec<f32>, Vec<f32>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(crate::error::Error::ShapeMismatch {
            context: "compute_gae input lengths".into(),
            expected: n,
            got: values.len().min(dones.len()),
        });
    }
    let mut advantages = vec![0.0f32; n];
    let mut next_adv = 0.0f64;
    for t in (0..n).rev() {
        let not_done = if dones[t] { 0.0f64 } else { 1.0f64 };
        let next_value = if t + 1 < n { values[t + 1] as f64 } else { bootstrap_value as f64 };
        let delta = rewards[t] as f64 + gamma as f64 * next_value * not_done - values[t] as f64;
        next_adv = delta + gamma as f64 * lambda as f64 * not_done * next_adv;
        advantages[t] = next_adv as f32;
    }
    let returns = advantages
        .iter()
        .zip(values)
        .map(|(&a, &v)| a + v)
        .collect();
    Ok((advantages, returns))
}

/// Normalize to zero mean / unit std in place (f64 accumulation).
pub fn normalize_advantages(advantages: &mut [f32]) {
    let n = advantages.len();
    if n < 2 {
        return;
    }
    let mean: f64 = advantages.iter().map(|&a| a as f64).sum::<f64>() / n as f64;
    let var: f64 = advantages
        .iter()
        .map(|&a| (a as f64 - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    let std = var.sqrt().max(1e-8);
    for a in advantages.iter_mut() {
        *a = ((*a as f64 - mean) / std) as f32;
    }
}

/// KL-driven learning-rate schedule: shrink by 1.5x when the step overshoots
/// twice the target, grow by 1.5x when it undershoots half of it. Clamped to
/// [1e-5, 1e-2].
pub fn adapt_learning_rate(kl_estimate: f32, lr: f32, desired_kl: f32) -> f32 {
    let lr = if kl_estimate > 2.0 * desired_kl {
        lr / 1.5
    } else if kl_estimate < 0.5 * desired_kl && kl_estimate > 0.0 {
        lr * 1.5
    } else {
        lr
    };
    lr.clamp(1e-5, 1e-2)
}
