//! On-policy rollout storage: filled exactly once per iteration, then
//! consumed and emptied.

use crate::env::PRIVILEGED_DIM;
use crate::error::{Error, Result};

/// Per-iteration storage across `num_envs x horizon` transitions, env-major
/// (all steps of env 0, then env 1, ...).
#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    pub num_envs: usize,
    pub horizon: usize,
    pub obs_dim: usize,
    pub hist_dim: usize,
    pub action_dim: usize,
    pub obs: Vec<f32>,
    /// Flattened history o^H_t at decision time.
    pub hist: Vec<f32>,
    /// Flattened history after the step (feeds the next-latent anchor).
    pub hist_next: Vec<f32>,
    pub actions: Vec<f32>,
    pub rewards: Vec<f32>,
    pub dones: Vec<bool>,
    pub log_probs: Vec<f32>,
    pub values: Vec<f32>,
    /// Rollout-time policy means, kept for the analytic KL estimate.
    pub means: Vec<f32>,
    /// Rollout-time log-std snapshot (one row, state-independent).
    pub old_log_std: Vec<f32>,
    pub privileged: Vec<f32>,
    pub bootstrap_values: Vec<f32>,
    filled: usize,
    /// Bumps every clear; lets tests assert the fill/consume cycle.
    pub generation: u64,
}

impl RolloutBuffer {
    pub fn new(num_envs: usize, horizon: usize, obs_dim: usize, hist_dim: usize, action_dim: usize) -> Self {
        let n = num_envs * horizon;
        RolloutBuffer {
            num_envs,
            horizon,
            obs_dim,
            hist_dim,
            action_dim,
            obs: vec![0.0; n * obs_dim],
            hist: vec![0.0; n * hist_dim],
            hist_next: vec![0.0; n * hist_dim],
            actions: vec![0.0; n * action_dim],
            rewards: vec![0.0; n],
            dones: vec![false; n],
            log_probs: vec![0.0; n],
            values: vec![0.0; n],
            means: vec![0.0; n * action_dim],
            old_log_std: Vec::new(),
            privileged: vec![0.0; n * PRIVILEGED_DIM],
            bootstrap_values: vec![0.0; num_envs],
            filled: 0,
            generation: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.num_envs * self.horizon
    }

    pub fn fill_count(&self) -> usize {
        self.filled
    }

    pub fn is_full(&self) -> bool {
        self.filled == self.capacity()
    }

    pub fn index(&self, env: usize, step: usize) -> usize {
        debug_assert!(env < self.num_envs && step < self.horizon);
        env * self.horizon + step
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push_row(
        &mut self,
        env: usize,
        step: usize,
        obs: &[f32],
        hist: &[f32],
        hist_next: &[f32],
        action: &[f32],
        reward: f32,
        done: bool,
        log_prob: f32,
        value: f32,
        mean: &[f32],
        privileged: &[f32],
    ) {
        let i = self.index(env, step);
        self.obs[i * self.obs_dim..(i + 1) * self.obs_dim].copy_from_slice(obs);
        self.hist[i * self.hist_dim..(i + 1) * self.hist_dim].copy_from_slice(hist);
        self.hist_next[i * self.hist_dim..(i + 1) * self.hist_dim].copy_from_slice(hist_next);
        self.actions[i * self.action_dim..(i + 1) * self.action_dim].copy_from_slice(action);
        self.rewards[i] = reward;
        self.dones[i] = done;
        self.log_probs[i] = log_prob;
        self.values[i] = value;
        self.means[i * self.action_dim..(i + 1) * self.action_dim].copy_from_slice(mean);
        self.privileged[i * PRIVILEGED_DIM..(i + 1) * PRIVILEGED_DIM].copy_from_slice(privileged);
        self.filled += 1;
    }

    pub fn obs_row(&self, i: usize) -> &[f32] {
        &self.obs[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn hist_row(&self, i: usize) -> &[f32] {
        &self.hist[i * self.hist_dim..(i + 1) * self.hist_dim]
    }

    pub fn hist_next_row(&self, i: usize) -> &[f32] {
        &self.hist_next[i * self.hist_dim..(i + 1) * self.hist_dim]
    }

    pub fn action_row(&self, i: usize) -> &[f32] {
        &self.actions[i * self.action_dim..(i + 1) * self.action_dim]
    }

    /// Empty the buffer for the next iteration. Contents become unreadable by
    /// contract; the generation counter records the consume cycle.
    pub fn clear(&mut self) {
        self.filled = 0;
        self.generation += 1;
    }

    /// Uniformly sample a stored `(env, step)` slot as a triplet negative,
    /// excluding the anchor's own `t+1` slot in the same environment.
    pub fn sample_negative<R: rand::Rng>(
        &self,
        anchor_env: usize,
        anchor_step: usize,
        rng: &mut R,
    ) -> Result<(usize, usize)> {
        let total = self.fill_count();
        if total < 2 {
            return Err(Error::BufferTooSmall { have: total, need: 2 });
        }
        let excluded_step = anchor_step + 1;
        loop {
            let pick = rng.gen_range(0..total);
            let env = pick / self.horizon;
            let step = pick % self.horizon;
            if env == anchor_env && step == excluded_step {
                continue;
            }
            return Ok((env, step));
        }
    }
}
