//! Training orchestration: vectorized rollout collection, the optimization
//! call, terrain curriculum, metrics CSV, checkpoints, and evaluation.

use crate::config::RunConfig;
use crate::env::{terrain_scale_for_level, update_terrain_level, RoverEnv, TerrainMode, VecEnv};
use crate::error::{Error, Result};
use crate::ppo::update::OptimStates;
use crate::ppo::{update, RolloutBuffer, UpdateMetrics, UpdateOptions};
use crate::reward::{compute_reward, TERM_NAMES};
use crate::slr::{gaussian, ObservationHistory};
use crate::tensor::checkpoint::CheckpointBundle;
use crate::variants::{build_variant, AgentWiring};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub struct Trainer {
    pub config: RunConfig,
    pub agent: AgentWiring,
    pub opt: OptimStates,
    pub vec_env: VecEnv,
    pub buffer: RolloutBuffer,
    pub lr: f32,
    pub terrain_level: u32,
    histories: Vec<ObservationHistory>,
    current_obs: Vec<[f32; crate::env::OBS_DIM]>,
    current_priv: Vec<Vec<f32>>,
    rng: ChaCha8Rng,
    // episode bookkeeping
    episode_lengths: Vec<u32>,
    finished_lengths: Vec<u32>,
}

#[derive(Debug, Clone, Default)]
pub struct IterationMetrics {
    pub iter: u32,
    pub update: UpdateMetrics,
    pub mean_ep_len: f32,
    pub terrain_level: u32,
    pub reward_terms: [f32; 12],
    /// Mean of the normalized linear-tracking term; drives the curriculum.
    pub tracking_mean: f32,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub name: String,
    pub seed: u64,
    pub variant: String,
    pub config_hash: String,
    pub iterations_completed: u32,
    pub wall_clock_seconds: f64,
    pub aborted: bool,
    pub final_checkpoint: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub run_dir: PathBuf,
    pub iterations_completed: u32,
    pub final_window_mean_reward: f32,
    pub manifest: RunManifest,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let dims = config.network_dims();
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let agent = build_variant(&config.variant, &dims, &mut init_rng)?;
        let opt = OptimStates::new(&agent, config.ppo.adam_epsilon);

        let mut rand_cfg = config.env.randomization.clone();
        rand_cfg.terrain_scale = terrain_scale_for_level(config.env.terrain_base_scale, 0);
        let mut vec_env = VecEnv::new(
            rand_cfg,
            config.seed.wrapping_mul(0x9e3779b9).wrapping_add(1),
            config.env.num_envs,
            config.env.max_episode_steps,
        )?;

        let n = config.env.num_envs;
        let mut histories = vec![ObservationHistory::new(dims.history_len, dims.obs_dim); n];
        let mut current_obs = vec![[0.0f32; crate::env::OBS_DIM]; n];
        let mut current_priv = vec![vec![0.0f32; crate::env::PRIVILEGED_DIM]; n];
        for (e, (obs, privileged)) in vec_env.reset_all().into_iter().enumerate() {
            let frame = obs.to_array();
            histories[e].push(&frame);
            current_obs[e] = frame;
            current_priv[e] = privileged.as_slice().to_vec();
        }

        let buffer = RolloutBuffer::new(
            n,
            config.env.horizon,
            dims.obs_dim,
            dims.hist_dim(),
            dims.action_dim,
        );
        let lr = config.ppo.learning_rate;
        let rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x2545f491).wrapping_add(7));
        Ok(Trainer {
            config,
            agent,
            opt,
            vec_env,
            buffer,
            lr,
            terrain_level: 0,
            histories,
            current_obs,
            current_priv,
            rng,
            episode_lengths: vec![0; n],
            finished_lengths: Vec::new(),
        })
    }

    fn stack_inputs(&self) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
        let n = self.vec_env.len();
        let obs_dim = crate::env::OBS_DIM;
        let hist_dim = self.histories[0].dim();
        let mut obs = vec![0.0f32; n * obs_dim];
        let mut hist = vec![0.0f32; n * hist_dim];
        let mut privileged = vec![0.0f32; n * crate::env::PRIVILEGED_DIM];
        for e in 0..n {
            obs[e * obs_dim..(e + 1) * obs_dim].copy_from_slice(&self.current_obs[e]);
            hist[e * hist_dim..(e + 1) * hist_dim].copy_from_slice(self.histories[e].as_slice());
            privileged[e * crate::env::PRIVILEGED_DIM..(e + 1) * crate::env::PRIVILEGED_DIM]
                .copy_from_slice(&self.current_priv[e]);
        }
        (obs, hist, privileged)
    }

    /// Batched policy heads without a tape.
    fn forward_policy(&self, obs: &[f32], hist: &[f32], privileged: &[f32]) -> Result<(Vec<f32>, Vec<f32>)> {
        let n = self.vec_env.len();
        let input = self.agent.policy_input_batch(obs, hist, privileged, n)?;
        let means = self.agent.actor.forward_batch(&input, n)?;
        let values = self.agent.critic.forward_batch(&input, n)?;
        Ok((means, values))
    }

    /// Fill the rollout buffer with one horizon of experience.
    /// Returns (per-term reward means, tracking-term mean).
    fn collect_rollout(&mut self) -> Result<([f32; 12], f32)> {
        let n = self.vec_env.len();
        let act_dim = crate::env::ACTION_DIM;
        let horizon = self.config.env.horizon;
        let mut term_sums = [0.0f64; 12];

        for t in 0..horizon {
            let (obs, hist, privileged) = self.stack_inputs();
            let (means, values) = self.forward_policy(&obs, &hist, &privileged)?;

            let mut actions = vec![[0.0f32; 2]; n];
            let mut log_probs = vec![0.0f32; n];
            for e in 0..n {
                let mean = &means[e * act_dim..(e + 1) * act_dim];
                let a = gaussian::sample(mean, &self.agent.log_std, &mut self.rng);
                log_probs[e] = gaussian::log_prob(mean, &self.agent.log_std, &a);
                actions[e] = [a[0], a[1]];
            }

            let outcomes = self.vec_env.step_all(&actions)?;
            for (e, out) in outcomes.into_iter().enumerate() {
                let (reward, terms) = compute_reward(&out.reward_inputs, &self.config.reward);
                for (s, &v) in term_sums.iter_mut().zip(&terms) {
                    *s += v as f64;
                }
                self.episode_lengths[e] += 1;
                if out.done {
                    self.finished_lengths.push(self.episode_lengths[e]);
                    self.episode_lengths[e] = 0;
                    self.histories[e].reset();
                }
                let frame = out.obs.to_array();
                self.histories[e].push(&frame);
                self.buffer.push_row(
                    e,
                    t,
                    &obs[e * crate::env::OBS_DIM..(e + 1) * crate::env::OBS_DIM],
                    &hist[e * self.histories[e].dim()..(e + 1) * self.histories[e].dim()],
                    self.histories[e].as_slice(),
                    &actions[e],
                    reward,
                    out.done,
                    log_probs[e],
                    values[e],
                    &means[e * act_dim..(e + 1) * act_dim],
                    out.privileged.as_slice(),
                );
                self.current_obs[e] = frame;
                self.current_priv[e] = out.privileged.as_slice().to_vec();
            }
        }

        // Bootstrap values for the state after the horizon.
        let (obs, hist, privileged) = self.stack_inputs();
        let (_, values) = self.forward_policy(&obs, &hist, &privileged)?;
        self.buffer.bootstrap_values.copy_from_slice(&values);
        self.buffer.old_log_std = self.agent.log_std.clone();

        let steps = (n * horizon) as f64;
        let mut term_means = [0.0f32; 12];
        for (m, s) in term_means.iter_mut().zip(&term_sums) {
            *m = (*s / steps) as f32;
        }
        let tracking_mean = term_means[1];
        Ok((term_means, tracking_mean))
    }

    pub fn train_iteration(&mut self, iter: u32) -> Result<IterationMetrics> {
        let (reward_terms, tracking_mean) = self.collect_rollout()?;
        let opts = UpdateOptions {
            margin: self.config.slr.margin,
            ..UpdateOptions::default()
        };
        let metrics = update(
            &mut self.agent,
            &mut self.opt,
            &mut self.buffer,
            &self.config.ppo,
            &opts,
            &mut self.lr,
            &mut self.rng,
        )?;

        if self.config.env.curriculum {
            let new_level = update_terrain_level(tracking_mean, self.terrain_level);
            if new_level != self.terrain_level {
                self.terrain_level = new_level;
                self.vec_env.set_terrain_scale(terrain_scale_for_level(
                    self.config.env.terrain_base_scale,
                    new_level,
                ));
            }
        }

        let mean_ep_len = if self.finished_lengths.is_empty() {
            self.config.env.max_episode_steps as f32
        } else {
            let recent = &self.finished_lengths[self.finished_lengths.len().saturating_sub(200)..];
            recent.iter().sum::<u32>() as f32 / recent.len() as f32
        };

        Ok(IterationMetrics {
            iter,
            update: metrics,
            mean_ep_len,
            terrain_level: self.terrain_level,
            reward_terms,
            tracking_mean,
        })
    }

    pub fn checkpoint_bundle(&self) -> CheckpointBundle {
        let mut networks = Vec::new();
        if let Some(p) = &self.agent.encoder {
            networks.push(("encoder".to_string(), p.clone()));
        }
        if let Some(p) = &self.agent.transition {
            networks.push(("transition".to_string(), p.clone()));
        }
        if let Some(p) = &self.agent.teacher {
            networks.push(("teacher".to_string(), p.clone()));
        }
        if let Some(p) = &self.agent.estimator {
            networks.push(("estimator".to_string(), p.clone()));
        }
        networks.push(("actor".to_string(), self.agent.actor.clone()));
        networks.push(("critic".to_string(), self.agent.critic.clone()));
        CheckpointBundle {
            step_count: self.opt.step_count(),
            config_hash: self.config.config_hash(),
            networks,
            extras: vec![("log_std".to_string(), self.agent.log_std.clone())],
        }
    }

    /// Full training run with on-disk outputs:
    /// `<run_dir>/{config.toml, manifest.json, metrics.csv, checkpoints/}`.
    pub fn run(&mut self) -> Result<TrainSummary> {
        let run_dir = self.config.run_dir();
        fs::create_dir_all(run_dir.join("checkpoints"))?;
        fs::create_dir_all(run_dir.join("traces"))?;
        fs::write(run_dir.join("config.toml"), self.config.to_toml())?;

        let mut csv = std::io::BufWriter::new(fs::File::create(run_dir.join("metrics.csv"))?);
        write!(csv, "iter,mean_reward,mean_ep_len,surrogate,value_loss,triplet_loss,kl,lr,terrain_level")?;
        for name in TERM_NAMES {
            write!(csv, ",rt_{name}")?;
        }
        writeln!(csv)?;

        let start = std::time::Instant::now();
        let mut window: Vec<f32> = Vec::new();
        let mut completed = 0u32;
        let mut abort: Option<Error> = None;

        for iter in 1..=self.config.iterations {
            match self.train_iteration(iter) {
                Ok(m) => {
                    write!(
                        csv,
                        "{},{},{},{},{},{},{},{},{}",
                        m.iter,
                        m.update.mean_reward,
                        m.mean_ep_len,
                        m.update.surrogate,
                        m.update.value_loss,
                        m.update.triplet_loss,
                        m.update.kl,
                        m.update.lr,
                        m.terrain_level
                    )?;
                    for v in m.reward_terms {
                        write!(csv, ",{v}")?;
                    }
                    writeln!(csv)?;
                    window.push(m.update.mean_reward);
                    completed = iter;
                    if self.config.checkpoint_every > 0 && iter % self.config.checkpoint_every == 0 {
                        self.checkpoint_bundle()
                            .save(&run_dir.join("checkpoints").join(format!("iter_{iter:06}")))?;
                    }
                }
                Err(e) => {
                    abort = Some(e);
                    break;
                }
            }
        }
        csv.flush()?;

        let aborted = abort.is_some();
        let final_checkpoint = if aborted {
            // Keep the last periodic checkpoint as the last-good state.
            None
        } else {
            let base = run_dir.join("checkpoints").join("final");
            self.checkpoint_bundle().save(&base)?;
            Some("checkpoints/final".to_string())
        };

        let manifest = RunManifest {
            name: self.config.name.clone(),
            seed: self.config.seed,
            variant: self.agent.kind.name().to_string(),
            config_hash: self.config.config_hash(),
            iterations_completed: completed,
            wall_clock_seconds: start.elapsed().as_secs_f64(),
            aborted,
            final_checkpoint,
        };
        fs::write(
            run_dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )?;

        if let Some(e) = abort {
            return Err(e);
        }

        let w = self.config.ablate.final_window.min(window.len().max(1));
        let final_window_mean_reward =
            window[window.len() - w..].iter().sum::<f32>() / w as f32;
        Ok(TrainSummary {
            run_dir,
            iterations_completed: completed,
            final_window_mean_reward,
            manifest,
        })
    }
}

/// Rebuild an [`AgentWiring`] from a checkpoint plus its run config.
pub fn load_agent(config: &RunConfig, base: &Path) -> Result<AgentWiring> {
    let bundle = CheckpointBundle::load(base)?;
    let dims = config.network_dims();
    let mut agent = build_variant(&config.variant, &dims, &mut ChaCha8Rng::seed_from_u64(0))?;

    let mut take = |name: &str, slot: &mut Option<crate::tensor::ParamSet>| -> Result<()> {
        if slot.is_some() {
            let net = bundle
                .network(name)
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint is missing `{name}`")))?;
            let expect = slot.as_ref().unwrap().layer_sizes();
            if net.layer_sizes() != expect {
                return Err(Error::Checkpoint(format!(
                    "`{name}` sizes {:?} do not match config {:?}",
                    net.layer_sizes(),
                    expect
                )));
            }
            *slot = Some(net.clone());
        }
        Ok(())
    };
    take("encoder", &mut agent.encoder)?;
    take("transition", &mut agent.transition)?;
    take("teacher", &mut agent.teacher)?;
    take("estimator", &mut agent.estimator)?;

    let actor = bundle
        .network("actor")
        .ok_or_else(|| Error::Checkpoint("checkpoint is missing `actor`".into()))?;
    if actor.layer_sizes() != agent.actor.layer_sizes() {
        return Err(Error::Checkpoint(format!(
            "`actor` sizes {:?} do not match config {:?}",
            actor.layer_sizes(),
            agent.actor.layer_sizes()
        )));
    }
    agent.actor = actor.clone();
    let critic = bundle
        .network("critic")
        .ok_or_else(|| Error::Checkpoint("checkpoint is missing `critic`".into()))?;
    agent.critic = critic.clone();
    agent.log_std = bundle
        .extra("log_std")
        .ok_or_else(|| Error::Checkpoint("checkpoint is missing `log_std`".into()))?
        .to_vec();
    Ok(agent)
}

/// Deterministic mean-action controller over a single environment.
pub struct PolicyRunner<'a> {
    pub agent: &'a AgentWiring,
    history: ObservationHistory,
    obs: [f32; crate::env::OBS_DIM],
    privileged: Vec<f32>,
}

impl<'a> PolicyRunner<'a> {
    pub fn new(agent: &'a AgentWiring, env: &mut RoverEnv) -> Self {
        let dims = &agent.dims;
        let (obs, privileged) = env.reset();
        let frame = obs.to_array();
        let mut history = ObservationHistory::new(dims.history_len, dims.obs_dim);
        history.push(&frame);
        PolicyRunner { agent, history, obs: frame, privileged: privileged.as_slice().to_vec() }
    }

    pub fn on_reset(&mut self, env: &mut RoverEnv) {
        let (obs, privileged) = env.reset();
        let frame = obs.to_array();
        self.history.reset();
        self.history.push(&frame);
        self.obs = frame;
        self.privileged = privileged.as_slice().to_vec();
    }

    pub fn latent(&self) -> Result<Option<Vec<f32>>> {
        match &self.agent.encoder {
            Some(enc) => Ok(Some(enc.forward_vec(self.history.as_slice())?)),
            None => Ok(None),
        }
    }

    /// One deterministic step with the policy mean.
    pub fn step(&mut self, env: &mut RoverEnv) -> Result<crate::env::StepOutcome> {
        let input =
            self.agent
                .policy_input_batch(&self.obs, self.history.as_slice(), &self.privileged, 1)?;
        let mean = self.agent.actor.forward_vec(&input)?;
        let out = env.step([mean[0], mean[1]])?;
        if out.done {
            self.history.reset();
        }
        let frame = out.obs.to_array();
        self.history.push(&frame);
        self.obs = frame;
        self.privileged = out.privileged.as_slice().to_vec();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smoke_config() -> RunConfig {
        RunConfig::default()
            .with_overrides(&[
                "iterations=2".into(),
                "env.num_envs=4".into(),
                "env.horizon=6".into(),
                "env.max_episode_steps=30".into(),
                "networks.encoder_hidden=[16]".into(),
                "networks.actor_hidden=[16]".into(),
                "networks.critic_hidden=[16]".into(),
                "networks.transition_hidden=[16]".into(),
                "checkpoint_every=0".into(),
                "output_dir=\"target/test-runs\"".into(),
            ])
            .unwrap()
    }

    #[test]
    fn two_iterations_produce_outputs_and_checkpoint() {
        let mut cfg = smoke_config();
        cfg.name = "smoke".into();
        let dir = tempfile::tempdir().unwrap();
        cfg.output_dir = dir.path().to_str().unwrap().into();
        let mut t = Trainer::new(cfg).unwrap();
        let summary = t.run().unwrap();
        assert_eq!(summary.iterations_completed, 2);
        let csv = std::fs::read_to_string(summary.run_dir.join("metrics.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3, "header + 2 rows");
        assert!(lines[0].starts_with("iter,mean_reward,mean_ep_len,surrogate"));
        assert!(summary.run_dir.join("config.toml").exists());
        assert!(summary.run_dir.join("manifest.json").exists());
        assert!(summary.run_dir.join("checkpoints/final.json").exists());
        assert!(summary.run_dir.join("checkpoints/final.bin").exists());
    }

    #[test]
    fn training_is_reproducible_byte_for_byte() {
        let run = |dir: &std::path::Path| {
            let mut cfg = smoke_config();
            cfg.name = "repro".into();
            cfg.output_dir = dir.to_str().unwrap().into();
            let mut t = Trainer::new(cfg).unwrap();
            let s = t.run().unwrap();
            std::fs::read(s.run_dir.join("metrics.csv")).unwrap()
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        assert_eq!(run(d1.path()), run(d2.path()));
    }

    #[test]
    fn checkpoint_reloads_into_matching_agent() {
        let mut cfg = smoke_config();
        cfg.name = "reload".into();
        let dir = tempfile::tempdir().unwrap();
        cfg.output_dir = dir.path().to_str().unwrap().into();
        let mut t = Trainer::new(cfg.clone()).unwrap();
        let s = t.run().unwrap();
        let agent = load_agent(&cfg, &s.run_dir.join("checkpoints/final")).unwrap();
        assert_eq!(agent.log_std, t.agent.log_std);
        for (a, b) in agent.actor.layers.iter().zip(&t.agent.actor.layers) {
            assert_eq!(a.w, b.w);
        }
        // dim mismatch is caught
        let bad_cfg = cfg.with_overrides(&["slr.latent_dim=7".into()]).unwrap();
        assert!(load_agent(&bad_cfg, &s.run_dir.join("checkpoints/final")).is_err());
    }

    #[test]
    fn no_latent_variant_checkpoints_without_encoder() {
        let mut cfg = smoke_config();
        cfg.name = "nolatent".into();
        cfg = cfg.with_overrides(&["variant.kind=\"slr_without_latent\"".into()]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        cfg.output_dir = dir.path().to_str().unwrap().into();
        let mut t = Trainer::new(cfg).unwrap();
        let s = t.run().unwrap();
        let manifest: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(s.run_dir.join("checkpoints/final.json")).unwrap(),
        )
        .unwrap();
        let names: Vec<String> = manifest["networks"]
            .as_array()
            .unwrap()
            .iter()
            .map(|n| n["name"].as_str().unwrap().to_string())
            .collect();
        assert!(!names.contains(&"encoder".to_string()));
        assert!(names.contains(&"actor".to_string()));
    }
}
