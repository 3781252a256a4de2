//! Run configuration: TOML tree with defaults, validation, dotted-path
//! overrides, and the resolved-snapshot round trip.

use crate::env::{RandomizationConfig, TerrainMode, ACTION_DIM, OBS_DIM};
use crate::error::{Error, Result};
use crate::ppo::PpoConfig;
use crate::reward::RewardConfig;
use crate::slr::NetworkDims;
use crate::tensor::Activation;
use crate::variants::{VariantConfig, VariantKind};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvSection {
    pub num_envs: usize,
    pub horizon: usize,
    pub max_episode_steps: u32,
    pub curriculum: bool,
    /// Terrain difficulty at curriculum level 0.
    pub terrain_base_scale: f32,
    pub randomization: RandomizationConfig,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            num_envs: 256,
            horizon: 24,
            max_episode_steps: 200,
            curriculum: true,
            terrain_base_scale: 0.15,
            randomization: RandomizationConfig {
                obs_noise: 0.01,
                ..RandomizationConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworksSection {
    pub encoder_hidden: Vec<usize>,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub transition_hidden: Vec<usize>,
    pub activation: Activation,
    pub actor_full_history: bool,
}

impl Default for NetworksSection {
    fn default() -> Self {
        NetworksSection {
            encoder_hidden: vec![256, 128],
            actor_hidden: vec![512, 256, 128],
            critic_hidden: vec![512, 256, 128],
            transition_hidden: vec![256, 128],
            activation: Activation::Elu,
            actor_full_history: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlrSection {
    pub history_len: usize,
    pub latent_dim: usize,
    /// Triplet margin m.
    pub margin: f32,
}

impl Default for SlrSection {
    fn default() -> Self {
        SlrSection { history_len: 10, latent_dim: 20, margin: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub command_points: usize,
    pub command_min: f32,
    pub command_max: f32,
    pub episodes_per_command: usize,
    pub episode_steps: u32,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            command_points: 9,
            command_min: -1.0,
            command_max: 1.0,
            episodes_per_command: 2,
            episode_steps: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisSection {
    pub terrain_sequence: Vec<TerrainMode>,
    pub steps_per_terrain: usize,
    /// Steps flagged on each side of a terrain transition.
    pub boundary_window: usize,
    pub command_vx: f32,
    pub terrain_scale: f32,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            terrain_sequence: vec![
                TerrainMode::SlopeUp,
                TerrainMode::StepsDown,
                TerrainMode::Flat,
                TerrainMode::StepsUp,
            ],
            steps_per_terrain: 200,
            boundary_window: 10,
            command_vx: 0.5,
            terrain_scale: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblateSection {
    pub variants: Vec<VariantKind>,
    pub seeds: Vec<u64>,
    /// Iterations averaged for the final-window score.
    pub final_window: usize,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection {
            variants: vec![VariantKind::Slr, VariantKind::SlrWithoutLatent],
            seeds: vec![0, 1, 2],
            final_window: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub name: String,
    pub seed: u64,
    pub output_dir: String,
    pub iterations: u32,
    /// Periodic checkpoint cadence; 0 keeps only the final checkpoint.
    pub checkpoint_every: u32,
    pub variant: VariantConfig,
    pub env: EnvSection,
    pub networks: NetworksSection,
    pub ppo: PpoConfig,
    pub slr: SlrSection,
    pub reward: RewardConfig,
    pub eval: EvalSection,
    pub analysis: AnalysisSection,
    pub ablate: AblateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "run".into(),
            seed: 0,
            output_dir: "runs".into(),
            iterations: 1500,
            checkpoint_every: 200,
            variant: VariantConfig::default(),
            env: EnvSection::default(),
            networks: NetworksSection::default(),
            ppo: PpoConfig::default(),
            slr: SlrSection::default(),
            reward: RewardConfig::planar(),
            eval: EvalSection::default(),
            analysis: AnalysisSection::default(),
            ablate: AblateSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Apply `section.key=value` overrides onto the TOML tree, then reparse.
    pub fn with_overrides(&self, sets: &[String]) -> Result<Self> {
        let mut tree: toml::Value = toml::from_str(&self.to_toml())
            .map_err(|e| Error::Config(format!("internal toml error: {e}")))?;
        for spec in sets {
            let (path, raw) = spec
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set wants key=value, got `{spec}`")))?;
            let value = parse_override_value(raw.trim())?;
            let mut node = &mut tree;
            let parts: Vec<&str> = path.trim().split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                let table = node
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("`{path}` does not address a table")))?;
                if i + 1 == parts.len() {
                    table.insert(part.to_string(), value.clone());
                } else {
                    node = table
                        .entry(part.to_string())
                        .or_insert(toml::Value::Table(Default::default()));
                }
            }
        }
        let text = toml::to_string_pretty(&tree)
            .map_err(|e| Error::Config(format!("internal toml error: {e}")))?;
        Self::from_toml(&text)
    }

    /// Network shapes implied by the slr/networks/env sections.
    pub fn network_dims(&self) -> NetworkDims {
        NetworkDims {
            obs_dim: OBS_DIM,
            action_dim: ACTION_DIM,
            history_len: self.slr.history_len,
            latent_dim: self.slr.latent_dim,
            encoder_hidden: self.networks.encoder_hidden.clone(),
            actor_hidden: self.networks.actor_hidden.clone(),
            critic_hidden: self.networks.critic_hidden.clone(),
            transition_hidden: self.networks.transition_hidden.clone(),
            activation: self.networks.activation,
            actor_full_history: self.networks.actor_full_history,
        }
    }

    pub fn config_hash(&self) -> String {
        crate::tensor::checkpoint::fnv1a_hex(self.to_toml().as_bytes())
    }

    pub fn run_dir(&self) -> std::path::PathBuf {
        std::path::Path::new(&self.output_dir).join(format!("{}-{}", self.name, self.seed))
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains('/') {
            return Err(Error::Config("name must be a non-empty path-safe string".into()));
        }
        if self.env.num_envs == 0 || self.env.horizon == 0 {
            return Err(Error::Config("env.num_envs and env.horizon must be >= 1".into()));
        }
        if self.env.max_episode_steps == 0 {
            return Err(Error::Config("env.max_episode_steps must be >= 1".into()));
        }
        if self.env.terrain_base_scale < 0.0 {
            return Err(Error::Config("env.terrain_base_scale must be >= 0".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if self.slr.history_len == 0 || self.slr.latent_dim == 0 {
            return Err(Error::Config("slr.history_len and slr.latent_dim must be >= 1".into()));
        }
        if !(self.slr.margin.is_finite() && self.slr.margin >= 0.0) {
            return Err(Error::Config("slr.margin must be >= 0".into()));
        }
        if self.eval.command_points == 0 || self.eval.command_min > self.eval.command_max {
            return Err(Error::Config("eval command grid is empty or inverted".into()));
        }
        if self.analysis.terrain_sequence.is_empty() || self.analysis.steps_per_terrain == 0 {
            return Err(Error::Config("analysis sequence must be non-empty".into()));
        }
        if self.ablate.variants.is_empty() || self.ablate.seeds.is_empty() {
            return Err(Error::Config("ablate.variants and ablate.seeds must be non-empty".into()));
        }
        if self.ablate.final_window == 0 {
            return Err(Error::Config("ablate.final_window must be >= 1".into()));
        }
        self.env.randomization.validate()?;
        self.ppo.validate()?;
        self.reward.validate()?;
        Ok(())
    }
}

fn parse_override_value(raw: &str) -> Result<toml::Value> {
    // Try a full TOML value first (covers arrays, quoted strings, numbers,
    // booleans), then fall back to a bare string.
    let wrapped = format!("v = {raw}");
    if let Ok(table) = toml::from_str::<toml::Value>(&wrapped) {
        if let Some(v) = table.get("v") {
            return Ok(v.clone());
        }
    }
    Ok(toml::Value::String(raw.to_string()))
}
