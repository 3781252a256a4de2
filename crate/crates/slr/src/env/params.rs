//! Per-episode randomized physics parameters and the privileged channel.

use super::terrain::TerrainMode;
use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Inclusive uniform sampling range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f32,
    pub max: f32,
}

impl Range {
    pub fn new(min: f32, max: f32) -> Self {
        Range { min, max }
    }

    pub fn point(v: f32) -> Self {
        Range { min: v, max: v }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f32 {
        if self.min == self.max {
            self.min
        } else {
            rng.gen_range(self.min..=self.max)
        }
    }

    pub fn contains(&self, v: f32) -> bool {
        v >= self.min && v <= self.max
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) || self.min > self.max {
            return Err(Error::Config(format!(
                "invalid range for {name}: [{}, {}]",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

/// Randomization ranges, resampled once per episode reset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomizationConfig {
    pub friction: Range,
    pub restitution: Range,
    pub body_mass_scale: Range,
    pub payload_mass: Range,
    pub motor_strength_scale: Range,
    pub kp_scale: Range,
    pub kd_scale: Range,
    pub action_delay_steps: (u32, u32),
    pub external_force: Range,
    pub initial_joint_scale: Range,
    pub enabled_terrains: Vec<TerrainMode>,
    /// Current terrain difficulty (driven by the curriculum).
    pub terrain_scale: f32,
    /// Uniform observation noise half-width; zero disables noise.
    pub obs_noise: f32,
    pub command_vx: Range,
    pub command_omega: Range,
}

impl Default for RandomizationConfig {
    fn default() -> Self {
        RandomizationConfig {
            friction: Range::new(0.2, 2.75),
            restitution: Range::new(0.0, 1.0),
            body_mass_scale: Range::new(0.8, 1.2),
            payload_mass: Range::new(-1.0, 3.0),
            motor_strength_scale: Range::new(0.8, 1.2),
            kp_scale: Range::new(0.8, 1.2),
            kd_scale: Range::new(0.8, 1.2),
            action_delay_steps: (0, 3),
            external_force: Range::new(-30.0, 30.0),
            initial_joint_scale: Range::new(0.5, 1.5),
            enabled_terrains: TerrainMode::ALL.to_vec(),
            terrain_scale: 0.15,
            obs_noise: 0.0,
            command_vx: Range::new(-1.0, 1.0),
            command_omega: Range::new(-0.5, 0.5),
        }
    }
}

impl RandomizationConfig {
    /// All ranges collapsed to nominal values, flat terrain only.
    pub fn disabled() -> Self {
        RandomizationConfig {
            friction: Range::point(1.0),
            restitution: Range::point(0.0),
            body_mass_scale: Range::point(1.0),
            payload_mass: Range::point(0.0),
            motor_strength_scale: Range::point(1.0),
            kp_scale: Range::point(1.0),
            kd_scale: Range::point(1.0),
            action_delay_steps: (0, 0),
            external_force: Range::point(0.0),
            initial_joint_scale: Range::point(1.0),
            enabled_terrains: vec![TerrainMode::Flat],
            terrain_scale: 0.0,
            obs_noise: 0.0,
            command_vx: Range::point(0.0),
            command_omega: Range::point(0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.friction.validate("friction")?;
        self.restitution.validate("restitution")?;
        self.body_mass_scale.validate("body_mass_scale")?;
        self.payload_mass.validate("payload_mass")?;
        self.motor_strength_scale.validate("motor_strength_scale")?;
        self.kp_scale.validate("kp_scale")?;
        self.kd_scale.validate("kd_scale")?;
        self.external_force.validate("external_force")?;
        self.initial_joint_scale.validate("initial_joint_scale")?;
        self.command_vx.validate("command_vx")?;
        self.command_omega.validate("command_omega")?;
        if self.action_delay_steps.0 > self.action_delay_steps.1 {
            return Err(Error::Config("action_delay_steps min > max".into()));
        }
        if self.enabled_terrains.is_empty() {
            return Err(Error::EmptyTerrainSet);
        }
        if self.terrain_scale < 0.0 {
            return Err(Error::Config("terrain_scale must be >= 0".into()));
        }
        Ok(())
    }
}

/// Hidden physics of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvParams {
    pub friction: f32,
    pub restitution: f32,
    pub body_mass_scale: f32,
    pub payload_mass: f32,
    pub motor_strength_scale: f32,
    pub kp_scale: f32,
    pub kd_scale: f32,
    pub action_delay_steps: u32,
    pub external_force: [f32; 2],
    pub terrain_mode: TerrainMode,
    pub terrain_scale: f32,
}

/// Draw one episode's parameters. Deterministic given the RNG state.
pub fn sample_env_params<R: Rng>(rng: &mut R, ranges: &RandomizationConfig) -> Result<EnvParams> {
    ranges.validate()?;
    let terrain_mode = ranges.enabled_terrains[rng.gen_range(0..ranges.enabled_terrains.len())];
    let (d_lo, d_hi) = ranges.action_delay_steps;
    Ok(EnvParams {
        friction: ranges.friction.sample(rng),
        restitution: ranges.restitution.sample(rng),
        body_mass_scale: ranges.body_mass_scale.sample(rng),
        payload_mass: ranges.payload_mass.sample(rng),
        motor_strength_scale: ranges.motor_strength_scale.sample(rng),
        kp_scale: ranges.kp_scale.sample(rng),
        kd_scale: ranges.kd_scale.sample(rng),
        action_delay_steps: if d_lo == d_hi { d_lo } else { rng.gen_range(d_lo..=d_hi) },
        external_force: [ranges.external_force.sample(rng), ranges.external_force.sample(rng)],
        terrain_mode,
        terrain_scale: ranges.terrain_scale,
    })
}

pub const PRIVILEGED_DIM: usize = 10;

/// The 10-dim privileged slice: simulator-only quantities for the ablation
/// variants, never part of the observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivilegedVector(pub [f32; PRIVILEGED_DIM]);

impl PrivilegedVector {
    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}
