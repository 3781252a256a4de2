//! Planar-rover POMDP: randomized hidden dynamics, terrain modes, and the
//! privileged channel used only by the ablation variants.

pub mod params;
pub mod rover;
pub mod terrain;

pub use params::{
    sample_env_params, EnvParams, PrivilegedVector, RandomizationConfig, Range, PRIVILEGED_DIM,
};
pub use rover::{
    EnvState, ObservationFrame, RoverEnv, StepOutcome, ACTION_DIM, DT, OBS_DIM,
};
pub use terrain::{terrain_height, terrain_scale_for_level, update_terrain_level, TerrainMode};

use crate::error::Result;

/// N fully independent environments, each with RNG stream `base_seed + index`.
pub struct VecEnv {
    pub envs: Vec<RoverEnv>,
}

impl VecEnv {
    pub fn new(cfg: RandomizationConfig, base_seed: u64, num_envs: usize, max_steps: u32) -> Result<Self> {
        let envs = (0..num_envs)
            .map(|i| RoverEnv::new(cfg.clone(), base_seed + i as u64, max_steps))
            .collect::<Result<Vec<_>>>()?;
        Ok(VecEnv { envs })
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    /// Update the curriculum difficulty used for future episode resets.
    pub fn set_terrain_scale(&mut self, scale: f32) {
        for env in &mut self.envs {
            env.cfg.terrain_scale = scale;
        }
    }

    pub fn reset_all(&mut self) -> Vec<(ObservationFrame, PrivilegedVector)> {
        self.envs.iter_mut().map(|e| e.reset()).collect()
    }

    /// Step every environment; `done` environments auto-reset and report the
    /// fresh observation alongside the done flag.
    pub fn step_all(&mut self, actions: &[[f32; 2]]) -> Result<Vec<StepOutcome>> {
        assert_eq!(actions.len(), self.envs.len());
        self.envs
            .iter_mut()
            .zip(actions)
            .map(|(env, &a)| {
                let mut out = env.step(a)?;
                if out.done {
                    let (obs, privileged) = env.reset();
                    out.obs = obs;
                    out.privileged = privileged;
                }
                Ok(out)
            })
            .collect()
    }
}
