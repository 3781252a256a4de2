//! Piecewise terrain heightfields and the terrain-level curriculum.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerrainMode {
    Flat,
    SlopeUp,
    SlopeDown,
    StepsUp,
    StepsDown,
}

impl TerrainMode {
    pub const ALL: [TerrainMode; 5] = [
        TerrainMode::Flat,
        TerrainMode::SlopeUp,
        TerrainMode::SlopeDown,
        TerrainMode::StepsUp,
        TerrainMode::StepsDown,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TerrainMode::Flat => "flat",
            TerrainMode::SlopeUp => "slope_up",
            TerrainMode::SlopeDown => "slope_down",
            TerrainMode::StepsUp => "steps_up",
            TerrainMode::StepsDown => "steps_down",
        }
    }
}

impl std::str::FromStr for TerrainMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TerrainMode::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown terrain mode `{s}`"))
    }
}

/// Step geometry: each run is `run_length` long and rises `scale * rise` per step.
pub const STEP_RISE: f32 = 0.3;
pub const STEP_RUN: f32 = 0.6;

/// Terrain height at horizontal position `x`.
///
/// Flat is zero everywhere; slopes are `±scale·x`; stair modes rise or fall
/// by `scale·rise` every `run` meters.
pub fn terrain_height(x: f32, mode: TerrainMode, scale: f32) -> f32 {
    terrain_height_with(x, mode, scale, STEP_RISE, STEP_RUN)
}

pub fn terrain_height_with(x: f32, mode: TerrainMode, scale: f32, rise: f32, run: f32) -> f32 {
    match mode {
        TerrainMode::Flat => 0.0,
        TerrainMode::SlopeUp => scale * x,
        TerrainMode::SlopeDown => -scale * x,
        TerrainMode::StepsUp => (x / run).floor() * scale * rise,
        TerrainMode::StepsDown => -(x / run).floor() * scale * rise,
    }
}

/// Threshold curriculum: promote when the mean normalized tracking reward
/// clears 0.8, demote below 0.4 (floored at level 0).
pub fn update_terrain_level(tracking_reward_mean: f32, level: u32) -> u32 {
    if tracking_reward_mean > 0.8 {
        level + 1
    } else if tracking_reward_mean < 0.4 {
        level.saturating_sub(1)
    } else {
        level
    }
}

/// Difficulty multiplier applied to the configured base scale.
pub fn terrain_scale_for_level(base: f32, level: u32) -> f32 {
    base * (1.0 + 0.5 * level as f32)
}
