//! The twelve reward terms as pure functions of a [`RewardInputs`] record.
//!
//! Penalty terms are stored as non-negative magnitudes and their weights carry
//! the sign, so `weight * term <= 0` holds for every negatively weighted term.
//! Two published rows mix the sign into the formula instead (joint torques
//! listed as `-||tau||^2` with weight 1, joint acceleration similarly); those
//! are folded into this convention, and the torque weight defaults to -1e-4
//! rather than the contradictory positive unit weight. Set
//! `joint_torques = -1.0` to reproduce the literal table row.

use serde::{Deserialize, Serialize};

/// Everything a reward evaluation needs, in body/world frame as noted.
#[derive(Debug, Clone, Default)]
pub struct RewardInputs {
    pub v_xy: [f32; 2],
    pub v_xy_cmd: [f32; 2],
    pub v_z: f32,
    pub omega_yaw: f32,
    pub omega_yaw_cmd: f32,
    pub omega_xy: [f32; 2],
    pub torques: Vec<f32>,
    pub joint_velocities: Vec<f32>,
    pub joint_accelerations: Vec<f32>,
    pub base_height: f32,
    /// Contact-point heights above local terrain (p_z^i).
    pub foot_heights: Vec<f32>,
    /// Contact-point planar speed magnitudes (v_xy^i).
    pub foot_xy_speeds: Vec<f32>,
    pub action: Vec<f32>,
    pub prev_action: Vec<f32>,
    pub prev_prev_action: Vec<f32>,
    pub projected_gravity_xy: [f32; 2],
}

pub const TERM_NAMES: [&str; 12] = [
    "powers",
    "lin_vel_tracking",
    "ang_vel_tracking",
    "lin_vel_z",
    "ang_vel_xy",
    "joint_accel",
    "base_height",
    "joint_torques",
    "action_rate",
    "action_smoothness",
    "foot_clearance",
    "orientation",
];

/// Per-term weights plus the shaping constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub powers: f32,
    pub lin_vel_tracking: f32,
    pub ang_vel_tracking: f32,
    pub lin_vel_z: f32,
    pub ang_vel_xy: f32,
    pub joint_accel: f32,
    pub base_height: f32,
    pub joint_torques: f32,
    pub action_rate: f32,
    pub action_smoothness: f32,
    pub foot_clearance: f32,
    pub orientation: f32,
    /// Tracking shaping scale sigma.
    pub tracking_sigma: f32,
    pub base_height_target: f32,
    pub foot_clearance_target: f32,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self::table_defaults()
    }
}

impl RewardConfig {
    /// Published weight column (with the torque-sign correction noted above).
    pub fn table_defaults() -> Self {
        RewardConfig {
            powers: -2e-5,
            lin_vel_tracking: 1.0,
            ang_vel_tracking: 0.5,
            lin_vel_z: -2.0,
            ang_vel_xy: -0.05,
            joint_accel: -2.5e-7,
            base_height: -10.0,
            joint_torques: -1e-4,
            action_rate: -0.01,
            action_smoothness: -0.01,
            foot_clearance: -0.01,
            orientation: -0.2,
            tracking_sigma: 0.25,
            base_height_target: 0.05,
            foot_clearance_target: 0.0,
        }
    }

    /// Defaults for the planar rover: no swing feet, so the foot-clearance and
    /// base-height terms are disabled.
    pub fn planar() -> Self {
        RewardConfig {
            base_height: 0.0,
            foot_clearance: 0.0,
            ..Self::table_defaults()
        }
    }

    pub fn weights(&self) -> [f32; 12] {
        [
            self.powers,
            self.lin_vel_tracking,
            self.ang_vel_tracking,
            self.lin_vel_z,
            self.ang_vel_xy,
            self.joint_accel,
            self.base_height,
            self.joint_torques,
            self.action_rate,
            self.action_smoothness,
            self.foot_clearance,
            self.orientation,
        ]
    }

    pub fn validate(&self) -> crate::error::Result<()> {
        if self.weights().iter().any(|w| !w.is_finite()) || !self.tracking_sigma.is_finite() {
            return Err(crate::error::Error::Config("non-finite reward weight".into()));
        }
        if self.tracking_sigma <= 0.0 {
            return Err(crate::error::Error::Config("tracking_sigma must be > 0".into()));
        }
        Ok(())
    }
}

fn sq_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum()
}

/// Unweighted term values in [`TERM_NAMES`] order.
pub fn reward_terms(inputs: &RewardInputs, cfg: &RewardConfig) -> [f32; 12] {
    let sigma = cfg.tracking_sigma as f64;

    let powers: f64 = inputs
        .torques
        .iter()
        .zip(&inputs.joint_velocities)
        .map(|(&t, &v)| (t as f64 * v as f64).abs())
        .sum();

    let lin_err = (inputs.v_xy_cmd[0] as f64 - inputs.v_xy[0] as f64).powi(2)
        + (inputs.v_xy_cmd[1] as f64 - inputs.v_xy[1] as f64).powi(2);
    let lin_tracking = (-lin_err / sigma).exp();

    let ang_err = (inputs.omega_yaw_cmd as f64 - inputs.omega_yaw as f64).powi(2);
    let ang_tracking = (-ang_err / sigma).exp();

    let lin_vel_z = (inputs.v_z as f64).powi(2);
    let ang_vel_xy = sq_norm(&inputs.omega_xy);
    let joint_accel = sq_norm(&inputs.joint_accelerations);
    let base_height = (cfg.base_height_target as f64 - inputs.base_height as f64).powi(2);
    let joint_torques = sq_norm(&inputs.torques);

    let action_rate: f64 = inputs
        .action
        .iter()
        .zip(&inputs.prev_action)
        .map(|(&a, &p)| (a as f64 - p as f64).powi(2))
        .sum();

    let action_smoothness: f64 = inputs
        .action
        .iter()
        .zip(inputs.prev_action.iter().zip(&inputs.prev_prev_action))
        .map(|(&a, (&p, &pp))| (a as f64 - 2.0 * p as f64 + pp as f64).powi(2))
        .sum();

    let foot_clearance: f64 = inputs
        .foot_heights
        .iter()
        .zip(&inputs.foot_xy_speeds)
        .map(|(&p, &v)| (cfg.foot_clearance_target as f64 - p as f64).powi(2) * v as f64)
        .sum();

    let orientation = sq_norm(&inputs.projected_gravity_xy);

    [
        powers as f32,
        lin_tracking as f32,
        ang_tracking as f32,
        lin_vel_z as f32,
        ang_vel_xy as f32,
        joint_accel as f32,
        base_height as f32,
        joint_torques as f32,
        action_rate as f32,
        action_smoothness as f32,
        foot_clearance as f32,
        orientation as f32,
    ]
}

/// Weighted total plus the unweighted per-term breakdown.
pub fn compute_reward(inputs: &RewardInputs, cfg: &RewardConfig) -> (f32, [f32; 12]) {
    let terms = reward_terms(inputs, cfg);
    let weights = cfg.weights();
    let total: f64 = terms
        .iter()
        .zip(&weights)
        .map(|(&t, &w)| t as f64 * w as f64)
        .sum();
    (total as f32, terms)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_inputs() -> RewardInputs {
        RewardInputs {
            torques: vec![0.0; 2],
            joint_velocities: vec![0.0; 2],
            joint_accelerations: vec![0.0; 2],
            foot_heights: vec![0.0; 2],
            foot_xy_speeds: vec![0.0; 2],
            action: vec![0.0; 2],
            prev_action: vec![0.0; 2],
            prev_prev_action: vec![0.0; 2],
            ..Default::default()
        }
    }

    fn term(terms: &[f32; 12], name: &str) -> f32 {
        terms[TERM_NAMES.iter().position(|&n| n == name).unwrap()]
    }

    #[test]
    fn perfect_tracking_scores_one() {
        let mut inp = base_inputs();
        inp.v_xy = [0.7, 0.0];
        inp.v_xy_cmd = [0.7, 0.0];
        let (_, terms) = compute_reward(&inp, &RewardConfig::table_defaults());
        assert_eq!(term(&terms, "lin_vel_tracking"), 1.0);
        assert_eq!(term(&terms, "ang_vel_tracking"), 1.0);
    }

    #[test]
    fn quarter_error_with_quarter_sigma_gives_inverse_e() {
        let mut inp = base_inputs();
        inp.v_xy_cmd = [0.5, 0.0]; // squared error 0.25
        let cfg = RewardConfig::table_defaults();
        assert_eq!(cfg.tracking_sigma, 0.25);
        let (_, terms) = compute_reward(&inp, &cfg);
        let got = term(&terms, "lin_vel_tracking");
        assert!(
            (got - (-1.0f32).exp()).abs() < 1e-6,
            "want e^-1 ~= 0.367879, got {got}"
        );
    }

    #[test]
    fn constant_action_zeroes_rate_and_smoothness() {
        let mut inp = base_inputs();
        inp.action = vec![0.3, -0.4];
        inp.prev_action = vec![0.3, -0.4];
        inp.prev_prev_action = vec![0.3, -0.4];
        let (_, terms) = compute_reward(&inp, &RewardConfig::table_defaults());
        assert_eq!(term(&terms, "action_rate"), 0.0);
        assert_eq!(term(&terms, "action_smoothness"), 0.0);
    }

    #[test]
    fn identity_state_gives_zero_penalties_and_unit_tracking() {
        let mut inp = base_inputs();
        let cfg = RewardConfig::table_defaults();
        inp.base_height = cfg.base_height_target;
        let (_, terms) = compute_reward(&inp, &cfg);
        for (name, value) in TERM_NAMES.iter().zip(&terms) {
            match *name {
                "lin_vel_tracking" | "ang_vel_tracking" => assert_eq!(*value, 1.0, "{name}"),
                _ => assert_eq!(*value, 0.0, "{name}"),
            }
        }
    }

    #[test]
    fn weighted_penalties_are_nonpositive() {
        let mut inp = base_inputs();
        inp.v_z = -0.8;
        inp.omega_xy = [0.3, -0.1];
        inp.torques = vec![5.0, -3.0];
        inp.joint_velocities = vec![10.0, -20.0];
        inp.joint_accelerations = vec![100.0, -50.0];
        inp.action = vec![1.0, -1.0];
        inp.base_height = 0.2;
        inp.projected_gravity_xy = [0.2, 0.0];
        inp.foot_heights = vec![0.1, 0.2];
        inp.foot_xy_speeds = vec![0.5, 0.5];
        let cfg = RewardConfig::table_defaults();
        let (_, terms) = compute_reward(&inp, &cfg);
        for ((&w, &t), name) in cfg.weights().iter().zip(&terms).zip(&TERM_NAMES) {
            if w < 0.0 {
                assert!(w * t <= 0.0, "term {name}: w={w} t={t}");
            }
            assert!(t >= 0.0 || name == &"lin_vel_tracking", "term {name} negative: {t}");
        }
        assert!(term(&terms, "powers") >= 0.0);
    }

    #[test]
    fn tracking_terms_stay_in_unit_interval() {
        let mut inp = base_inputs();
        inp.v_xy = [2.0, 0.0];
        inp.v_xy_cmd = [-2.0, 0.0];
        let (_, terms) = compute_reward(&inp, &RewardConfig::table_defaults());
        let t = term(&terms, "lin_vel_tracking");
        assert!(t > 0.0 && t <= 1.0);
    }

    #[test]
    fn total_is_f64_accumulated_and_order_insensitive() {
        let mut inp = base_inputs();
        inp.v_xy = [0.4, 0.0];
        inp.v_xy_cmd = [-0.2, 0.0];
        inp.torques = vec![3.0, -1.0];
        inp.joint_velocities = vec![8.0, 2.0];
        inp.action = vec![0.5, 0.5];
        let cfg = RewardConfig::table_defaults();
        let (total, terms) = compute_reward(&inp, &cfg);
        let forward: f64 = terms
            .iter()
            .zip(&cfg.weights())
            .map(|(&t, &w)| t as f64 * w as f64)
            .sum();
        let reversed: f64 = terms
            .iter()
            .zip(&cfg.weights())
            .rev()
            .map(|(&t, &w)| t as f64 * w as f64)
            .sum();
        assert!((forward - reversed).abs() < 1e-12);
        assert_eq!(total, forward as f32);
    }

    #[test]
    fn planar_preset_disables_foot_terms() {
        let cfg = RewardConfig::planar();
        assert_eq!(cfg.base_height, 0.0);
        assert_eq!(cfg.foot_clearance, 0.0);
        assert_eq!(cfg.lin_vel_tracking, 1.0);
        assert_eq!(cfg.ang_vel_tracking, 0.5);
    }
}
