//! Ablation wirings: which latent feeds the policy, and which losses train it.
//!
//! Per-latent gradient rules are kept uniform across combinations:
//! - the self-learned latent `z` is stop-gradiented into the actor and flows
//!   into the critic (and through the transition/triplet path),
//! - the implicit teacher latent `l = psi(e_t)` flows into both actor and
//!   critic (trained end-to-end by the surrogate and value losses),
//! - the explicit estimate `e_hat = phi_est(o^H_t)` is stop-gradiented
//!   everywhere and trained only by its supervised MSE against `e_t`.

use crate::env::PRIVILEGED_DIM;
use crate::error::{Error, Result};
use crate::slr::NetworkDims;
use crate::tensor::{NodeId, ParamSet, Tape};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    Slr,
    Implicit,
    Explicit,
    SlrWithExplicit,
    SlrWithImplicit,
    SlrWithoutLatent,
    Baseline,
}

impl VariantKind {
    pub const ALL: [VariantKind; 7] = [
        VariantKind::Slr,
        VariantKind::Implicit,
        VariantKind::Explicit,
        VariantKind::SlrWithExplicit,
        VariantKind::SlrWithImplicit,
        VariantKind::SlrWithoutLatent,
        VariantKind::Baseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::Slr => "slr",
            VariantKind::Implicit => "implicit",
            VariantKind::Explicit => "explicit",
            VariantKind::SlrWithExplicit => "slr_with_explicit",
            VariantKind::SlrWithImplicit => "slr_with_implicit",
            VariantKind::SlrWithoutLatent => "slr_without_latent",
            VariantKind::Baseline => "baseline",
        }
    }

    pub fn uses_encoder(self) -> bool {
        matches!(
            self,
            VariantKind::Slr | VariantKind::SlrWithExplicit | VariantKind::SlrWithImplicit
        )
    }

    pub fn uses_teacher(self) -> bool {
        matches!(self, VariantKind::Implicit | VariantKind::SlrWithImplicit)
    }

    pub fn uses_estimator(self) -> bool {
        matches!(self, VariantKind::Explicit | VariantKind::SlrWithExplicit)
    }
}

impl std::str::FromStr for VariantKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        VariantKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown variant `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VariantConfig {
    pub kind: VariantKind,
    pub privileged_dim: usize,
    /// Teacher encoder hidden sizes and output width (implicit variants).
    pub teacher_hidden: [usize; 2],
    pub teacher_latent_dim: usize,
}

impl Default for VariantConfig {
    fn default() -> Self {
        VariantConfig {
            kind: VariantKind::Slr,
            privileged_dim: PRIVILEGED_DIM,
            teacher_hidden: [64, 32],
            teacher_latent_dim: 8,
        }
    }
}

/// The network set for one variant. Absent networks are genuinely absent, not
/// zero-sized placeholders.
#[derive(Debug, Clone)]
pub struct AgentWiring {
    pub kind: VariantKind,
    pub dims: NetworkDims,
    pub variant: VariantConfig,
    pub encoder: Option<ParamSet>,
    pub transition: Option<ParamSet>,
    pub teacher: Option<ParamSet>,
    pub estimator: Option<ParamSet>,
    pub actor: ParamSet,
    pub critic: ParamSet,
    pub log_std: Vec<f32>,
}

/// Width of the latent block appended to the policy observation.
pub fn latent_width(kind: VariantKind, dims: &NetworkDims, variant: &VariantConfig) -> usize {
    let mut w = 0;
    if kind.uses_encoder() {
        w += dims.latent_dim;
    }
    if kind.uses_estimator() {
        w += variant.privileged_dim;
    }
    if kind.uses_teacher() {
        w += variant.teacher_latent_dim;
    }
    w
}

/// Construct the networks and loss wiring for one ablation kind.
pub fn build_variant<R: Rng>(
    variant: &VariantConfig,
    dims: &NetworkDims,
    rng: &mut R,
) -> Result<AgentWiring> {
    if variant.privileged_dim != PRIVILEGED_DIM {
        return Err(Error::Config(format!(
            "privileged_dim must be {PRIVILEGED_DIM}, got {}",
            variant.privileged_dim
        )));
    }
    let kind = variant.kind;
    let mk = |input: usize, hidden: &[usize], output: usize, gain: f32, rng: &mut R| {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        ParamSet::init(&sizes, dims.activation, gain, rng)
    };

    let encoder = kind
        .uses_encoder()
        .then(|| mk(dims.hist_dim(), &dims.encoder_hidden, dims.latent_dim, 1.0, rng));
    let transition = kind.uses_encoder().then(|| {
        mk(
            dims.latent_dim + dims.action_dim,
            &dims.transition_hidden,
            dims.latent_dim,
            1.0,
            rng,
        )
    });
    let teacher = kind.uses_teacher().then(|| {
        mk(
            variant.privileged_dim,
            &variant.teacher_hidden,
            variant.teacher_latent_dim,
            1.0,
            rng,
        )
    });
    // The explicit estimator reuses the encoder shape with a 10-dim output.
    let estimator = kind
        .uses_estimator()
        .then(|| mk(dims.hist_dim(), &dims.encoder_hidden, variant.privileged_dim, 1.0, rng));

    let policy_in = dims.policy_obs_dim() + latent_width(kind, dims, variant);
    let actor = mk(policy_in, &dims.actor_hidden, dims.action_dim, 0.01, rng);
    let critic = mk(policy_in, &dims.critic_hidden, 1, 1.0, rng);

    Ok(AgentWiring {
        kind,
        dims: dims.clone(),
        variant: *variant,
        encoder,
        transition,
        teacher,
        estimator,
        actor,
        critic,
        log_std: vec![0.0; dims.action_dim],
    })
}

impl AgentWiring {
    pub fn policy_input_dim(&self) -> usize {
        self.actor.input_dim()
    }

    /// Assemble the policy input for a batch without a tape (rollout path).
    /// Order: observation, then z, then e_hat, then l.
    pub fn policy_input_batch(
        &self,
        obs: &[f32],
        hist: &[f32],
        privileged: &[f32],
        rows: usize,
    ) -> Result<Vec<f32>> {
        let mut parts: Vec<Vec<f32>> = Vec::new();
        let mut widths: Vec<usize> = Vec::new();
        let base = if self.dims.actor_full_history { hist } else { obs };
        let base_w = if self.dims.actor_full_history {
            self.dims.hist_dim()
        } else {
            self.dims.obs_dim
        };
        parts.push(base.to_vec());
        widths.push(base_w);
        if let Some(enc) = &self.encoder {
            parts.push(enc.forward_batch(hist, rows)?);
            widths.push(self.dims.latent_dim);
        }
        if let Some(est) = &self.estimator {
            parts.push(est.forward_batch(hist, rows)?);
            widths.push(self.variant.privileged_dim);
        }
        if let Some(teach) = &self.teacher {
            parts.push(teach.forward_batch(privileged, rows)?);
            widths.push(self.variant.teacher_latent_dim);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0f32; rows * total];
        for r in 0..rows {
            let mut off = 0;
            for (part, &w) in parts.iter().zip(&widths) {
                out[r * total + off..r * total + off + w].copy_from_slice(&part[r * w..(r + 1) * w]);
                off += w;
            }
        }
        Ok(out)
    }
}

/// Supervised loss of the explicit estimator: mean squared error against the
/// privileged vector.
pub fn explicit_estimator_loss(estimate: &[f32], target: &[f32]) -> Result<f32> {
    if estimate.len() != target.len() || estimate.is_empty() {
        return Err(Error::ShapeMismatch {
            context: "explicit_estimator_loss lengths".into(),
            expected: target.len(),
            got: estimate.len(),
        });
    }
    let acc: f64 = estimate
        .iter()
        .zip(target)
        .map(|(&e, &t)| (e as f64 - t as f64).powi(2))
        .sum();
    Ok((acc / estimate.len() as f64) as f32)
}

/// Tape form over a batch: mean over all entries of (e_hat - e)^2.
pub fn explicit_estimator_loss_node(tape: &mut Tape, estimate: NodeId, target: NodeId) -> NodeId {
    let d = tape.sub(estimate, target);
    let sq = tape.square(d);
    tape.mean(sq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> NetworkDims {
        NetworkDims {
            obs_dim: 11,
            action_dim: 2,
            history_len: 10,
            latent_dim: 20,
            encoder_hidden: vec![32],
            actor_hidden: vec![32],
            critic_hidden: vec![32],
            transition_hidden: vec![16],
            ..NetworkDims::default()
        }
    }

    fn build(kind: VariantKind) -> AgentWiring {
        let variant = VariantConfig { kind, ..VariantConfig::default() };
        build_variant(&variant, &dims(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn no_latent_variant_has_no_encoder() {
        let w = build(VariantKind::SlrWithoutLatent);
        assert!(w.encoder.is_none());
        assert!(w.transition.is_none());
        assert!(w.teacher.is_none());
        assert!(w.estimator.is_none());
        assert_eq!(w.policy_input_dim(), 11);
    }

    #[test]
    fn explicit_policy_input_is_obs_plus_ten() {
        let w = build(VariantKind::Explicit);
        assert_eq!(w.policy_input_dim(), 11 + 10);
        assert!(w.estimator.is_some());
        assert!(w.encoder.is_none());
    }

    #[test]
    fn slr_with_implicit_concatenates_both_latents() {
        let w = build(VariantKind::SlrWithImplicit);
        assert_eq!(w.policy_input_dim(), 11 + 20 + 8);
        assert!(w.encoder.is_some());
        assert!(w.teacher.is_some());
    }

    #[test]
    fn slr_with_explicit_concatenates_estimate() {
        let w = build(VariantKind::SlrWithExplicit);
        assert_eq!(w.policy_input_dim(), 11 + 20 + 10);
    }

    #[test]
    fn baseline_is_plain_ppo_on_obs() {
        let w = build(VariantKind::Baseline);
        assert!(w.encoder.is_none() && w.teacher.is_none() && w.estimator.is_none());
        assert_eq!(w.policy_input_dim(), 11);
    }

    #[test]
    fn estimator_mse_trivial_cases() {
        let e = vec![0.5f32; 10];
        assert_eq!(explicit_estimator_loss(&e, &e).unwrap(), 0.0);
        let shifted: Vec<f32> = e.iter().map(|v| v + 1.0).collect();
        assert!((explicit_estimator_loss(&shifted, &e).unwrap() - 1.0).abs() < 1e-7);
        assert!(explicit_estimator_loss(&e, &e[..5]).is_err());
    }

    #[test]
    fn estimator_mse_matches_scalar_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        use rand::Rng;
        let a: Vec<f32> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b: Vec<f32> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut oracle = 0.0f64;
        for i in 0..10 {
            let d = a[i] as f64 - b[i] as f64;
            oracle += d * d;
        }
        oracle /= 10.0;
        let got = explicit_estimator_loss(&a, &b).unwrap();
        // both routes accumulate in f64 left-to-right; compare after the
        // shared f32 rounding of the result
        let oracle32 = oracle as f32;
        let rel = ((got as f64 - oracle32 as f64) / (oracle32 as f64).abs().max(1e-12)).abs();
        assert!(rel < 1e-9, "got {got} oracle {oracle32} rel {rel}");
    }

    #[test]
    fn rollout_input_assembly_matches_widths() {
        let w = build(VariantKind::SlrWithImplicit);
        let rows = 3;
        let obs = vec![0.1f32; rows * 11];
        let hist = vec![0.2f32; rows * 110];
        let privileged = vec![0.3f32; rows * 10];
        let input = w.policy_input_batch(&obs, &hist, &privileged, rows).unwrap();
        assert_eq!(input.len(), rows * w.policy_input_dim());
        // observation block is copied verbatim
        assert_eq!(&input[0..11], &obs[0..11]);
    }
}
