//! Self-learned latent representation: the observation-history encoder, the
//! latent transition model, the triplet loss, and the gradient-flow wiring
//! between them.
//!
//! Wiring contract: the actor consumes `stop_gradient(z)`, so policy-loss
//! gradients never touch the encoder. The critic consumes `z` directly, and
//! the transition/triplet losses run through both the transition model and
//! the encoder. Those three paths are the only ways the encoder learns.

pub mod gaussian;
pub mod history;
pub mod triplet;

pub use history::ObservationHistory;
pub use triplet::{triplet_loss, triplet_loss_node};

use crate::error::Result;
use crate::tensor::{Activation, NodeId, ParamSet, Tape, TapeParams};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Network shape configuration; defaults follow the published architecture
/// (encoder [256,128] -> 20, actor/critic [512,256,128], transition [256,128]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkDims {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub history_len: usize,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub transition_hidden: Vec<usize>,
    pub activation: Activation,
    /// Feed the full flattened history to actor/critic instead of the current
    /// frame (the alternative wiring listed in the architecture table).
    pub actor_full_history: bool,
}

impl Default for NetworkDims {
    fn default() -> Self {
        NetworkDims {
            obs_dim: crate::env::OBS_DIM,
            action_dim: crate::env::ACTION_DIM,
            history_len: 10,
            latent_dim: 20,
            encoder_hidden: vec![256, 128],
            actor_hidden: vec![512, 256, 128],
            critic_hidden: vec![512, 256, 128],
            transition_hidden: vec![256, 128],
            activation: Activation::Elu,
            actor_full_history: false,
        }
    }
}

impl NetworkDims {
    pub fn hist_dim(&self) -> usize {
        self.history_len * self.obs_dim
    }

    /// Width of the actor/critic observation input (before any latents).
    pub fn policy_obs_dim(&self) -> usize {
        if self.actor_full_history {
            self.hist_dim()
        } else {
            self.obs_dim
        }
    }

    fn sizes(&self, input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
        let mut v = vec![input];
        v.extend_from_slice(hidden);
        v.push(output);
        v
    }
}

/// The four MLPs plus the state-independent policy log-std.
#[derive(Debug, Clone)]
pub struct SlrNetworks {
    pub encoder: ParamSet,
    pub actor: ParamSet,
    pub critic: ParamSet,
    pub transition: ParamSet,
    pub log_std: Vec<f32>,
    pub dims: NetworkDims,
}

impl SlrNetworks {
    pub fn init<R: Rng>(dims: &NetworkDims, rng: &mut R) -> Self {
        let enc_sizes = dims.sizes(dims.hist_dim(), &dims.encoder_hidden, dims.latent_dim);
        let policy_in = dims.policy_obs_dim() + dims.latent_dim;
        let actor_sizes = dims.sizes(policy_in, &dims.actor_hidden, dims.action_dim);
        let critic_sizes = dims.sizes(policy_in, &dims.critic_hidden, 1);
        let trans_sizes = dims.sizes(
            dims.latent_dim + dims.action_dim,
            &dims.transition_hidden,
            dims.latent_dim,
        );
        SlrNetworks {
            encoder: ParamSet::init(&enc_sizes, dims.activation, 1.0, rng),
            actor: ParamSet::init(&actor_sizes, dims.activation, 0.01, rng),
            critic: ParamSet::init(&critic_sizes, dims.activation, 1.0, rng),
            transition: ParamSet::init(&trans_sizes, dims.activation, 1.0, rng),
            log_std: vec![0.0; dims.action_dim],
            dims: dims.clone(),
        }
    }

    /// Latent for one history without a tape (rollout/eval path).
    pub fn encode_vec(&self, history: &[f32]) -> Result<Vec<f32>> {
        self.encoder.forward_vec(history)
    }
}

/// z = encoder(o^H). Recorded on the tape so downstream losses reach phi.
pub fn encode(tape: &mut Tape, encoder: &TapeParams, history: NodeId) -> Result<NodeId> {
    encoder.forward(tape, history)
}

/// Policy mean = actor(obs, sg[z]). The stop-gradient is what keeps the
/// surrogate loss out of the encoder.
pub fn policy_forward(
    tape: &mut Tape,
    actor: &TapeParams,
    obs: NodeId,
    latent: Option<NodeId>,
) -> Result<NodeId> {
    let input = match latent {
        Some(z) => {
            let z_sg = tape.stop_gradient(z);
            tape.concat(&[obs, z_sg])
        }
        None => obs,
    };
    actor.forward(tape, input)
}

/// v = critic(obs, z) with gradient flowing through z into the encoder.
pub fn value_forward(
    tape: &mut Tape,
    critic: &TapeParams,
    obs: NodeId,
    latent: Option<NodeId>,
) -> Result<NodeId> {
    let input = match latent {
        Some(z) => tape.concat(&[obs, z]),
        None => obs,
    };
    critic.forward(tape, input)
}

/// z~_{t+1} = transition(z_t, a_t), differentiable through mu and phi.
pub fn predict_next_latent(
    tape: &mut Tape,
    transition: &TapeParams,
    latent: NodeId,
    action: NodeId,
) -> Result<NodeId> {
    let input = tape.concat(&[latent, action]);
    transition.forward(tape, input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_dims() -> NetworkDims {
        NetworkDims {
            obs_dim: 3,
            action_dim: 2,
            history_len: 2,
            latent_dim: 4,
            encoder_hidden: vec![8],
            actor_hidden: vec![8],
            critic_hidden: vec![8],
            transition_hidden: vec![8],
            activation: Activation::Elu,
            actor_full_history: false,
        }
    }

    fn grads_all_zero(g: &Gradients) -> bool {
        g.layers
            .iter()
            .all(|(w, b)| w.iter().chain(b.iter()).all(|&v| v == 0.0))
    }

    #[test]
    fn zero_weight_encoder_outputs_its_bias() {
        let dims = tiny_dims();
        let mut nets = SlrNetworks::init(&dims, &mut ChaCha8Rng::seed_from_u64(0));
        nets.encoder = ParamSet::zeros(&[6, 8, 4], Activation::Elu);
        nets.encoder.layers[1].b = vec![0.5, -0.5, 1.0, 2.0];
        let z = nets.encode_vec(&[0.3; 6]).unwrap();
        assert_eq!(z, vec![0.5, -0.5, 1.0, 2.0]);
    }

    #[test]
    fn default_latent_is_twenty_dimensional() {
        let dims = NetworkDims::default();
        let nets = SlrNetworks::init(&dims, &mut ChaCha8Rng::seed_from_u64(1));
        let hist = vec![0.1; dims.hist_dim()];
        let z = nets.encode_vec(&hist).unwrap();
        assert_eq!(z.len(), 20);
        assert_eq!(nets.transition.output_dim(), 20);
        // identical histories -> identical latents
        assert_eq!(z, nets.encode_vec(&hist).unwrap());
    }

    #[test]
    fn actor_loss_gradient_never_reaches_the_encoder() {
        let dims = tiny_dims();
        let nets = SlrNetworks::init(&dims, &mut ChaCha8Rng::seed_from_u64(2));
        let mut tape = Tape::new();
        let enc = tape.register(&nets.encoder);
        let act = tape.register(&nets.actor);
        let hist = tape.input(&vec![0.2; 6], 1, 6);
        let obs = tape.input(&vec![0.1; 3], 1, 3);
        let z = encode(&mut tape, &enc, hist).unwrap();
        let mean = policy_forward(&mut tape, &act, obs, Some(z)).unwrap();
        let sq = tape.square(mean);
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        assert!(grads_all_zero(&enc.gradients(&tape)), "encoder must stay untouched");
        assert!(!grads_all_zero(&act.gradients(&tape)), "actor must still learn");
    }

    #[test]
    fn value_loss_gradient_reaches_the_encoder() {
        let dims = tiny_dims();
        let nets = SlrNetworks::init(&dims, &mut ChaCha8Rng::seed_from_u64(3));
        let mut tape = Tape::new();
        let enc = tape.register(&nets.encoder);
        let cri = tape.register(&nets.critic);
        let hist = tape.input(&vec![0.2; 6], 1, 6);
        let obs = tape.input(&vec![0.1; 3], 1, 3);
        let z = encode(&mut tape, &enc, hist).unwrap();
        let v = value_forward(&mut tape, &cri, obs, Some(z)).unwrap();
        let sq = tape.square(v);
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        assert!(!grads_all_zero(&enc.gradients(&tape)), "critic path must update phi");
    }

    #[test]
    fn zero_weight_actor_ignores_the_latent() {
        let dims = tiny_dims();
        let mut nets = SlrNetworks::init(&dims, &mut ChaCha8Rng::seed_from_u64(4));
        nets.actor = ParamSet::zeros(&[7, 8, 2], Activation::Elu);
        nets.actor.layers[1].b = vec![0.25, -0.75];
        for z_fill in [0.0f32, 5.0, -3.0] {
            let mut tape = Tape::new();
            let act = tape.register(&nets.actor);
            let obs = tape.input(&[0.1, 0.2, 0.3], 1, 3);
            let z = tape.input(&vec![z_fill; 4], 1, 4);
            let mean = policy_forward(&mut tape, &act, obs, Some(z)).unwrap();
            assert_eq!(tape.value(mean), &[0.25, -0.75]);
        }
    }

    #[test]
    fn value_gradient_matches_finite_differences_on_toy_obs() {
        let dims = tiny_dims();
        let nets = SlrNetworks::init(&dims, &mut ChaCha8Rng::seed_from_u64(5));
        let hist = vec![0.4f32, -0.2, 0.9, 0.0, 0.5, -0.6];
        let obs = vec![0.3f32, -0.1, 0.8];
        let target = 0.7f32;

        let value_loss = |nets: &SlrNetworks| -> f32 {
            let z = nets.encode_vec(&hist).unwrap();
            let mut input = obs.clone();
            input.extend_from_slice(&z);
            let v = nets.critic.forward_vec(&input).unwrap()[0];
            (v - target) * (v - target)
        };

        let mut tape = Tape::new();
        let enc = tape.register(&nets.encoder);
        let cri = tape.register(&nets.critic);
        let hist_n = tape.input(&hist, 1, 6);
        let obs_n = tape.input(&obs, 1, 3);
        let z = encode(&mut tape, &enc, hist_n).unwrap();
        let v = value_forward(&mut tape, &cri, obs_n, Some(z)).unwrap();
        let t = tape.input(&[target], 1, 1);
        let d = tape.sub(v, t);
        let sq = tape.square(d);
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();

        let enc_grads = enc.gradients(&tape);
        let h = 1e-2f32;
        // spot-check a handful of encoder weights against central differences
        for &(li, wi) in &[(0usize, 0usize), (0, 7), (1, 3), (1, 20)] {
            let mut up = nets.clone();
            up.encoder.layers[li].w[wi] += h;
            let mut dn = nets.clone();
            dn.encoder.layers[li].w[wi] -= h;
            let fd = (value_loss(&up) - value_loss(&dn)) / (2.0 * h);
            let ad = enc_grads.layers[li].0[wi];
            let rel = ((ad - fd) / fd.abs().max(1e-3)).abs();
            assert!(rel < 1e-2, "enc layer {li} w[{wi}]: ad={ad} fd={fd}");
        }
    }

    #[test]
    fn transition_model_passes_gradient_back_to_encoder() {
        let dims = tiny_dims();
        let nets = SlrNetworks::init(&dims, &mut ChaCha8Rng::seed_from_u64(6));
        let mut tape = Tape::new();
        let enc = tape.register(&nets.encoder);
        let trans = tape.register(&nets.transition);
        let hist = tape.input(&vec![0.3; 6], 1, 6);
        let action = tape.input(&[0.5, -0.5], 1, 2);
        let z = encode(&mut tape, &enc, hist).unwrap();
        let z_next = predict_next_latent(&mut tape, &trans, z, action).unwrap();
        assert_eq!(tape.shape(z_next), (1, 4));
        let sq = tape.square(z_next);
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        assert!(!grads_all_zero(&enc.gradients(&tape)));
        assert!(!grads_all_zero(&trans.gradients(&tape)));
    }

    #[test]
    fn zero_weight_transition_outputs_bias() {
        let mut tape = Tape::new();
        let mut trans = ParamSet::zeros(&[6, 5, 4], Activation::Elu);
        trans.layers[1].b = vec![1.0, 2.0, 3.0, 4.0];
        let tp = tape.register(&trans);
        let z = tape.input(&[9.0; 4], 1, 4);
        let a = tape.input(&[-2.0; 2], 1, 2);
        let out = predict_next_latent(&mut tape, &tp, z, a).unwrap();
        assert_eq!(tape.value(out), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn full_history_wiring_changes_policy_input_width() {
        let mut dims = tiny_dims();
        dims.actor_full_history = true;
        let nets = SlrNetworks::init(&dims, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(nets.actor.input_dim(), dims.hist_dim() + dims.latent_dim);
        assert_eq!(nets.critic.input_dim(), dims.hist_dim() + dims.latent_dim);
    }
}
