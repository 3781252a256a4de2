//! The per-iteration optimization: re-encode stored histories, assemble
//! `L_ppo + alpha * L_trip` (plus the explicit-estimator MSE where wired) on
//! one tape, backprop, and take one Adam step per network. The buffer is
//! consumed and emptied at the end — transitions are never reused.

use super::buffer::RolloutBuffer;
use super::{adapt_learning_rate, compute_gae, normalize_advantages, PpoConfig};
use crate::error::{Error, Result};
use crate::slr::{gaussian, triplet::triplet_loss_node};
use crate::tensor::{clip_grad_norm, AdamState, FlatAdam, Gradients, NodeId, Tape, TapeParams};
use crate::variants::{explicit_estimator_loss_node, AgentWiring};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Assembly knobs that are not hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct UpdateOptions {
    /// Triplet margin m.
    pub margin: f32,
    /// Weight on the explicit-estimator MSE.
    pub estimator_coef: f32,
    /// Build the triplet subgraph even when alpha == 0. The zero-coefficient
    /// route must match the skipped route bitwise; tests rely on this switch.
    pub assemble_zero_triplet: bool,
}

impl Default for UpdateOptions {
    fn default() -> Self {
        UpdateOptions { margin: 1.0, estimator_coef: 1.0, assemble_zero_triplet: false }
    }
}

/// One Adam state per network present in the wiring.
#[derive(Debug, Clone)]
pub struct OptimStates {
    pub encoder: Option<AdamState>,
    pub transition: Option<AdamState>,
    pub teacher: Option<AdamState>,
    pub estimator: Option<AdamState>,
    pub actor: AdamState,
    pub critic: AdamState,
    pub log_std: FlatAdam,
}

impl OptimStates {
    pub fn new(agent: &AgentWiring, epsilon: f32) -> Self {
        OptimStates {
            encoder: agent.encoder.as_ref().map(|p| AdamState::new(p, epsilon)),
            transition: agent.transition.as_ref().map(|p| AdamState::new(p, epsilon)),
            teacher: agent.teacher.as_ref().map(|p| AdamState::new(p, epsilon)),
            estimator: agent.estimator.as_ref().map(|p| AdamState::new(p, epsilon)),
            actor: AdamState::new(&agent.actor, epsilon),
            critic: AdamState::new(&agent.critic, epsilon),
            log_std: FlatAdam::new(agent.log_std.len(), epsilon),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.actor.step_count
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UpdateMetrics {
    pub mean_reward: f32,
    pub surrogate: f32,
    pub value_loss: f32,
    pub triplet_loss: f32,
    pub estimator_loss: f32,
    pub entropy: f32,
    pub kl: f32,
    pub lr: f32,
    pub grad_norm: f32,
}

pub(crate) struct MinibatchRows {
    pub idx: Vec<usize>,
    /// Positions within `idx` usable as triplet anchors (done never crossed).
    pub anchors_local: Vec<usize>,
    /// One negative buffer row per anchor.
    pub negatives: Vec<usize>,
}

pub(crate) struct Handles {
    pub encoder: Option<TapeParams>,
    pub transition: Option<TapeParams>,
    pub teacher: Option<TapeParams>,
    pub estimator: Option<TapeParams>,
    pub actor: TapeParams,
    pub critic: TapeParams,
    pub log_std: NodeId,
    pub mean: NodeId,
}

pub(crate) struct Assembled {
    pub tape: Tape,
    pub loss: NodeId,
    pub handles: Handles,
    pub policy_loss: f32,
    pub value_loss: f32,
    pub triplet: f32,
    pub estimator: f32,
    pub entropy: f32,
}

fn gather_rows(src: &[f32], width: usize, rows: &[usize]) -> Vec<f32> {
    let mut out = vec![0.0f32; rows.len() * width];
    for (r, &i) in rows.iter().enumerate() {
        out[r * width..(r + 1) * width].copy_from_slice(&src[i * width..(i + 1) * width]);
    }
    out
}

pub(crate) fn assemble_minibatch(
    agent: &AgentWiring,
    buffer: &RolloutBuffer,
    rows: &MinibatchRows,
    advantages: &[f32],
    returns: &[f32],
    cfg: &PpoConfig,
    opts: &UpdateOptions,
    include_ppo: bool,
) -> Result<Assembled> {
    let k = rows.idx.len();
    let dims = &agent.dims;
    let obs = gather_rows(&buffer.obs, buffer.obs_dim, &rows.idx);
    let hist = gather_rows(&buffer.hist, buffer.hist_dim, &rows.idx);
    let privileged = gather_rows(&buffer.privileged, crate::env::PRIVILEGED_DIM, &rows.idx);
    let actions = gather_rows(&buffer.actions, buffer.action_dim, &rows.idx);
    let adv: Vec<f32> = rows.idx.iter().map(|&i| advantages[i]).collect();
    let ret: Vec<f32> = rows.idx.iter().map(|&i| returns[i]).collect();
    let old_lp: Vec<f32> = rows.idx.iter().map(|&i| buffer.log_probs[i]).collect();

    let mut tape = Tape::new();
    let encoder = agent.encoder.as_ref().map(|p| tape.register(p));
    let transition = agent.transition.as_ref().map(|p| tape.register(p));
    let teacher = agent.teacher.as_ref().map(|p| tape.register(p));
    let estimator = agent.estimator.as_ref().map(|p| tape.register(p));
    let actor = tape.register(&agent.actor);
    let critic = tape.register(&agent.critic);
    let log_std = tape.param(&agent.log_std, 1, agent.log_std.len());

    let obs_node = tape.input(&obs, k, buffer.obs_dim);
    let hist_node = tape.input(&hist, k, buffer.hist_dim);
    let priv_node = tape.input(&privileged, k, crate::env::PRIVILEGED_DIM);
    let actions_node = tape.input(&actions, k, buffer.action_dim);

    let z = match &encoder {
        Some(enc) => Some(enc.forward(&mut tape, hist_node)?),
        None => None,
    };
    let e_hat = match &estimator {
        Some(est) => Some(est.forward(&mut tape, hist_node)?),
        None => None,
    };
    let l_teacher = match &teacher {
        Some(t) => Some(t.forward(&mut tape, priv_node)?),
        None => None,
    };

    // Policy input: obs ++ sg(z) ++ sg(e_hat) ++ l. Critic input differs only
    // in taking z unstopped.
    let base = if dims.actor_full_history { hist_node } else { obs_node };
    let mut actor_parts = vec![base];
    let mut critic_parts = vec![base];
    if let Some(z) = z {
        let z_sg = tape.stop_gradient(z);
        actor_parts.push(z_sg);
        critic_parts.push(z);
    }
    if let Some(e_hat) = e_hat {
        let e_sg = tape.stop_gradient(e_hat);
        actor_parts.push(e_sg);
        critic_parts.push(e_sg);
    }
    if let Some(l) = l_teacher {
        actor_parts.push(l);
        critic_parts.push(l);
    }
    let actor_in = if actor_parts.len() > 1 { tape.concat(&actor_parts) } else { actor_parts[0] };
    let critic_in = if critic_parts.len() > 1 { tape.concat(&critic_parts) } else { critic_parts[0] };

    let mean = actor.forward(&mut tape, actor_in)?;
    let values = critic.forward(&mut tape, critic_in)?;

    let mut loss: Option<NodeId> = None;
    let mut policy_loss_value = 0.0;
    let mut value_loss_value = 0.0;
    let mut entropy_value = 0.0;
    if include_ppo {
        let adv_node = tape.input(&adv, k, 1);
        let ret_node = tape.input(&ret, k, 1);
        let old_lp_node = tape.input(&old_lp, k, 1);

        let log_probs = gaussian::log_prob_node(&mut tape, mean, log_std, actions_node);
        let lp_diff = tape.sub(log_probs, old_lp_node);
        let ratio = tape.exp(lp_diff);
        let surr1 = tape.mul(ratio, adv_node);
        let clipped = tape.clamp(ratio, 1.0 - cfg.clip_range, 1.0 + cfg.clip_range);
        let surr2 = tape.mul(clipped, adv_node);
        let mins = tape.min_pair(surr1, surr2);
        let mean_min = tape.mean(mins);
        let policy_loss = tape.scale(mean_min, -1.0);

        let v_err = tape.sub(values, ret_node);
        let v_sq = tape.square(v_err);
        let value_loss = tape.mean(v_sq);

        let entropy = gaussian::entropy_node(&mut tape, log_std);

        let v_scaled = tape.scale(value_loss, cfg.value_coef);
        let pv = tape.add(policy_loss, v_scaled);
        let ent_scaled = tape.scale(entropy, -cfg.entropy_coef);
        let ppo_loss = tape.add(pv, ent_scaled);
        policy_loss_value = tape.scalar(policy_loss);
        value_loss_value = tape.scalar(value_loss);
        entropy_value = tape.scalar(entropy);
        loss = Some(ppo_loss);
    }

    // Triplet: anchor z_{t+1}, positive mu(z_t, a_t), sampled negative.
    let mut triplet_value = 0.0;
    let alpha = cfg.triplet_coef;
    let want_triplet = (alpha != 0.0 || opts.assemble_zero_triplet)
        && encoder.is_some()
        && transition.is_some()
        && !rows.anchors_local.is_empty();
    if want_triplet {
        let enc = encoder.as_ref().unwrap();
        let trans = transition.as_ref().unwrap();
        let anchor_rows: Vec<usize> = rows.anchors_local.iter().map(|&l| rows.idx[l]).collect();
        let hist_next = gather_rows(&buffer.hist_next, buffer.hist_dim, &anchor_rows);
        let neg_hist = gather_rows(&buffer.hist, buffer.hist_dim, &rows.negatives);
        let hist_next_node = tape.input(&hist_next, anchor_rows.len(), buffer.hist_dim);
        let neg_node = tape.input(&neg_hist, rows.negatives.len(), buffer.hist_dim);

        let z_all = z.expect("triplet requires the encoder latent");
        let z_t = tape.gather(z_all, &rows.anchors_local);
        let a_t = tape.gather(actions_node, &rows.anchors_local);
        let z_anchor = enc.forward(&mut tape, hist_next_node)?;
        let trans_in = tape.concat(&[z_t, a_t]);
        let z_pos = trans.forward(&mut tape, trans_in)?;
        let z_neg = enc.forward(&mut tape, neg_node)?;
        let l_trip = triplet_loss_node(&mut tape, z_anchor, z_pos, z_neg, opts.margin);
        triplet_value = tape.scalar(l_trip);
        let scaled = tape.scale(l_trip, alpha);
        loss = Some(match loss {
            Some(l) => tape.add(l, scaled),
            None => scaled,
        });
    }

    let mut estimator_value = 0.0;
    if let Some(e_hat) = e_hat {
        let l_est = explicit_estimator_loss_node(&mut tape, e_hat, priv_node);
        estimator_value = tape.scalar(l_est);
        let scaled = tape.scale(l_est, opts.estimator_coef);
        loss = Some(match loss {
            Some(l) => tape.add(l, scaled),
            None => scaled,
        });
    }

    let loss = loss.ok_or_else(|| Error::Config("minibatch assembled no loss terms".into()))?;
    Ok(Assembled {
        tape,
        loss,
        handles: Handles {
            encoder,
            transition,
            teacher,
            estimator,
            actor,
            critic,
            log_std,
            mean,
        },
        policy_loss: policy_loss_value,
        value_loss: value_loss_value,
        triplet: triplet_value,
        estimator: estimator_value,
        entropy: entropy_value,
    })
}

/// Run the full epoch/minibatch optimization over one filled buffer.
/// Adapts `lr` in place from the per-minibatch KL estimate; empties the
/// buffer before returning.
pub fn update<R: Rng>(
    agent: &mut AgentWiring,
    opt: &mut OptimStates,
    buffer: &mut RolloutBuffer,
    cfg: &PpoConfig,
    opts: &UpdateOptions,
    lr: &mut f32,
    rng: &mut R,
) -> Result<UpdateMetrics> {
    cfg.validate()?;
    if !buffer.is_full() {
        return Err(Error::Config(format!(
            "update requires a full buffer ({} of {})",
            buffer.fill_count(),
            buffer.capacity()
        )));
    }
    if buffer.old_log_std.len() != agent.log_std.len() {
        return Err(Error::Config("buffer.old_log_std not set for this iteration".into()));
    }

    // Dedicated streams: negative sampling must not perturb the shuffles.
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(rng.gen());
    let mut negative_rng = ChaCha8Rng::seed_from_u64(rng.gen());

    let n = buffer.capacity();
    let horizon = buffer.horizon;
    let mut advantages = vec![0.0f32; n];
    let mut returns = vec![0.0f32; n];
    for e in 0..buffer.num_envs {
        let s = e * horizon;
        let (a, r) = compute_gae(
            &buffer.rewards[s..s + horizon],
            &buffer.values[s..s + horizon],
            &buffer.dones[s..s + horizon],
            buffer.bootstrap_values[e],
            cfg.gamma,
            cfg.gae_lambda,
        )?;
        advantages[s..s + horizon].copy_from_slice(&a);
        returns[s..s + horizon].copy_from_slice(&r);
    }
    normalize_advantages(&mut advantages);

    let mean_reward =
        (buffer.rewards.iter().map(|&r| r as f64).sum::<f64>() / n as f64) as f32;

    let mut metric_sums = UpdateMetrics::default();
    let mut updates = 0usize;
    let chunk = n.div_ceil(cfg.minibatches);

    for _epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for mb in order.chunks(chunk) {
            let mut anchors_local = Vec::new();
            let mut negatives = Vec::new();
            let triplet_active = (cfg.triplet_coef != 0.0 || opts.assemble_zero_triplet)
                && agent.encoder.is_some()
                && agent.transition.is_some();
            if triplet_active {
                for (local, &i) in mb.iter().enumerate() {
                    if !buffer.dones[i] {
                        let env = i / horizon;
                        let step = i % horizon;
                        let (ne, nt) = buffer.sample_negative(env, step, &mut negative_rng)?;
                        anchors_local.push(local);
                        negatives.push(ne * horizon + nt);
                    }
                }
            }
            let rows = MinibatchRows { idx: mb.to_vec(), anchors_local, negatives };
            let mut asm =
                assemble_minibatch(agent, buffer, &rows, &advantages, &returns, cfg, opts, true)?;

            let loss_value = asm.tape.scalar(asm.loss);
            if !loss_value.is_finite() {
                return Err(Error::NumericAbort(format!(
                    "non-finite loss (policy {}, value {}, triplet {})",
                    asm.policy_loss, asm.value_loss, asm.triplet
                )));
            }

            // KL against the rollout-time distribution drives the lr schedule.
            let old_means = gather_rows(&buffer.means, buffer.action_dim, &rows.idx);
            let kl = gaussian::mean_kl(
                &old_means,
                &buffer.old_log_std,
                asm.tape.value(asm.handles.mean),
                &agent.log_std,
                rows.idx.len(),
            ) as f32;
            *lr = adapt_learning_rate(kl, *lr, cfg.desired_kl);

            asm.tape.backward(asm.loss)?;

            let mut g_encoder = asm.handles.encoder.as_ref().map(|h| h.gradients(&asm.tape));
            let mut g_transition = asm.handles.transition.as_ref().map(|h| h.gradients(&asm.tape));
            let mut g_teacher = asm.handles.teacher.as_ref().map(|h| h.gradients(&asm.tape));
            let mut g_estimator = asm.handles.estimator.as_ref().map(|h| h.gradients(&asm.tape));
            let mut g_actor = asm.handles.actor.gradients(&asm.tape);
            let mut g_critic = asm.handles.critic.gradients(&asm.tape);
            let mut g_log_std = Gradients {
                layers: vec![(asm.tape.grad_or_zeros(asm.handles.log_std), Vec::new())],
            };

            let mut all: Vec<&mut Gradients> = Vec::new();
            for g in [&mut g_encoder, &mut g_transition, &mut g_teacher, &mut g_estimator] {
                if let Some(g) = g.as_mut() {
                    all.push(g);
                }
            }
            all.push(&mut g_actor);
            all.push(&mut g_critic);
            all.push(&mut g_log_std);
            let pre_norm = if cfg.max_grad_norm > 0.0 {
                clip_grad_norm(&mut all, cfg.max_grad_norm)
            } else {
                all.iter().map(|g| g.sq_norm()).sum::<f64>().sqrt() as f32
            };

            if let (Some(p), Some(s), Some(g)) =
                (agent.encoder.as_mut(), opt.encoder.as_mut(), g_encoder.as_ref())
            {
                s.step(p, g, *lr, "encoder")?;
            }
            if let (Some(p), Some(s), Some(g)) =
                (agent.transition.as_mut(), opt.transition.as_mut(), g_transition.as_ref())
            {
                s.step(p, g, *lr, "transition")?;
            }
            if let (Some(p), Some(s), Some(g)) =
                (agent.teacher.as_mut(), opt.teacher.as_mut(), g_teacher.as_ref())
            {
                s.step(p, g, *lr, "teacher")?;
            }
            if let (Some(p), Some(s), Some(g)) =
                (agent.estimator.as_mut(), opt.estimator.as_mut(), g_estimator.as_ref())
            {
                s.step(p, g, *lr, "estimator")?;
            }
            opt.actor.step(&mut agent.actor, &g_actor, *lr, "actor")?;
            opt.critic.step(&mut agent.critic, &g_critic, *lr, "critic")?;
            opt.log_std.step(&mut agent.log_std, &g_log_std.layers[0].0, *lr, "log_std")?;

            metric_sums.surrogate += asm.policy_loss;
            metric_sums.value_loss += asm.value_loss;
            metric_sums.triplet_loss += asm.triplet;
            metric_sums.estimator_loss += asm.estimator;
            metric_sums.entropy += asm.entropy;
            metric_sums.kl += kl;
            metric_sums.grad_norm += pre_norm;
            updates += 1;
        }
    }

    buffer.clear();

    let inv = 1.0 / updates.max(1) as f32;
    Ok(UpdateMetrics {
        mean_reward,
        surrogate: metric_sums.surrogate * inv,
        value_loss: metric_sums.value_loss * inv,
        triplet_loss: metric_sums.triplet_loss * inv,
        estimator_loss: metric_sums.estimator_loss * inv,
        entropy: metric_sums.entropy * inv,
        kl: metric_sums.kl * inv,
        lr: *lr,
        grad_norm: metric_sums.grad_norm * inv,
    })
}
