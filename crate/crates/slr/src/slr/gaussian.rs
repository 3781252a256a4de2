//! Diagonal Gaussian policy head: sampling, log-probability, entropy, and the
//! analytic KL used for learning-rate adaptation.

use crate::tensor::{NodeId, Tape};
use rand::Rng;

pub const LN_2PI: f64 = 1.8378770664093453;

/// Sample one action from N(mean, exp(log_std)^2).
pub fn sample<R: Rng>(mean: &[f32], log_std: &[f32], rng: &mut R) -> Vec<f32> {
    mean.iter()
        .zip(log_std)
        .map(|(&m, &ls)| {
            let z: f64 = standard_normal(rng);
            m + (z as f32) * ls.exp()
        })
        .collect()
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Log-density of `action` under N(mean, exp(log_std)^2), accumulated in f64.
pub fn log_prob(mean: &[f32], log_std: &[f32], action: &[f32]) -> f32 {
    let d = mean.len() as f64;
    let mut acc = -0.5 * d * LN_2PI;
    for ((&m, &ls), &a) in mean.iter().zip(log_std).zip(action) {
        let z = (a as f64 - m as f64) / (ls as f64).exp();
        acc -= 0.5 * z * z + ls as f64;
    }
    acc as f32
}

/// Entropy of the diagonal Gaussian: sum(log_std) + d/2 * (1 + ln 2pi).
pub fn entropy(log_std: &[f32]) -> f32 {
    let d = log_std.len() as f64;
    (log_std.iter().map(|&v| v as f64).sum::<f64>() + 0.5 * d * (1.0 + LN_2PI)) as f32
}

/// Per-row log-probabilities on the tape: `[n,1]` node differentiable through
/// both the mean and the (state-independent) log-std row.
pub fn log_prob_node(
    tape: &mut Tape,
    mean: NodeId,
    log_std: NodeId,
    actions: NodeId,
) -> NodeId {
    let (_, d) = tape.shape(mean);
    let diff = tape.sub(actions, mean);
    let neg_log_std = tape.scale(log_std, -1.0);
    let inv_std = tape.exp(neg_log_std);
    let z = tape.mul_row(diff, inv_std);
    let z2 = tape.square(z);
    let row = tape.row_sum(z2);
    let half = tape.scale(row, -0.5);
    let ls_sum = tape.sum(log_std);
    let neg_ls = tape.scale(ls_sum, -1.0);
    let with_ls = tape.add_scalar_node(half, neg_ls);
    tape.add_const(with_ls, (-0.5 * d as f64 * LN_2PI) as f32)
}

/// Scalar entropy node (depends on log_std only).
pub fn entropy_node(tape: &mut Tape, log_std: NodeId) -> NodeId {
    let (_, d) = tape.shape(log_std);
    let s = tape.sum(log_std);
    tape.add_const(s, (0.5 * d as f64 * (1.0 + LN_2PI)) as f32)
}

/// Mean analytic KL(old || new) between diagonal Gaussians over a batch.
/// `means` are `[n, d]`, log-stds are `[d]`.
pub fn mean_kl(
    old_mean: &[f32],
    old_log_std: &[f32],
    new_mean: &[f32],
    new_log_std: &[f32],
    rows: usize,
) -> f64 {
    let d = old_log_std.len();
    if rows == 0 {
        return 0.0;
    }
    let mut acc = 0.0f64;
    for r in 0..rows {
        for c in 0..d {
            let lo = old_log_std[c] as f64;
            let ln = new_log_std[c] as f64;
            let so2 = (2.0 * lo).exp();
            let sn2 = (2.0 * ln).exp();
            let dm = old_mean[r * d + c] as f64 - new_mean[r * d + c] as f64;
            acc += ln - lo + (so2 + dm * dm) / (2.0 * sn2) - 0.5;
        }
    }
    acc / rows as f64
}
