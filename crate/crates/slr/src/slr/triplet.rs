//! Triplet hinge on latent distances:
//! max(||anchor - positive||^2 - ||anchor - negative||^2 + m, 0).

use crate::error::{Error, Result};
use crate::tensor::{NodeId, Tape};

/// Scalar reference form for a single triple.
pub fn triplet_loss(anchor: &[f32], positive: &[f32], negative: &[f32], margin: f32) -> Result<f32> {
    if anchor.len() != positive.len() || anchor.len() != negative.len() {
        return Err(Error::ShapeMismatch {
            context: "triplet_loss latent lengths".into(),
            expected: anchor.len(),
            got: positive.len().max(negative.len()),
        });
    }
    let d_pos: f64 = anchor
        .iter()
        .zip(positive)
        .map(|(&a, &p)| (a as f64 - p as f64).powi(2))
        .sum();
    let d_neg: f64 = anchor
        .iter()
        .zip(negative)
        .map(|(&a, &n)| (a as f64 - n as f64).powi(2))
        .sum();
    Ok((d_pos - d_neg + margin as f64).max(0.0) as f32)
}

/// Batched tape form: rows are triples, result is the mean hinge (scalar node).
/// The subgradient at an exactly-zero hinge is zero.
pub fn triplet_loss_node(
    tape: &mut Tape,
    anchor: NodeId,
    positive: NodeId,
    negative: NodeId,
    margin: f32,
) -> NodeId {
    let dp = tape.sub(anchor, positive);
    let dp2 = tape.square(dp);
    let d_pos = tape.row_sum(dp2);
    let dn = tape.sub(anchor, negative);
    let dn2 = tape.square(dn);
    let d_neg = tape.row_sum(dn2);
    let diff = tape.sub(d_pos, d_neg);
    let shifted = tape.add_const(diff, margin);
    let hinge = tape.max_const(shifted, 0.0);
    tape.mean(hinge)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_negative_inside_margin_gives_zero() {
        // max(0 - 4 + 1, 0) = 0
        let l = triplet_loss(&[0.0, 0.0], &[0.0, 0.0], &[2.0, 0.0], 1.0).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn coincident_positive_and_negative_costs_the_margin() {
        // max(1 - 1 + 1, 0) = 1
        let l = triplet_loss(&[0.0, 0.0], &[1.0, 0.0], &[1.0, 0.0], 1.0).unwrap();
        assert_eq!(l, 1.0);
    }

    #[test]
    fn far_positive_near_negative_gives_two() {
        // max(2 - 1 + 1, 0) = 2
        let l = triplet_loss(&[0.0, 0.0], &[1.0, 1.0], &[1.0, 0.0], 1.0).unwrap();
        assert_eq!(l, 2.0);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        assert!(triplet_loss(&[0.0], &[0.0, 1.0], &[0.0], 1.0).is_err());
    }

    #[test]
    fn node_form_matches_scalar_form_per_row() {
        let anchors = [0.0f32, 0.0, 0.0, 0.0, 0.0, 0.0];
        let positives = [0.0f32, 0.0, 1.0, 0.0, 1.0, 1.0];
        let negatives = [2.0f32, 0.0, 1.0, 0.0, 1.0, 0.0];
        let mut tape = Tape::new();
        let a = tape.input(&anchors, 3, 2);
        let p = tape.input(&positives, 3, 2);
        let n = tape.input(&negatives, 3, 2);
        let loss = triplet_loss_node(&mut tape, a, p, n, 1.0);
        let want = (0.0 + 1.0 + 2.0) / 3.0;
        assert!((tape.scalar(loss) - want).abs() < 1e-6);
    }

    #[test]
    fn active_hinge_gradient_matches_finite_differences() {
        let anchor = [0.2f32, -0.4, 0.9];
        let positive = [1.0f32, 0.3, 0.5];
        let negative = [0.6f32, -0.2, 1.0];
        let margin = 1.0;
        // active: d_pos - d_neg + m > 0 here
        let base = triplet_loss(&anchor, &positive, &negative, margin).unwrap();
        assert!(base > 0.0);

        let mut tape = Tape::new();
        let a = tape.param(&anchor, 1, 3);
        let p = tape.param(&positive, 1, 3);
        let n = tape.param(&negative, 1, 3);
        let loss = triplet_loss_node(&mut tape, a, p, n, margin);
        tape.backward(loss).unwrap();

        let h = 1e-3f32;
        let check = |id, vals: &[f32], which: usize| {
            let grad = tape.grad(id).unwrap().to_vec();
            for i in 0..3 {
                let mut up = vals.to_vec();
                up[i] += h;
                let mut dn = vals.to_vec();
                dn[i] -= h;
                let (fa, fp, fn_) = match which {
                    0 => (up.as_slice(), &positive[..], &negative[..]),
                    1 => (&anchor[..], up.as_slice(), &negative[..]),
                    _ => (&anchor[..], &positive[..], up.as_slice()),
                };
                let f_up = triplet_loss(fa, fp, fn_, margin).unwrap();
                let (fa, fp, fn_) = match which {
                    0 => (dn.as_slice(), &positive[..], &negative[..]),
                    1 => (&anchor[..], dn.as_slice(), &negative[..]),
                    _ => (&anchor[..], &positive[..], dn.as_slice()),
                };
                let f_dn = triplet_loss(fa, fp, fn_, margin).unwrap();
                let fd = (f_up - f_dn) / (2.0 * h);
                let rel = ((grad[i] - fd) / fd.abs().max(1e-4)).abs();
                assert!(rel < 1e-3, "which={which} i={i}: ad={} fd={fd}", grad[i]);
            }
        };
        check(a, &anchor, 0);
        check(p, &positive, 1);
        check(n, &negative, 2);
    }

    #[test]
    fn loss_is_nonnegative_and_zero_when_negative_is_far() {
        for k in 0..20 {
            let spread = k as f32 * 0.3;
            let l = triplet_loss(&[0.0, 0.0], &[0.5, 0.0], &[spread, 0.0], 1.0).unwrap();
            assert!(l >= 0.0);
            // zero whenever ||a-n||^2 >= ||a-p||^2 + m
            if spread * spread >= 0.25 + 1.0 {
                assert_eq!(l, 0.0, "spread {spread}");
            }
        }
    }
}
