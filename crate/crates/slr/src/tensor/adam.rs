//! Adam with bias correction, plus global gradient-norm clipping.

use super::{Gradients, ParamSet};
use crate::error::{Error, Result};

/// Optimizer moments for one [`ParamSet`]; shapes mirror the parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<(Vec<f32>, Vec<f32>)>,
    pub v: Vec<(Vec<f32>, Vec<f32>)>,
    pub step_count: u64,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl AdamState {
    pub fn new(params: &ParamSet, epsilon: f32) -> Self {
        let zeros: Vec<(Vec<f32>, Vec<f32>)> = params
            .layers
            .iter()
            .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon,
        }
    }

    /// One Adam update in place. Fails fast on non-finite gradients, naming
    /// the offending parameter array.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients, lr: f32, name: &str) -> Result<()> {
        if grads.layers.len() != params.layers.len() {
            return Err(Error::ShapeMismatch {
                context: format!("{name} gradient layer count"),
                expected: params.layers.len(),
                got: grads.layers.len(),
            });
        }
        for (li, (dw, db)) in grads.layers.iter().enumerate() {
            if dw.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGrad { param: format!("{name}/layer{li}/weight") });
            }
            if db.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGrad { param: format!("{name}/layer{li}/bias") });
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - (self.beta1 as f64).powi(t);
        let bc2 = 1.0 - (self.beta2 as f64).powi(t);
        for (li, layer) in params.layers.iter_mut().enumerate() {
            let (dw, db) = &grads.layers[li];
            update_array(
                &mut layer.w,
                dw,
                &mut self.m[li].0,
                &mut self.v[li].0,
                self.beta1 as f64,
                self.beta2 as f64,
                bc1,
                bc2,
                lr as f64,
                self.epsilon as f64,
            );
            update_array(
                &mut layer.b,
                db,
                &mut self.m[li].1,
                &mut self.v[li].1,
                self.beta1 as f64,
                self.beta2 as f64,
                bc1,
                bc2,
                lr as f64,
                self.epsilon as f64,
            );
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn update_array(
    theta: &mut [f32],
    grad: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    beta1: f64,
    beta2: f64,
    bc1: f64,
    bc2: f64,
    lr: f64,
    eps: f64,
) {
    for i in 0..theta.len() {
        let g = grad[i] as f64;
        let mi = beta1 * m[i] as f64 + (1.0 - beta1) * g;
        let vi = beta2 * v[i] as f64 + (1.0 - beta2) * g * g;
        m[i] = mi as f32;
        v[i] = vi as f32;
        let m_hat = mi / bc1;
        let v_hat = vi / bc2;
        theta[i] = (theta[i] as f64 - lr * m_hat / (v_hat.sqrt() + eps)) as f32;
    }
}

/// Adam moments for a loose flat parameter array (for example the policy
/// log-std, which lives outside any MLP).
#[derive(Debug, Clone)]
pub struct FlatAdam {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub step_count: u64,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl FlatAdam {
    pub fn new(len: usize, epsilon: f32) -> Self {
        FlatAdam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon,
        }
    }

    pub fn step(&mut self, theta: &mut [f32], grads: &[f32], lr: f32, name: &str) -> Result<()> {
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGrad { param: name.to_string() });
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - (self.beta1 as f64).powi(t);
        let bc2 = 1.0 - (self.beta2 as f64).powi(t);
        update_array(
            theta,
            grads,
            &mut self.m,
            &mut self.v,
            self.beta1 as f64,
            self.beta2 as f64,
            bc1,
            bc2,
            lr as f64,
            self.epsilon as f64,
        );
        Ok(())
    }
}

/// Scale all gradient sets so the joint L2 norm does not exceed `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut [&mut Gradients], max_norm: f32) -> f32 {
    let total: f64 = grads.iter().map(|g| g.sq_norm()).sum();
    let norm = total.sqrt() as f32;
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale(k);
        }
    }
    norm
}
