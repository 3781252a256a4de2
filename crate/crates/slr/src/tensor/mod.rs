//! Array-level numeric substrate: MLP parameter sets, reverse-mode tape,
//! Adam, and the checkpoint format.
//!
//! Everything is `f32` row-major; loss reductions accumulate in `f64`.

pub mod adam;
pub mod checkpoint;
pub mod tape;

pub use adam::{clip_grad_norm, AdamState, FlatAdam};
pub use tape::{NodeId, Tape, TapeParams};

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Hidden-layer activation. The output layer of every network is identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp() - 1.0
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed in terms of the pre-activation input.
    pub fn derivative(self, x: f32) -> f32 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Elu => "elu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }
}

/// One dense layer: weights `[out_dim x in_dim]` row-major plus bias `[out_dim]`.
#[derive(Debug, Clone)]
pub struct Layer {
    pub w: Vec<f32>,
    pub b: Vec<f32>,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// Parameters of one MLP. Hidden layers use `activation`; the final layer is identity.
#[derive(Debug, Clone)]
pub struct ParamSet {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

/// Per-layer gradient arrays with the same layout as a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<(Vec<f32>, Vec<f32>)>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Gradients {
            layers: params
                .layers
                .iter()
                .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
                .collect(),
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
            .map(|&g| g as f64 * g as f64)
            .sum()
    }

    pub fn scale(&mut self, k: f32) {
        for (w, b) in &mut self.layers {
            for g in w.iter_mut().chain(b.iter_mut()) {
                *g *= k;
            }
        }
    }
}

impl ParamSet {
    /// Build from `sizes = [in, h1, ..., out]` with zero weights and biases.
    pub fn zeros(sizes: &[usize], activation: Activation) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                w: vec![0.0; w[0] * w[1]],
                b: vec![0.0; w[1]],
                in_dim: w[0],
                out_dim: w[1],
            })
            .collect();
        ParamSet { layers, activation }
    }

    /// Orthogonal initialization: hidden layers with gain sqrt(2), the output
    /// layer with `output_gain`. Biases start at zero.
    pub fn init<R: Rng>(sizes: &[usize], activation: Activation, output_gain: f32, rng: &mut R) -> Self {
        let mut set = Self::zeros(sizes, activation);
        let n_layers = set.layers.len();
        for (i, layer) in set.layers.iter_mut().enumerate() {
            let gain = if i + 1 == n_layers { output_gain } else { std::f32::consts::SQRT_2 };
            orthogonal_init(&mut layer.w, layer.out_dim, layer.in_dim, gain, rng);
        }
        set
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map(|l| l.in_dim).unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(|l| l.out_dim));
        sizes
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Check shape chaining and entry finiteness.
    pub fn validate(&self) -> Result<()> {
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::ShapeMismatch {
                    context: format!("layer {} -> layer {}", i, i + 1),
                    expected: pair[0].out_dim,
                    got: pair[1].in_dim,
                });
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.w.len() != l.in_dim * l.out_dim || l.b.len() != l.out_dim {
                return Err(Error::ShapeMismatch {
                    context: format!("layer {i} storage"),
                    expected: l.in_dim * l.out_dim,
                    got: l.w.len(),
                });
            }
            if l.w.iter().chain(l.b.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGrad { param: format!("layer {i}") });
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    /// Forward pass for a single input vector (no tape).
    pub fn forward_vec(&self, input: &[f32]) -> Result<Vec<f32>> {
        self.forward_batch(input, 1)
    }

    /// Forward pass for `rows` stacked inputs (row-major, no tape).
    pub fn forward_batch(&self, input: &[f32], rows: usize) -> Result<Vec<f32>> {
        if rows == 0 {
            return Ok(Vec::new());
        }
        if input.len() != rows * self.input_dim() {
            return Err(Error::ShapeMismatch {
                context: "mlp_forward layer 0 input".into(),
                expected: rows * self.input_dim(),
                got: input.len(),
            });
        }
        let n_layers = self.layers.len();
        let mut x = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = vec![0.0f32; rows * layer.out_dim];
            matmul_bt(&x, &layer.w, &mut y, rows, layer.in_dim, layer.out_dim);
            for r in 0..rows {
                let row = &mut y[r * layer.out_dim..(r + 1) * layer.out_dim];
                for (v, b) in row.iter_mut().zip(&layer.b) {
                    *v += b;
                }
            }
            if i + 1 < n_layers {
                for v in &mut y {
                    *v = self.activation.apply(*v);
                }
            }
            x = y;
        }
        Ok(x)
    }
}

/// `y += x @ w^T` with `x: [rows, k]`, `w: [cols, k]`, `y: [rows, cols]`.
///
/// Backed by `matrixmultiply::sgemm`; the caller must pass a zeroed or
/// accumulable `y`.
pub(crate) fn matmul_bt(x: &[f32], w: &[f32], y: &mut [f32], rows: usize, k: usize, cols: usize) {
    debug_assert_eq!(x.len(), rows * k);
    debug_assert_eq!(w.len(), cols * k);
    debug_assert_eq!(y.len(), rows * cols);
    if rows == 0 || k == 0 || cols == 0 {
        return;
    }
    unsafe {
        // y[r,c] += sum_j x[r,j] * w[c,j]  (B strides express the transpose)
        matrixmultiply::sgemm(
            rows,
            k,
            cols,
            1.0,
            x.as_ptr(),
            k as isize,
            1,
            w.as_ptr(),
            1,
            k as isize,
            1.0,
            y.as_mut_ptr(),
            cols as isize,
            1,
        );
    }
}

/// `y += a^T @ b` with `a: [rows, m]`, `b: [rows, n]`, `y: [m, n]`.
pub(crate) fn matmul_at(a: &[f32], b: &[f32], y: &mut [f32], rows: usize, m: usize, n: usize) {
    debug_assert_eq!(a.len(), rows * m);
    debug_assert_eq!(b.len(), rows * n);
    debug_assert_eq!(y.len(), m * n);
    if rows == 0 || m == 0 || n == 0 {
        return;
    }
    unsafe {
        matrixmultiply::sgemm(
            m,
            rows,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            1.0,
            y.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `y += a @ b` with `a: [rows, k]`, `b: [k, cols]`, `y: [rows, cols]`.
pub(crate) fn matmul(a: &[f32], b: &[f32], y: &mut [f32], rows: usize, k: usize, cols: usize) {
    debug_assert_eq!(a.len(), rows * k);
    debug_assert_eq!(b.len(), k * cols);
    debug_assert_eq!(y.len(), rows * cols);
    if rows == 0 || k == 0 || cols == 0 {
        return;
    }
    unsafe {
        matrixmultiply::sgemm(
            rows,
            k,
            cols,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            cols as isize,
            1,
            1.0,
            y.as_mut_ptr(),
            cols as isize,
            1,
        );
    }
}

/// Orthogonal init of `w: [out, in]` via Gram-Schmidt on Gaussian rows, scaled by `gain`.
fn orthogonal_init<R: Rng>(w: &mut [f32], out_dim: usize, in_dim: usize, gain: f32, rng: &mut R) {
    // Orthonormalize along the shorter side; the longer side keeps Gaussian scale 1/sqrt(n).
    let mut rows: Vec<Vec<f64>> = (0..out_dim)
        .map(|_| (0..in_dim).map(|_| standard_normal(rng)).collect())
        .collect();
    let n_ortho = out_dim.min(in_dim);
    for i in 0..n_ortho {
        for j in 0..i {
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            let (left, right) = rows.split_at_mut(i);
            for (v, u) in right[0].iter_mut().zip(&left[j]) {
                *v -= dot * u;
            }
        }
        let norm: f64 = rows[i].iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for v in &mut rows[i] {
            *v /= norm;
        }
    }
    // Remaining rows (if out > in): normalized Gaussian directions.
    for row in rows.iter_mut().skip(n_ortho) {
        let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for v in row.iter_mut() {
            *v /= norm;
        }
    }
    for (r, row) in rows.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            w[r * in_dim + c] = (v * gain as f64) as f32;
        }
    }
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; two uniforms per call keeps the stream layout simple.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straight-line oracle: plain nested loops, written independently of
    /// `forward_batch`'s GEMM path.
    fn forward_oracle(params: &ParamSet, input: &[f32]) -> Vec<f32> {
        let mut x = input.to_vec();
        let n_layers = params.layers.len();
        for (i, layer) in params.layers.iter().enumerate() {
            let mut y = vec![0.0f64; layer.out_dim];
            for (o, yo) in y.iter_mut().enumerate() {
                let mut acc = layer.b[o] as f64;
                for (j, &xj) in x.iter().enumerate() {
                    acc += layer.w[o * layer.in_dim + j] as f64 * xj as f64;
                }
                *yo = acc;
            }
            x = y
                .into_iter()
                .map(|v| {
                    if i + 1 < n_layers {
                        params.activation.apply(v as f32)
                    } else {
                        v as f32
                    }
                })
                .collect();
        }
        x
    }

    #[test]
    fn zero_network_maps_everything_to_zero() {
        let net = ParamSet::zeros(&[4, 3, 2], Activation::Elu);
        let out = net.forward_vec(&[1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut net = ParamSet::zeros(&[3, 3], Activation::Identity);
        for i in 0..3 {
            net.layers[0].w[i * 3 + i] = 1.0;
        }
        let x = [0.3f32, -1.2, 7.5];
        let out = net.forward_vec(&x).unwrap();
        assert_eq!(out, x.to_vec());
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = ParamSet::init(&[2, 3, 1], Activation::Elu, 1.0, &mut rng);
        let x = [0.4f32, -1.3];
        let got = net.forward_vec(&x).unwrap();
        let want = forward_oracle(&net, &x);
        assert_eq!(got.len(), 1);
        assert!((got[0] - want[0]).abs() < 1e-6, "got {} want {}", got[0], want[0]);
    }

    #[test]
    fn batched_forward_agrees_with_per_row_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = ParamSet::init(&[5, 8, 4], Activation::Tanh, 1.0, &mut rng);
        let rows = 6;
        let x: Vec<f32> = (0..rows * 5).map(|i| ((i * 37 % 11) as f32 - 5.0) / 3.0).collect();
        let batched = net.forward_batch(&x, rows).unwrap();
        for r in 0..rows {
            let single = net.forward_vec(&x[r * 5..(r + 1) * 5]).unwrap();
            for c in 0..4 {
                assert!((batched[r * 4 + c] - single[c]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn dimension_mismatch_names_the_layer() {
        let net = ParamSet::zeros(&[4, 2], Activation::Elu);
        let err = net.forward_vec(&[1.0, 2.0]).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
    }

    #[test]
    fn orthogonal_init_rows_are_orthonormal_up_to_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = ParamSet::init(&[16, 8], Activation::Identity, 1.0, &mut rng);
        let l = &net.layers[0];
        for i in 0..8 {
            for j in 0..8 {
                let dot: f32 = (0..16).map(|k| l.w[i * 16 + k] * l.w[j * 16 + k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-4, "rows {i},{j}: dot {dot}");
            }
        }
    }

    #[test]
    fn layer_sizes_round_trip() {
        let net = ParamSet::zeros(&[11, 256, 128, 20], Activation::Elu);
        assert_eq!(net.layer_sizes(), vec![11, 256, 128, 20]);
        assert_eq!(net.input_dim(), 11);
        assert_eq!(net.output_dim(), 20);
        net.validate().unwrap();
    }
}
