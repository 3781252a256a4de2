//! Tape-based reverse-mode differentiation over row-major `f32` matrices.
//!
//! A forward pass records primitive ops onto the tape; `backward` replays
//! them in reverse and accumulates per-node gradients. Nodes created through
//! [`Tape::stop_gradient`] pass values forward unchanged and contribute
//! exactly zero gradient to their ancestors.
//!
//! Gradient work is pruned through a `needs_grad` flag: only parameters (and
//! nodes downstream of them) receive gradient buffers, so a stop-gradient cut
//! also skips the dead backward matmuls.

use super::{matmul, matmul_at, matmul_bt, Activation, Gradients, ParamSet};
use crate::error::{Error, Result};

pub type NodeId = usize;

struct Node {
    value: Vec<f32>,
    rows: usize,
    cols: usize,
    needs_grad: bool,
}

enum Op {
    /// y = x @ w^T, with w stored `[cols, k]` (the `ParamSet` weight layout).
    MatMulBt { x: NodeId, w: NodeId, out: NodeId },
    /// y = x + row, row broadcast over rows.
    AddRow { x: NodeId, row: NodeId, out: NodeId },
    Activate { x: NodeId, out: NodeId, act: Activation },
    Concat { xs: Vec<NodeId>, out: NodeId },
    Add { a: NodeId, b: NodeId, out: NodeId },
    Sub { a: NodeId, b: NodeId, out: NodeId },
    Mul { a: NodeId, b: NodeId, out: NodeId },
    Square { x: NodeId, out: NodeId },
    Exp { x: NodeId, out: NodeId },
    Ln { x: NodeId, out: NodeId },
    Scale { x: NodeId, k: f32, out: NodeId },
    AddConst { x: NodeId, k: f32, out: NodeId },
    /// y = x ⊙ row, row broadcast over rows.
    MulRow { x: NodeId, row: NodeId, out: NodeId },
    /// y = x + s with scalar node s broadcast everywhere.
    AddScalarNode { x: NodeId, s: NodeId, out: NodeId },
    RowSum { x: NodeId, out: NodeId },
    Sum { x: NodeId, out: NodeId },
    Mean { x: NodeId, out: NodeId },
    /// y = max(x, k); gradient passes only where x > k (zero at the kink).
    MaxConst { x: NodeId, k: f32, out: NodeId },
    /// y = min(a, b) elementwise; ties route the gradient to `a`.
    MinPair { a: NodeId, b: NodeId, out: NodeId },
    /// y = clamp(x, lo, hi); gradient passes only strictly inside the band.
    Clamp { x: NodeId, lo: f32, hi: f32, out: NodeId },
    /// y = x[idx, :]; backward scatter-adds rows.
    Gather { x: NodeId, idx: Vec<usize>, out: NodeId },
    StopGradient { out: NodeId },
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    ops: Vec<Op>,
    grads: Vec<Option<Vec<f32>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Vec<f32>, rows: usize, cols: usize, needs_grad: bool) -> NodeId {
        assert_eq!(value.len(), rows * cols, "node storage mismatch");
        let id = self.nodes.len();
        self.nodes.push(Node { value, rows, cols, needs_grad });
        self.grads.push(None);
        id
    }

    /// Constant input; receives no gradient buffer.
    pub fn input(&mut self, data: &[f32], rows: usize, cols: usize) -> NodeId {
        self.push(data.to_vec(), rows, cols, false)
    }

    /// Differentiable leaf (parameter); snapshots the data.
    pub fn param(&mut self, data: &[f32], rows: usize, cols: usize) -> NodeId {
        self.push(data.to_vec(), rows, cols, true)
    }

    pub fn value(&self, id: NodeId) -> &[f32] {
        &self.nodes[id].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        (self.nodes[id].rows, self.nodes[id].cols)
    }

    pub fn scalar(&self, id: NodeId) -> f32 {
        debug_assert_eq!(self.nodes[id].value.len(), 1);
        self.nodes[id].value[0]
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    pub fn matmul_bt(&mut self, x: NodeId, w: NodeId) -> NodeId {
        let (n, k) = self.shape(x);
        let (m, kw) = self.shape(w);
        assert_eq!(k, kw, "matmul inner dims: x has {k}, w has {kw}");
        let mut y = vec![0.0f32; n * m];
        matmul_bt(&self.nodes[x].value, &self.nodes[w].value, &mut y, n, k, m);
        let needs = self.needs(&[x, w]);
        let out = self.push(y, n, m, needs);
        self.ops.push(Op::MatMulBt { x, w, out });
        out
    }

    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> NodeId {
        let (n, m) = self.shape(x);
        let (rr, rm) = self.shape(row);
        assert_eq!((rr, rm), (1, m), "add_row wants [1,{m}], got [{rr},{rm}]");
        let mut y = self.nodes[x].value.clone();
        for r in 0..n {
            for c in 0..m {
                y[r * m + c] += self.nodes[row].value[c];
            }
        }
        let needs = self.needs(&[x, row]);
        let out = self.push(y, n, m, needs);
        self.ops.push(Op::AddRow { x, row, out });
        out
    }

    pub fn activate(&mut self, x: NodeId, act: Activation) -> NodeId {
        let (n, m) = self.shape(x);
        let y: Vec<f32> = self.nodes[x].value.iter().map(|&v| act.apply(v)).collect();
        let needs = self.needs(&[x]);
        let out = self.push(y, n, m, needs);
        self.ops.push(Op::Activate { x, out, act });
        out
    }

    pub fn concat(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty());
        let n = self.nodes[xs[0]].rows;
        let total: usize = xs
            .iter()
            .map(|&i| {
                assert_eq!(self.nodes[i].rows, n, "concat row mismatch");
                self.nodes[i].cols
            })
            .sum();
        let mut y = vec![0.0f32; n * total];
        let mut off = 0;
        for &i in xs {
            let c = self.nodes[i].cols;
            for r in 0..n {
                y[r * total + off..r * total + off + c]
                    .copy_from_slice(&self.nodes[i].value[r * c..(r + 1) * c]);
            }
            off += c;
        }
        let needs = self.needs(xs);
        let out = self.push(y, n, total, needs);
        self.ops.push(Op::Concat { xs: xs.to_vec(), out });
        out
    }

    fn binary(&mut self, a: NodeId, b: NodeId, f: impl Fn(f32, f32) -> f32) -> (Vec<f32>, usize, usize) {
        let (n, m) = self.shape(a);
        assert_eq!(self.shape(b), (n, m), "elementwise shape mismatch");
        let y = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(&x, &z)| f(x, z))
            .collect();
        (y, n, m)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (y, n, m) = self.binary(a, b, |x, z| x + z);
        let needs = self.needs(&[a, b]);
        let out = self.push(y, n, m, needs);
        self.ops.push(Op::Add { a, b, out });
        out
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (y, n, m) = self.binary(a, b, |x, z| x - z);
        let needs = self.needs(&[a, b]);
        let out = self.push(y, n, m, needs);
        self.ops.push(Op::Sub { a, b, out });
        out
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (y, n, m) = self.binary(a, b, |x, z| x * z);
        let needs = self.needs(&[a, b]);
        let out = self.push(y, n, m, needs);
        self.ops.push(Op::Mul { a, b, out });
        out
    }

    pub fn min_pair(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (y, n, m) = self.binary(a, b, f32::min);
        let needs = self.needs(&[a, b]);
        let out = self.push(y, n, m, needs);
        self.ops.push(Op::MinPair { a, b, out });
        out
    }

    fn unary(&mut self, x: NodeId, f: impl Fn(f32) -> f32) -> (Vec<f32>, usize, usize) {
        let (n, m) = self.shape(x);
        let y = self.nodes[x].value.iter().map(|&v| f(v)).collect();
        (y, n, m)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let (y, n, m) = self.unary(x, |v| v * v);
        let needs = self.needs(&[x]);
        let out = self.push(y, n, m, needs);
        self.ops.push(Op::Square { x, out });
        out
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let (y, n, m) = self.unary(x, f32::exp);
        let needs = self.needs(&[x]);
        let out = self.push(y, n, m, needs);
        self.ops.push(Op::Exp { x, out });
        out
    }

    pub fn ln(&mut self, x: NodeId) -> NodeId {
        let (y, n, m) = self.unary(x, f32::ln);
        let needs = self.needs(&[x]);
        let out = self.push(y, n, m, needs);
        self.ops.push(Op::Ln { x, out });
        out
    }

    pub fn scale(&mut self, x: NodeId, k: f32) -> NodeId {
        let (y, n, m) = self.unary(x, |v| v * k);
        let needs = self.needs(&[x]);
        let out = self.push(y, n, m, needs);
        self.ops.push(Op::Scale { x, k, out });
        out
    }

    pub fn add_const(&mut self, x: NodeId, k: f32) -> NodeId {
        let (y, n, m) = self.unary(x, |v| v + k);
        let needs = self.needs(&[x]);
        let out = self.push(y, n, m, needs);
        self.ops.push(Op::AddConst { x, k, out });
        out
    }

    pub fn max_const(&mut self, x: NodeId, k: f32) -> NodeId {
        let (y, n, m) = self.unary(x, |v| v.max(k));
        let needs = self.needs(&[x]);
        let out = self.push(y, n, m, needs);
        self.ops.push(Op::MaxConst { x, k, out });
        out
    }

    pub fn clamp(&mut self, x: NodeId, lo: f32, hi: f32) -> NodeId {
        let (y, n, m) = self.unary(x, |v| v.clamp(lo, hi));
        let needs = self.needs(&[x]);
        let out = self.push(y, n, m, needs);
        self.ops.push(Op::Clamp { x, lo, hi, out });
        out
    }

    pub fn mul_row(&mut self, x: NodeId, row: NodeId) -> NodeId {
        let (n, m) = self.shape(x);
        assert_eq!(self.shape(row), (1, m), "mul_row shape mismatch");
        let mut y = self.nodes[x].value.clone();
        for r in 0..n {
            for c in 0..m {
                y[r * m + c] *= self.nodes[row].value[c];
            }
        }
        let needs = self.needs(&[x, row]);
        let out = self.push(y, n, m, needs);
        self.ops.push(Op::MulRow { x, row, out });
        out
    }

    pub fn add_scalar_node(&mut self, x: NodeId, s: NodeId) -> NodeId {
        let (n, m) = self.shape(x);
        assert_eq!(self.shape(s), (1, 1), "add_scalar_node wants scalar");
        let sv = self.nodes[s].value[0];
        let y = self.nodes[x].value.iter().map(|&v| v + sv).collect();
        let needs = self.needs(&[x, s]);
        let out = self.push(y, n, m, needs);
        self.ops.push(Op::AddScalarNode { x, s, out });
        out
    }

    pub fn row_sum(&mut self, x: NodeId) -> NodeId {
        let (n, m) = self.shape(x);
        let mut y = vec![0.0f32; n];
        for r in 0..n {
            let mut acc = 0.0f64;
            for c in 0..m {
                acc += self.nodes[x].value[r * m + c] as f64;
            }
            y[r] = acc as f32;
        }
        let needs = self.needs(&[x]);
        let out = self.push(y, n, 1, needs);
        self.ops.push(Op::RowSum { x, out });
        out
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let acc: f64 = self.nodes[x].value.iter().map(|&v| v as f64).sum();
        let needs = self.needs(&[x]);
        let out = self.push(vec![acc as f32], 1, 1, needs);
        self.ops.push(Op::Sum { x, out });
        out
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let len = self.nodes[x].value.len().max(1);
        let acc: f64 = self.nodes[x].value.iter().map(|&v| v as f64).sum();
        let needs = self.needs(&[x]);
        let out = self.push(vec![(acc / len as f64) as f32], 1, 1, needs);
        self.ops.push(Op::Mean { x, out });
        out
    }

    pub fn gather(&mut self, x: NodeId, idx: &[usize]) -> NodeId {
        let (n, m) = self.shape(x);
        let mut y = vec![0.0f32; idx.len() * m];
        for (r, &i) in idx.iter().enumerate() {
            assert!(i < n, "gather index {i} out of {n} rows");
            y[r * m..(r + 1) * m].copy_from_slice(&self.nodes[x].value[i * m..(i + 1) * m]);
        }
        let needs = self.needs(&[x]);
        let out = self.push(y, idx.len(), m, needs);
        self.ops.push(Op::Gather { x, idx: idx.to_vec(), out });
        out
    }

    /// Forward-identity node that blocks the reverse pass.
    pub fn stop_gradient(&mut self, x: NodeId) -> NodeId {
        let (n, m) = self.shape(x);
        let y = self.nodes[x].value.clone();
        let out = self.push(y, n, m, false);
        self.ops.push(Op::StopGradient { out });
        out
    }

    fn grad_buf(&mut self, id: NodeId) -> &mut Vec<f32> {
        let len = self.nodes[id].value.len();
        self.grads[id].get_or_insert_with(|| vec![0.0; len])
    }

    fn take_out_grad(&self, id: NodeId) -> Option<Vec<f32>> {
        self.grads[id].clone()
    }

    /// Reverse pass from a scalar loss node, seeded with 1.0.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(Error::LossNotScalar { rows: r, cols: c });
        }
        *self.grad_buf(loss) = vec![1.0];

        for i in (0..self.ops.len()).rev() {
            // Ops only reference earlier nodes, so the replay is acyclic by construction.
            match &self.ops[i] {
                Op::MatMulBt { x, w, out } => {
                    let (x, w, out) = (*x, *w, *out);
                    let Some(dy) = self.take_out_grad(out) else { continue };
                    let (n, k) = self.shape(x);
                    let (m, _) = self.shape(w);
                    if self.nodes[x].needs_grad {
                        let mut dx = vec![0.0f32; n * k];
                        matmul(&dy, &self.nodes[w].value, &mut dx, n, m, k);
                        add_into(self.grad_buf(x), &dx);
                    }
                    if self.nodes[w].needs_grad {
                        let mut dw = vec![0.0f32; m * k];
                        matmul_at(&dy, &self.nodes[x].value, &mut dw, n, m, k);
                        add_into(self.grad_buf(w), &dw);
                    }
                }
                Op::AddRow { x, row, out } => {
                    let (x, row, out) = (*x, *row, *out);
                    let Some(dy) = self.take_out_grad(out) else { continue };
                    let (n, m) = self.shape(x);
                    if self.nodes[x].needs_grad {
                        add_into(self.grad_buf(x), &dy);
                    }
                    if self.nodes[row].needs_grad {
                        let mut dr = vec![0.0f64; m];
                        for r in 0..n {
                            for c in 0..m {
                                dr[c] += dy[r * m + c] as f64;
                            }
                        }
                        let buf = self.grad_buf(row);
                        for (g, d) in buf.iter_mut().zip(&dr) {
                            *g += *d as f32;
                        }
                    }
                }
                Op::Activate { x, out, act } => {
                    let (x, out, act) = (*x, *out, *act);
                    if !self.nodes[x].needs_grad {
                        continue;
                    }
                    let Some(dy) = self.take_out_grad(out) else { continue };
                    let dx: Vec<f32> = dy
                        .iter()
                        .zip(&self.nodes[x].value)
                        .map(|(&g, &v)| g * act.derivative(v))
                        .collect();
                    add_into(self.grad_buf(x), &dx);
                }
                Op::Concat { xs, out } => {
                    let xs = xs.clone();
                    let out = *out;
                    let Some(dy) = self.take_out_grad(out) else { continue };
                    let (n, total) = self.shape(out);
                    let mut off = 0;
                    for &xi in &xs {
                        let c = self.nodes[xi].cols;
                        if self.nodes[xi].needs_grad {
                            let mut dx = vec![0.0f32; n * c];
                            for r in 0..n {
                                dx[r * c..(r + 1) * c]
                                    .copy_from_slice(&dy[r * total + off..r * total + off + c]);
                            }
                            add_into(self.grad_buf(xi), &dx);
                        }
                        off += c;
                    }
                }
                Op::Add { a, b, out } => {
                    let (a, b, out) = (*a, *b, *out);
                    let Some(dy) = self.take_out_grad(out) else { continue };
                    if self.nodes[a].needs_grad {
                        add_into(self.grad_buf(a), &dy);
                    }
                    if self.nodes[b].needs_grad {
                        add_into(self.grad_buf(b), &dy);
                    }
                }
                Op::Sub { a, b, out } => {
                    let (a, b, out) = (*a, *b, *out);
                    let Some(dy) = self.take_out_grad(out) else { continue };
                    if self.nodes[a].needs_grad {
                        add_into(self.grad_buf(a), &dy);
                    }
                    if self.nodes[b].needs_grad {
                        let neg: Vec<f32> = dy.iter().map(|&g| -g).collect();
                        add_into(self.grad_buf(b), &neg);
                    }
                }
                Op::Mul { a, b, out } => {
                    let (a, b, out) = (*a, *b, *out);
                    let Some(dy) = self.take_out_grad(out) else { continue };
                    if self.nodes[a].needs_grad {
                        let da: Vec<f32> =
                            dy.iter().zip(&self.nodes[b].value).map(|(&g, &v)| g * v).collect();
                        add_into(self.grad_buf(a), &da);
                    }
                    if self.nodes[b].needs_grad {
                        let db: Vec<f32> =
                            dy.iter().zip(&self.nodes[a].value).map(|(&g, &v)| g * v).collect();
                        add_into(self.grad_buf(b), &db);
                    }
                }
                Op::Square { x, out } => {
                    let (x, out) = (*x, *out);
                    if !self.nodes[x].needs_grad {
                        continue;
                    }
                    let Some(dy) = self.take_out_grad(out) else { continue };
                    let dx: Vec<f32> = dy
                        .iter()
                        .zip(&self.nodes[x].value)
                        .map(|(&g, &v)| 2.0 * v * g)
                        .collect();
                    add_into(self.grad_buf(x), &dx);
                }
                Op::Exp { x, out } => {
                    let (x, out) = (*x, *out);
                    if !self.nodes[x].needs_grad {
                        continue;
                    }
                    let Some(dy) = self.take_out_grad(out) else { continue };
                    let dx: Vec<f32> = dy
                        .iter()
                        .zip(&self.nodes[out].value)
                        .map(|(&g, &y)| g * y)
                        .collect();
                    add_into(self.grad_buf(x), &dx);
                }
                Op::Ln { x, out } => {
                    let (x, out) = (*x, *out);
                    if !self.nodes[x].needs_grad {
                        continue;
                    }
                    let Some(dy) = self.take_out_grad(out) else { continue };
                    let dx: Vec<f32> = dy
                        .iter()
                        .zip(&self.nodes[x].value)
                        .map(|(&g, &v)| g / v)
                        .collect();
                    add_into(self.grad_buf(x), &dx);
                }
                Op::Scale { x, k, out } => {
                    let (x, k, out) = (*x, *k, *out);
                    if !self.nodes[x].needs_grad {
                        continue;
                    }
                    let Some(dy) = self.take_out_grad(out) else { continue };
                    let dx: Vec<f32> = dy.iter().map(|&g| g * k).collect();
                    add_into(self.grad_buf(x), &dx);
                }
                Op::AddConst { x, out, .. } => {
                    let (x, out) = (*x, *out);
                    if !self.nodes[x].needs_grad {
                        continue;
                    }
                    let Some(dy) = self.take_out_grad(out) else { continue };
                    add_into(self.grad_buf(x), &dy);
                }
                Op::MulRow { x, row, out } => {
                    let (x, row, out) = (*x, *row, *out);
                    let Some(dy) = self.take_out_grad(out) else { continue };
                    let (n, m) = self.shape(x);
                    if self.nodes[x].needs_grad {
                        let mut dx = vec![0.0f32; n * m];
                        for r in 0..n {
                            for c in 0..m {
                                dx[r * m + c] = dy[r * m + c] * self.nodes[row].value[c];
                            }
                        }
                        add_into(self.grad_buf(x), &dx);
                    }
                    if self.nodes[row].needs_grad {
                        let mut dr = vec![0.0f64; m];
                        for r in 0..n {
                            for c in 0..m {
                                dr[c] += (dy[r * m + c] * self.nodes[x].value[r * m + c]) as f64;
                            }
                        }
                        let buf = self.grad_buf(row);
                        for (g, d) in buf.iter_mut().zip(&dr) {
                            *g += *d as f32;
                        }
                    }
                }
                Op::AddScalarNode { x, s, out } => {
                    let (x, s, out) = (*x, *s, *out);
                    let Some(dy) = self.take_out_grad(out) else { continue };
                    if self.nodes[x].needs_grad {
                        add_into(self.grad_buf(x), &dy);
                    }
                    if self.nodes[s].needs_grad {
                        let total: f64 = dy.iter().map(|&g| g as f64).sum();
                        self.grad_buf(s)[0] += total as f32;
                    }
                }
                Op::RowSum { x, out } => {
                    let (x, out) = (*x, *out);
                    if !self.nodes[x].needs_grad {
                        continue;
                    }
                    let Some(dy) = self.take_out_grad(out) else { continue };
                    let (n, m) = self.shape(x);
                    let mut dx = vec![0.0f32; n * m];
                    for r in 0..n {
                        for c in 0..m {
                            dx[r * m + c] = dy[r];
                        }
                    }
                    add_into(self.grad_buf(x), &dx);
                }
                Op::Sum { x, out } => {
                    let (x, out) = (*x, *out);
                    if !self.nodes[x].needs_grad {
                        continue;
                    }
                    let Some(dy) = self.take_out_grad(out) else { continue };
                    let g = dy[0];
                    let len = self.nodes[x].value.len();
                    add_into(self.grad_buf(x), &vec![g; len]);
                }
                Op::Mean { x, out } => {
                    let (x, out) = (*x, *out);
                    if !self.nodes[x].needs_grad {
                        continue;
                    }
                    let Some(dy) = self.take_out_grad(out) else { continue };
                    let len = self.nodes[x].value.len();
                    let g = dy[0] / len as f32;
                    add_into(self.grad_buf(x), &vec![g; len]);
                }
                Op::MaxConst { x, k, out } => {
                    let (x, k, out) = (*x, *k, *out);
                    if !self.nodes[x].needs_grad {
                        continue;
                    }
                    let Some(dy) = self.take_out_grad(out) else { continue };
                    let dx: Vec<f32> = dy
                        .iter()
                        .zip(&self.nodes[x].value)
                        .map(|(&g, &v)| if v > k { g } else { 0.0 })
                        .collect();
                    add_into(self.grad_buf(x), &dx);
                }
                Op::MinPair { a, b, out } => {
                    let (a, b, out) = (*a, *b, *out);
                    let Some(dy) = self.take_out_grad(out) else { continue };
                    if self.nodes[a].needs_grad {
                        let da: Vec<f32> = dy
                            .iter()
                            .zip(self.nodes[a].value.iter().zip(&self.nodes[b].value))
                            .map(|(&g, (&av, &bv))| if av <= bv { g } else { 0.0 })
                            .collect();
                        add_into(self.grad_buf(a), &da);
                    }
                    if self.nodes[b].needs_grad {
                        let db: Vec<f32> = dy
                            .iter()
                            .zip(self.nodes[a].value.iter().zip(&self.nodes[b].value))
                            .map(|(&g, (&av, &bv))| if bv < av { g } else { 0.0 })
                            .collect();
                        add_into(self.grad_buf(b), &db);
                    }
                }
                Op::Clamp { x, lo, hi, out } => {
                    let (x, lo, hi, out) = (*x, *lo, *hi, *out);
                    if !self.nodes[x].needs_grad {
                        continue;
                    }
                    let Some(dy) = self.take_out_grad(out) else { continue };
                    let dx: Vec<f32> = dy
                        .iter()
                        .zip(&self.nodes[x].value)
                        .map(|(&g, &v)| if v > lo && v < hi { g } else { 0.0 })
                        .collect();
                    add_into(self.grad_buf(x), &dx);
                }
                Op::Gather { x, idx, out } => {
                    let x = *x;
                    let out = *out;
                    if !self.nodes[x].needs_grad {
                        continue;
                    }
                    let idx = idx.clone();
                    let Some(dy) = self.take_out_grad(out) else { continue };
                    let (n, m) = self.shape(x);
                    let mut dx = vec![0.0f32; n * m];
                    for (r, &i) in idx.iter().enumerate() {
                        for c in 0..m {
                            dx[i * m + c] += dy[r * m + c];
                        }
                    }
                    add_into(self.grad_buf(x), &dx);
                }
                Op::StopGradient { .. } => {
                    // Value passed forward; nothing flows back.
                }
            }
        }
        Ok(())
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f32]> {
        self.grads[id].as_deref()
    }

    /// Gradient of a node, exact zeros when nothing flowed to it.
    pub fn grad_or_zeros(&self, id: NodeId) -> Vec<f32> {
        self.grads[id]
            .clone()
            .unwrap_or_else(|| vec![0.0; self.nodes[id].value.len()])
    }

    /// Register every layer of `params` as differentiable leaves.
    pub fn register(&mut self, params: &ParamSet) -> TapeParams {
        let layers = params
            .layers
            .iter()
            .map(|l| {
                let w = self.param(&l.w, l.out_dim, l.in_dim);
                let b = self.param(&l.b, 1, l.out_dim);
                (w, b)
            })
            .collect();
        TapeParams {
            layers,
            activation: params.activation,
            in_dim: params.input_dim(),
            out_dim: params.output_dim(),
        }
    }
}

fn add_into(buf: &mut [f32], delta: &[f32]) {
    debug_assert_eq!(buf.len(), delta.len());
    for (g, d) in buf.iter_mut().zip(delta) {
        *g += d;
    }
}

/// Node ids of one registered MLP; reusable for several forward passes on the
/// same tape so gradients from all of them accumulate into one place.
pub struct TapeParams {
    pub layers: Vec<(NodeId, NodeId)>,
    activation: Activation,
    in_dim: usize,
    out_dim: usize,
}

impl TapeParams {
    /// Batched forward pass; records every intermediate on the tape.
    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let (_, cols) = tape.shape(x);
        if cols != self.in_dim {
            return Err(Error::ShapeMismatch {
                context: "mlp_forward layer 0 input".into(),
                expected: self.in_dim,
                got: cols,
            });
        }
        let n_layers = self.layers.len();
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let lin = tape.matmul_bt(h, w);
            h = tape.add_row(lin, b);
            if i + 1 < n_layers && self.activation != Activation::Identity {
                h = tape.activate(h, self.activation);
            }
        }
        Ok(h)
    }

    pub fn output_dim(&self) -> usize {
        self.out_dim
    }

    /// Collect accumulated gradients (zeros where nothing flowed).
    pub fn gradients(&self, tape: &Tape) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|&(w, b)| (tape.grad_or_zeros(w), tape.grad_or_zeros(b)))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_loss_matches_analytic_gradient() {
        // loss = sum((W x)^2); dL/dW = 2 (W x) x^T
        let mut tape = Tape::new();
        let w_data = [1.0f32, 2.0, -0.5, 0.25, 3.0, 1.5];
        let x_data = [0.5f32, -1.0, 2.0];
        let w = tape.param(&w_data, 2, 3);
        let x = tape.input(&x_data, 1, 3);
        let y = tape.matmul_bt(x, w);
        let sq = tape.square(y);
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();

        let y0 = 1.0 * 0.5 + 2.0 * -1.0 + -0.5 * 2.0; // -2.5
        let y1 = 0.25 * 0.5 + 3.0 * -1.0 + 1.5 * 2.0; // 0.125
        let grad = tape.grad(w).unwrap();
        let expect = [
            2.0 * y0 * 0.5,
            2.0 * y0 * -1.0,
            2.0 * y0 * 2.0,
            2.0 * y1 * 0.5,
            2.0 * y1 * -1.0,
            2.0 * y1 * 2.0,
        ];
        for (g, e) in grad.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-6, "got {g} want {e}");
        }
    }

    #[test]
    fn stop_gradient_preserves_forward_value() {
        let mut tape = Tape::new();
        let x = tape.param(&[1.5, -2.0, 0.0], 1, 3);
        let sg = tape.stop_gradient(x);
        assert_eq!(tape.value(sg), tape.value(x));
    }

    #[test]
    fn stop_gradient_blocks_reverse_flow() {
        let mut tape = Tape::new();
        let x = tape.param(&[1.0, 2.0], 1, 2);
        let sg = tape.stop_gradient(x);
        let loss = tape.sum(sg);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad_or_zeros(x), vec![0.0, 0.0]);
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn mixed_stop_gradient_keeps_only_live_path() {
        // loss = sum(a*x + sg(b*x)); d loss / d x = a exactly
        let a = 3.0f32;
        let b = 7.0f32;
        let mut tape = Tape::new();
        let x = tape.param(&[2.0], 1, 1);
        let ax = tape.scale(x, a);
        let bx = tape.scale(x, b);
        let sg = tape.stop_gradient(bx);
        let total = tape.add(ax, sg);
        let loss = tape.sum(total);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[a]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.param(&[1.0, 2.0], 1, 2);
        let y = tape.square(x);
        assert!(matches!(
            tape.backward(y),
            Err(crate::error::Error::LossNotScalar { .. })
        ));
    }

    #[test]
    fn hinge_gradient_is_zero_at_the_kink() {
        let mut tape = Tape::new();
        let x = tape.param(&[0.0, -1.0, 2.0], 1, 3);
        let h = tape.max_const(x, 0.0);
        let loss = tape.sum(h);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0, 1.0]);
    }

    /// Central finite differences on a scalar-valued closure.
    fn finite_diff(mut f: impl FnMut(&[f32]) -> f32, at: &[f32], h: f32) -> Vec<f32> {
        let mut grad = vec![0.0f32; at.len()];
        let mut pt = at.to_vec();
        for i in 0..at.len() {
            pt[i] = at[i] + h;
            let up = f(&pt);
            pt[i] = at[i] - h;
            let dn = f(&pt);
            pt[i] = at[i];
            grad[i] = (up - dn) / (2.0 * h);
        }
        grad
    }

    fn mlp_loss(params: &ParamSet, x: &[f32]) -> f32 {
        // loss = sum(square(net(x)))
        let out = params.forward_vec(x).unwrap();
        out.iter().map(|v| v * v).sum()
    }

    #[test]
    fn three_layer_elu_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let net = ParamSet::init(&[4, 6, 5, 3], Activation::Elu, 1.0, &mut rng);
        let x: Vec<f32> = vec![0.3, -0.7, 1.1, 0.05];

        let mut tape = Tape::new();
        let tp = tape.register(&net);
        let xi = tape.input(&x, 1, 4);
        let out = tp.forward(&mut tape, xi).unwrap();
        let sq = tape.square(out);
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        let grads = tp.gradients(&tape);

        for (li, (dw, db)) in grads.layers.iter().enumerate() {
            // weight gradients
            let base = net.layers[li].w.clone();
            let fd = finite_diff(
                |wv| {
                    let mut p = net.clone();
                    p.layers[li].w = wv.to_vec();
                    mlp_loss(&p, &x)
                },
                &base,
                1e-2,
            );
            for (j, (&g, &f)) in dw.iter().zip(&fd).enumerate() {
                let denom = f.abs().max(1e-3);
                assert!(
                    ((g - f) / denom).abs() < 1e-2,
                    "layer {li} w[{j}]: autodiff {g} fd {f}"
                );
            }
            // bias gradients
            let base = net.layers[li].b.clone();
            let fd = finite_diff(
                |bv| {
                    let mut p = net.clone();
                    p.layers[li].b = bv.to_vec();
                    mlp_loss(&p, &x)
                },
                &base,
                1e-2,
            );
            for (j, (&g, &f)) in db.iter().zip(&fd).enumerate() {
                let denom = f.abs().max(1e-3);
                assert!(
                    ((g - f) / denom).abs() < 1e-2,
                    "layer {li} b[{j}]: autodiff {g} fd {f}"
                );
            }
        }
    }

    #[test]
    fn identical_seed_gives_bitwise_identical_gradients() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let net = ParamSet::init(&[3, 4, 2], Activation::Tanh, 1.0, &mut rng);
            let mut tape = Tape::new();
            let tp = tape.register(&net);
            let xi = tape.input(&[0.1, 0.2, 0.3], 1, 3);
            let out = tp.forward(&mut tape, xi).unwrap();
            let sq = tape.square(out);
            let loss = tape.sum(sq);
            tape.backward(loss).unwrap();
            (tape.value(out).to_vec(), tp.gradients(&tape))
        };
        let (v1, g1) = run();
        let (v2, g2) = run();
        assert_eq!(v1, v2);
        for (a, b) in g1.layers.iter().zip(&g2.layers) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.1, b.1);
        }
    }

    #[test]
    fn gather_scatter_adds_duplicate_rows() {
        let mut tape = Tape::new();
        let x = tape.param(&[1.0, 2.0, 3.0, 4.0], 2, 2);
        let g = tape.gather(x, &[0, 0, 1]);
        let loss = tape.sum(g);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn min_pair_routes_gradient_to_smaller_side() {
        let mut tape = Tape::new();
        let a = tape.param(&[1.0, 5.0], 1, 2);
        let b = tape.param(&[2.0, 4.0], 1, 2);
        let m = tape.min_pair(a, b);
        let loss = tape.sum(m);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[1.0, 0.0]);
        assert_eq!(tape.grad(b).unwrap(), &[0.0, 1.0]);
    }
}
