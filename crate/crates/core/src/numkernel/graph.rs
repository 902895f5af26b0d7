//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node holding its output value and what its backward rule
//! needs. Nodes are stored in creation order, which is already a topological
//! order, so `backward` replays the tape from the loss down to index 0.

use rand::Rng as _;

use super::tensor::{check_index, gemm_nn, gemm_nt, gemm_tn, split_at_axis, Tensor};
use crate::error::{shape_err, Error, Result};
use crate::rng::Rng;

/// Norm below which L2 normalization refuses to divide.
pub const MIN_NORM: f64 = 1e-8;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddTrailing(Var, Var),
    Matmul(Var, Var),
    Bmm(Var, Var),
    Transpose(Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Gelu(Var),
    Sigmoid(Var),
    GatherRows(Var, Vec<usize>),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    SoftmaxCe {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    L2Normalize {
        x: Var,
        norms: Vec<f64>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    SumAll(Var),
    SumAxis {
        x: Var,
        axis: usize,
    },
    VarAxis {
        x: Var,
        axis: usize,
    },
    CenterAxis {
        x: Var,
        axis: usize,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    BlockMax {
        x: Var,
        argmax: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A recorded computation. Confined to one thread; build a fresh graph per step.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a leaf; it requires grad iff the tensor says so.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(t, Op::Leaf, rg)
    }

    /// Register a trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        let t = t.with_requires_grad(true);
        self.push(t, Op::Leaf, true)
    }

    /// Register a leaf that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let t = t.with_requires_grad(false);
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of a node after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    // ---- elementwise -------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(Var, Var) -> Op,
    ) -> Result<Var> {
        self.value(a).check_same_shape(self.value(b), name)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::raw(self.shape(a).to_vec(), data);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, op(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let data = self.data(a).iter().map(|x| x * s).collect();
        let out = Tensor::raw(self.shape(a).to_vec(), data);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, s), rg)
    }

    /// `x + b` where `b`'s shape equals the trailing dimensions of `x`.
    pub fn add_trailing(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x);
        let bs = self.shape(b);
        if bs.len() > xs.len() || xs[xs.len() - bs.len()..] != *bs {
            return shape_err("add_trailing", xs, bs);
        }
        let t = self.value(b).len();
        let bd = self.data(b);
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bd[i % t])
            .collect();
        let out = Tensor::raw(xs.to_vec(), data);
        let rg = self.rg(&[x, b]);
        Ok(self.push(out, Op::AddTrailing(x, b), rg))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let data = self
            .data(x)
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()))
            .collect();
        let out = Tensor::raw(self.shape(x).to_vec(), data);
        let rg = self.rg(&[x]);
        self.push(out, Op::Gelu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let data = self.data(x).iter().map(|&v| sigmoid(v)).collect();
        let out = Tensor::raw(self.shape(x).to_vec(), data);
        let rg = self.rg(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    /// Inverted dropout: zero with probability `p`, scale survivors by `1/(1-p)`.
    /// With `p == 0` the input is returned unchanged and no randomness is drawn.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} not in [0,1)")));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = self.data(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::raw(self.shape(x).to_vec(), data);
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Dropout { x, mask }, rg))
    }

    // ---- linear algebra ------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err("matmul", sa, sb);
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_nn(self.data(a), self.data(b), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::raw(vec![m, n], out), Op::Matmul(a, b), rg))
    }

    /// Batched product `[G×m×k] · [G×k×n] → [G×m×n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return shape_err("bmm", sa, sb);
        }
        let (g, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; g * m * n];
        let (ad, bd) = (self.data(a), self.data(b));
        for i in 0..g {
            gemm_nn(
                &ad[i * m * k..(i + 1) * m * k],
                &bd[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::raw(vec![g, m, n], out), Op::Bmm(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return shape_err("transpose", s, &[2]);
        }
        let (r, c) = (s[0], s[1]);
        let d = self.data(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::raw(vec![c, r], out), Op::Transpose(x), rg))
    }

    /// Reorder axes: output axis `d` is input axis `axes[d]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let mut seen = vec![false; s.len()];
        if axes.len() != s.len() || axes.iter().any(|&a| a >= s.len() || std::mem::replace(&mut seen[a], true)) {
            return shape_err("permute", &s, axes);
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| s[a]).collect();
        let map = permute_map(&s, axes);
        let d = self.data(x);
        let out = map.iter().map(|&src| d[src]).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::raw(out_shape, out), Op::Permute(x, axes.to_vec()), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshaped(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    // ---- indexing ------------------------------------------------------

    /// Rows `idx` of a 2-D tensor; backward scatter-adds.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 || idx.is_empty() {
            return shape_err("gather_rows", s, &[idx.len()]);
        }
        let (rows, d) = (s[0], s[1]);
        for &i in idx {
            check_index("gather_rows", i, rows)?;
        }
        let td = self.data(table);
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            out.extend_from_slice(&td[i * d..(i + 1) * d]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            Tensor::raw(vec![idx.len(), d], out),
            Op::GatherRows(table, idx.to_vec()),
            rg,
        ))
    }

    /// Embedding lookup; alias of [`Graph::gather_rows`].
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.gather_rows(table, ids)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(inputs[0]).to_vec();
        if axis >= first.len() {
            return shape_err("concat", &first, &[axis]);
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let ok = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return shape_err("concat", &first, s);
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_at_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let n = self.shape(v)[axis];
                let d = self.data(v);
                out.extend_from_slice(&d[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = self.rg(inputs);
        Ok(self.push(
            Tensor::raw(shape, out),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return shape_err("slice", &s, &[axis, start, len]);
        }
        let (outer, n, inner) = split_at_axis(&s, axis);
        let d = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::raw(shape, out), Op::Slice { x, axis, start }, rg))
    }

    // ---- normalization -------------------------------------------------

    /// Layer normalization over the last axis followed by an affine map.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::Config(format!("layer_norm eps must be positive, got {eps}")));
        }
        let s = self.shape(x).to_vec();
        let d = *s.last().unwrap();
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return shape_err("layer_norm", &s, self.shape(gain));
        }
        let rows = self.value(x).len() / d;
        let xd = self.data(x);
        let (gd, bd) = (self.data(gain), self.data(bias));
        let mut xhat = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xd.len()];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gd[j] + bd[j];
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            Tensor::raw(s, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let d = *s.last().unwrap();
        let mut out = self.data(x).to_vec();
        for row in out.chunks_mut(d) {
            softmax_in_place(row);
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::raw(s, out), Op::Softmax(x), rg)
    }

    /// Divide each last-axis vector by its Euclidean norm.
    ///
    /// Errors if any vector has norm below [`MIN_NORM`].
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let d = *s.last().unwrap();
        let mut out = self.data(x).to_vec();
        let mut norms = Vec::with_capacity(out.len() / d);
        for (r, row) in out.chunks_mut(d).enumerate() {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n.is_nan() || n < MIN_NORM {
                return Err(Error::Numeric(format!(
                    "l2_normalize: vector {r} has norm {n:e} below {MIN_NORM:e}"
                )));
            }
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::raw(s, out), Op::L2Normalize { x, norms }, rg))
    }

    // ---- reductions ----------------------------------------------------

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.data(x).iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    /// Sum over `axis`, removing it (a 1-D input yields a one-element tensor).
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return shape_err("sum_axis", &s, &[axis]);
        }
        let (outer, n, inner) = split_at_axis(&s, axis);
        let d = self.data(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..n {
                let src = &d[(o * n + a) * inner..(o * n + a + 1) * inner];
                for (t, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *t += v;
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::raw(reduced_shape(&s, axis), out), Op::SumAxis { x, axis }, rg))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let n = self.shape(x).get(axis).copied().unwrap_or(1) as f64;
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, 1.0 / n))
    }

    /// Population variance over `axis`, removing it.
    pub fn var_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return shape_err("var_axis", &s, &[axis]);
        }
        let (outer, n, inner) = split_at_axis(&s, axis);
        let d = self.data(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| d[(o * n + a) * inner + i];
                let mean = (0..n).map(at).sum::<f64>() / n as f64;
                out[o * inner + i] = (0..n).map(|a| (at(a) - mean).powi(2)).sum::<f64>() / n as f64;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::raw(reduced_shape(&s, axis), out), Op::VarAxis { x, axis }, rg))
    }

    /// `x - mean_axis(x)` broadcast back along `axis`.
    pub fn center_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return shape_err("center_axis", &s, &[axis]);
        }
        let out = center(self.data(x), &s, axis);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::raw(s, out), Op::CenterAxis { x, axis }, rg))
    }

    /// Maximum over each `bh×bw` block of a 2-D tensor → `[R/bh × C/bw]`.
    ///
    /// Gradient flows only to the argmax entry; ties go to the first entry in
    /// row-major order within the block.
    pub fn block_max(&mut self, x: Var, bh: usize, bw: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || bh == 0 || bw == 0 || !s[0].is_multiple_of(bh) || !s[1].is_multiple_of(bw) {
            return shape_err("block_max", &s, &[bh, bw]);
        }
        let (rows, cols) = (s[0] / bh, s[1] / bw);
        let d = self.data(x);
        let mut out = Vec::with_capacity(rows * cols);
        let mut argmax = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let mut best = f64::NEG_INFINITY;
                let mut at = r * bh * s[1] + c * bw;
                for i in 0..bh {
                    for j in 0..bw {
                        let idx = (r * bh + i) * s[1] + c * bw + j;
                        if d[idx] > best {
                            best = d[idx];
                            at = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(at);
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::raw(vec![rows, cols], out), Op::BlockMax { x, argmax }, rg))
    }

    // ---- losses --------------------------------------------------------

    /// Mean over rows of `-log softmax(logits)[i, target_i]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != targets.len() {
            return shape_err("softmax_cross_entropy", &s, &[targets.len()]);
        }
        let (n, c) = (s[0], s[1]);
        for &t in targets {
            check_index("softmax_cross_entropy", t, c)?;
        }
        let mut probs = self.data(logits).to_vec();
        let mut loss = 0.0;
        for (i, row) in probs.chunks_mut(c).enumerate() {
            let lse = log_sum_exp(row);
            loss += lse - row[targets[i]];
            softmax_in_place(row);
        }
        loss /= n as f64;
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    // ---- backward ------------------------------------------------------

    /// Reverse-mode sweep from the scalar `loss`.
    ///
    /// Afterwards every node that requires grad carries a gradient buffer;
    /// leaves unreachable from `loss` receive zeros. Calling `backward` again
    /// overwrites the buffers rather than accumulating.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return shape_err("backward", self.shape(loss), &[1]);
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            self.nodes[i].value.set_grad(g);
        }
        for node in &mut self.nodes {
            if node.requires_grad && node.value.grad().is_none() {
                let len = node.value.len();
                node.value.set_grad(vec![0.0; len]);
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, |ga| axpy(ga, g, 1.0));
                self.acc(grads, *b, |gb| axpy(gb, g, 1.0));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |ga| axpy(ga, g, 1.0));
                self.acc(grads, *b, |gb| axpy(gb, g, -1.0));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                self.acc(grads, *a, |ga| {
                    for ((t, gv), bv) in ga.iter_mut().zip(g).zip(bd) {
                        *t += gv * bv;
                    }
                });
                self.acc(grads, *b, |gb| {
                    for ((t, gv), av) in gb.iter_mut().zip(g).zip(ad) {
                        *t += gv * av;
                    }
                });
            }
            Op::Scale(a, s) => self.acc(grads, *a, |ga| axpy(ga, g, *s)),
            Op::AddTrailing(x, b) => {
                self.acc(grads, *x, |gx| axpy(gx, g, 1.0));
                let t = self.value(*b).len();
                self.acc(grads, *b, |gb| {
                    for (k, gv) in g.iter().enumerate() {
                        gb[k % t] += gv;
                    }
                });
            }
            Op::Matmul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (ad, bd) = (self.data(*a), self.data(*b));
                self.acc(grads, *a, |ga| gemm_nt(g, bd, ga, m, n, k));
                self.acc(grads, *b, |gb| gemm_tn(ad, g, gb, k, m, n));
            }
            Op::Bmm(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                let (ad, bd) = (self.data(*a), self.data(*b));
                self.acc(grads, *a, |ga| {
                    for p in 0..bs {
                        gemm_nt(
                            &g[p * m * n..(p + 1) * m * n],
                            &bd[p * k * n..(p + 1) * k * n],
                            &mut ga[p * m * k..(p + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                });
                self.acc(grads, *b, |gb| {
                    for p in 0..bs {
                        gemm_tn(
                            &ad[p * m * k..(p + 1) * m * k],
                            &g[p * m * n..(p + 1) * m * n],
                            &mut gb[p * k * n..(p + 1) * k * n],
                            k,
                            m,
                            n,
                        );
                    }
                });
            }
            Op::Transpose(x) => {
                let s = self.shape(*x);
                let (r, c) = (s[0], s[1]);
                self.acc(grads, *x, |gx| {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Permute(x, axes) => {
                let map = permute_map(self.shape(*x), axes);
                self.acc(grads, *x, |gx| {
                    for (o, &src) in map.iter().enumerate() {
                        gx[src] += g[o];
                    }
                });
            }
            Op::Reshape(x) => self.acc(grads, *x, |gx| axpy(gx, g, 1.0)),
            Op::Gelu(x) => {
                let xd = self.data(*x);
                self.acc(grads, *x, |gx| {
                    for ((t, gv), &v) in gx.iter_mut().zip(g).zip(xd) {
                        let th = (GELU_C * (v + GELU_A * v * v * v)).tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                        *t += gv * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
                    }
                });
            }
            Op::Sigmoid(x) => self.acc(grads, *x, |gx| {
                for ((t, gv), y) in gx.iter_mut().zip(g).zip(out) {
                    *t += gv * y * (1.0 - y);
                }
            }),
            Op::GatherRows(table, idx) => {
                let d = self.shape(*table)[1];
                self.acc(grads, *table, |gt| {
                    for (r, &i) in idx.iter().enumerate() {
                        axpy(&mut gt[i * d..(i + 1) * d], &g[r * d..(r + 1) * d], 1.0);
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = *self.shape(*x).last().unwrap();
                let gd = self.data(*gain);
                self.acc(grads, *x, |gx| {
                    let mut dxhat = vec![0.0; d];
                    for (r, &inv) in inv_std.iter().enumerate() {
                        let (mut s1, mut s2) = (0.0, 0.0);
                        for j in 0..d {
                            let v = g[r * d + j] * gd[j];
                            dxhat[j] = v;
                            s1 += v;
                            s2 += v * xhat[r * d + j];
                        }
                        let scale = inv / d as f64;
                        for j in 0..d {
                            gx[r * d + j] +=
                                scale * (d as f64 * dxhat[j] - s1 - xhat[r * d + j] * s2);
                        }
                    }
                });
                self.acc(grads, *gain, |gg| {
                    for (k, (gv, h)) in g.iter().zip(xhat).enumerate() {
                        gg[k % d] += gv * h;
                    }
                });
                self.acc(grads, *bias, |gb| {
                    for (k, gv) in g.iter().enumerate() {
                        gb[k % d] += gv;
                    }
                });
            }
            Op::Softmax(x) => {
                let d = *self.shape(*x).last().unwrap();
                self.acc(grads, *x, |gx| {
                    for ((gxr, gr), yr) in gx.chunks_mut(d).zip(g.chunks(d)).zip(out.chunks(d)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((t, gv), y) in gxr.iter_mut().zip(gr).zip(yr) {
                            *t += y * (gv - dot);
                        }
                    }
                });
            }
            Op::SoftmaxCe {
                logits,
                targets,
                probs,
            } => {
                let c = self.shape(*logits)[1];
                let scale = g[0] / targets.len() as f64;
                self.acc(grads, *logits, |gl| {
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            gl[r * c + j] += scale * (probs[r * c + j] - onehot);
                        }
                    }
                });
            }
            Op::L2Normalize { x, norms } => {
                let d = *self.shape(*x).last().unwrap();
                self.acc(grads, *x, |gx| {
                    for (r, &n) in norms.iter().enumerate() {
                        let yr = &out[r * d..(r + 1) * d];
                        let gr = &g[r * d..(r + 1) * d];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            gx[r * d + j] += (gr[j] - yr[j] * dot) / n;
                        }
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                let s = node.value.shape();
                let (outer, total, inner) = split_at_axis(s, *axis);
                let mut offset = 0;
                for &v in inputs {
                    let n = self.shape(v)[*axis];
                    self.acc(grads, v, |gv| {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            axpy(
                                &mut gv[o * n * inner..(o + 1) * n * inner],
                                &g[src..src + n * inner],
                                1.0,
                            );
                        }
                    });
                    offset += n;
                }
            }
            Op::Slice { x, axis, start } => {
                let s = self.shape(*x);
                let (outer, n, inner) = split_at_axis(s, *axis);
                let len = node.value.shape()[*axis];
                self.acc(grads, *x, |gx| {
                    for o in 0..outer {
                        let dst = o * n * inner + start * inner;
                        axpy(
                            &mut gx[dst..dst + len * inner],
                            &g[o * len * inner..(o + 1) * len * inner],
                            1.0,
                        );
                    }
                });
            }
            Op::SumAll(x) => self.acc(grads, *x, |gx| gx.iter_mut().for_each(|t| *t += g[0])),
            Op::SumAxis { x, axis } => {
                let (outer, n, inner) = split_at_axis(self.shape(*x), *axis);
                self.acc(grads, *x, |gx| {
                    for o in 0..outer {
                        for a in 0..n {
                            axpy(
                                &mut gx[(o * n + a) * inner..(o * n + a + 1) * inner],
                                &g[o * inner..(o + 1) * inner],
                                1.0,
                            );
                        }
                    }
                });
            }
            Op::VarAxis { x, axis } => {
                let (outer, n, inner) = split_at_axis(self.shape(*x), *axis);
                let xd = self.data(*x);
                self.acc(grads, *x, |gx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |a: usize| (o * n + a) * inner + i;
                            let mean = (0..n).map(|a| xd[at(a)]).sum::<f64>() / n as f64;
                            let gv = g[o * inner + i];
                            for a in 0..n {
                                gx[at(a)] += gv * 2.0 * (xd[at(a)] - mean) / n as f64;
                            }
                        }
                    }
                });
            }
            Op::CenterAxis { x, axis } => {
                let centered = center(g, self.shape(*x), *axis);
                self.acc(grads, *x, |gx| axpy(gx, &centered, 1.0));
            }
            Op::Dropout { x, mask } => self.acc(grads, *x, |gx| {
                for ((t, gv), m) in gx.iter_mut().zip(g).zip(mask) {
                    *t += gv * m;
                }
            }),
            Op::BlockMax { x, argmax } => self.acc(grads, *x, |gx| {
                for (gv, &at) in g.iter().zip(argmax) {
                    gx[at] += gv;
                }
            }),
        }
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let buf = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(buf);
    }
}

fn axpy(dst: &mut [f64], src: &[f64], a: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

fn reduced_shape(s: &[usize], axis: usize) -> Vec<usize> {
    let mut out: Vec<usize> = s.iter().enumerate().filter(|&(d, _)| d != axis).map(|(_, &v)| v).collect();
    if out.is_empty() {
        out.push(1);
    }
    out
}

fn center(d: &[f64], s: &[usize], axis: usize) -> Vec<f64> {
    let (outer, n, inner) = split_at_axis(s, axis);
    let mut out = d.to_vec();
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| (o * n + a) * inner + i;
            // shifted by the first entry so equal entries centre to exactly 0
            let first = d[at(0)];
            let mean = first + (0..n).map(|a| d[at(a)] - first).sum::<f64>() / n as f64;
            for a in 0..n {
                out[at(a)] -= mean;
            }
        }
    }
    out
}

/// For each output position of a permutation, its source offset in the input.
fn permute_map(in_shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let nd = in_shape.len();
    let mut in_strides = vec![1; nd];
    for d in (0..nd.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * in_shape[d + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total: usize = in_shape.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; nd];
    let mut src = 0usize;
    for _ in 0..total {
        map.push(src);
        for d in (0..nd).rev() {
            idx[d] += 1;
            src += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    row.iter_mut().for_each(|v| *v /= z);
}
