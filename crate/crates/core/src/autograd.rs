//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every operation appends a node holding its forward value; `backward` walks
//! the tape in reverse and accumulates gradients into the nodes that need them.
//! Parameters enter the tape through [`Graph::param`]; ids registered with
//! [`Graph::freeze`] enter as constants and never receive gradients.

use std::collections::{HashMap, HashSet};

use crate::error::{shape_err, Error, Result};
use crate::ops::{attention, bounds, conv, deform, Conv2dGeometry, DeformableKernelSpec};
use crate::params::{ConvParams, LinearParams, ParamId, ParamStore};
use crate::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: Conv2dGeometry },
    DeformConv { spec: DeformableKernelSpec, m: Var, offsets: Var, mask: Var, w: Var, b: Option<Var> },
    Attention { q: Var, k: Var, v: Var, probs: Tensor },
    Concat(Vec<Var>),
    Slice { x: Var, start: usize, len: usize },
    Reshape(Var),
    GlobalAvgPool(Var),
    Linear { x: Var, w: Var, b: Var },
    MatMulNT(Var, Var),
    GaussLogLik { mu: Var, logvar: Var, y: Var },
    PairRows(Var, Var),
    GaussLogLikPairs { mu: Var, logvar: Var, y: Var },
    InfoNce(Var),
    L1Out(Var),
    DiagMean(Var),
    Mean(Var),
    Sum(Var),
    Mse(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    frozen: HashSet<ParamId>,
    max_tokens: usize,
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

const DEFAULT_MAX_TOKENS: usize = 4096;

impl Graph {
    pub fn new() -> Self {
        Self { max_tokens: DEFAULT_MAX_TOKENS, ..Default::default() }
    }

    /// Caps the token count accepted by attention nodes.
    pub fn with_max_tokens(mut self, max_tokens: usize) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn freeze(&mut self, ids: impl IntoIterator<Item = ParamId>) {
        self.frozen.extend(ids);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Row-stochastic attention weights `[B, N, N]` recorded by an attention node.
    pub fn attention_probs(&self, v: Var) -> Option<&Tensor> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable leaf, independent of any parameter store.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let needs_grad = !self.frozen.contains(&id);
        self.nodes.push(Node { value: store.get(id).clone(), op: Op::Leaf, needs_grad });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a, s), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(value, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a), &[a])
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: Conv2dGeometry) -> Result<Var> {
        let value = conv::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), geom)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, &inputs))
    }

    /// Convolution with stored parameters; `k = 3` uses same padding, `k = 1` none.
    pub fn conv_layer(&mut self, store: &ParamStore, p: ConvParams, x: Var, stride: usize) -> Result<Var> {
        let k = store.get(p.weight).shape()[2];
        let geom = Conv2dGeometry { stride, padding: k / 2 };
        let w = self.param(store, p.weight);
        let b = self.param(store, p.bias);
        self.conv2d(x, w, Some(b), geom)
    }

    pub fn deform_conv(
        &mut self,
        spec: DeformableKernelSpec,
        m: Var,
        offsets: Var,
        mask: Var,
        w: Var,
        b: Option<Var>,
    ) -> Result<Var> {
        let value = deform::deform_conv_forward(
            &spec,
            self.value(m),
            self.value(offsets),
            self.value(mask),
            self.value(w),
            b.map(|b| self.value(b)),
        )?;
        let mut inputs = vec![m, offsets, mask, w];
        inputs.extend(b);
        Ok(self.push(value, Op::DeformConv { spec, m, offsets, mask, w, b }, &inputs))
    }

    pub fn attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let a = attention::attention_forward(self.value(q), self.value(k), self.value(v), self.max_tokens)?;
        Ok(self.push(a.out, Op::Attention { q, k, v, probs: a.probs }, &[q, k, v]))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_channels(&values)?;
        Ok(self.push(value, Op::Concat(parts.to_vec()), parts))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.value(x).slice_channels(start, len)?;
        Ok(self.push(value, Op::Slice { x, start, len }, &[x]))
    }

    /// Same data under a new shape (row-major order is kept).
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// A constant copy of `x`: gradients stop here.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.constant(value)
    }

    /// `[B, C, H, W] -> [B, C]`
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4()?;
        let n = (h * w) as f64;
        let data = self.value(x).data().chunks(h * w).map(|ch| ch.iter().sum::<f64>() / n).collect();
        let value = Tensor::from_vec(&[b, c], data)?;
        Ok(self.push(value, Op::GlobalAvgPool(x), &[x]))
    }

    /// `x: [B, I]`, `w: [O, I]`, `b: [O]` -> `[B, O]`
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (bn, i) = self.value(x).dims2()?;
        let (o, wi) = self.value(w).dims2()?;
        if wi != i || self.value(b).shape() != [o] {
            return shape_err(format!("linear {:?} x {:?}", self.value(x).shape(), self.value(w).shape()));
        }
        let mut value = Tensor::zeros(&[bn, o]);
        for row in value.data_mut().chunks_mut(o) {
            row.copy_from_slice(self.value(b).data());
        }
        gemm(bn, o, i, 1.0, self.value(x).data(), false, self.value(w).data(), true, 1.0, value.data_mut());
        Ok(self.push(value, Op::Linear { x, w, b }, &[x, w, b]))
    }

    pub fn linear_layer(&mut self, store: &ParamStore, p: LinearParams, x: Var) -> Result<Var> {
        let w = self.param(store, p.weight);
        let b = self.param(store, p.bias);
        self.linear(x, w, b)
    }

    /// `a: [B, E]`, `b: [B', E]` -> `a b^T: [B, B']`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ea) = self.value(a).dims2()?;
        let (rb, eb) = self.value(b).dims2()?;
        if ea != eb {
            return shape_err(format!("matmul_nt {:?} x {:?}", self.value(a).shape(), self.value(b).shape()));
        }
        let mut value = Tensor::zeros(&[ra, rb]);
        gemm(ra, rb, ea, 1.0, self.value(a).data(), false, self.value(b).data(), true, 0.0, value.data_mut());
        Ok(self.push(value, Op::MatMulNT(a, b), &[a, b]))
    }

    pub fn gaussian_loglik(&mut self, mu: Var, logvar: Var, y: Var) -> Result<Var> {
        let value = bounds::gaussian_loglik_matrix(self.value(mu), self.value(logvar), self.value(y))?;
        Ok(self.push(value, Op::GaussLogLik { mu, logvar, y }, &[mu, logvar, y]))
    }

    /// `[B, dx] x [B, dz] -> [B*B, dx + dz]`, row `j * B + i` holding `x_j ++ z_i`.
    pub fn pair_rows(&mut self, x: Var, z: Var) -> Result<Var> {
        let value = bounds::pair_rows(self.value(x), self.value(z))?;
        Ok(self.push(value, Op::PairRows(x, z), &[x, z]))
    }

    /// `L[j, i] = log q(y_i | pair row j * B + i)`.
    pub fn gaussian_loglik_pairs(&mut self, mu: Var, logvar: Var, y: Var) -> Result<Var> {
        let value = bounds::gaussian_loglik_pairs(self.value(mu), self.value(logvar), self.value(y))?;
        Ok(self.push(value, Op::GaussLogLikPairs { mu, logvar, y }, &[mu, logvar, y]))
    }

    pub fn infonce(&mut self, scores: Var) -> Result<Var> {
        let v = bounds::infonce(self.value(scores))?;
        Ok(self.push(Tensor::scalar(v), Op::InfoNce(scores), &[scores]))
    }

    pub fn l1out(&mut self, loglik: Var) -> Result<Var> {
        let v = bounds::l1out(self.value(loglik))?;
        Ok(self.push(Tensor::scalar(v), Op::L1Out(loglik), &[loglik]))
    }

    pub fn diag_mean(&mut self, m: Var) -> Result<Var> {
        let (r, c) = self.value(m).dims2()?;
        if r != c {
            return shape_err(format!("diagonal of {:?}", self.value(m).shape()));
        }
        let v = (0..r).map(|i| self.value(m).data()[i * r + i]).sum::<f64>() / r as f64;
        Ok(self.push(Tensor::scalar(v), Op::DiagMean(m), &[m]))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a).mean();
        self.push(Tensor::scalar(v), Op::Mean(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).sum();
        self.push(Tensor::scalar(v), Op::Sum(a), &[a])
    }

    /// Mean squared error over every element.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let p = self.value(pred);
        let t = self.value(target);
        p.expect_same_shape(t)?;
        let v = p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.numel() as f64;
        Ok(self.push(Tensor::scalar(v), Op::Mse(pred, target), &[pred, target]))
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).numel() != 1 {
            return shape_err(format!("backward from non-scalar {:?}", self.value(output).shape()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::full(self.value(output).shape(), 1.0));
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Gradients of every non-frozen parameter that took part in the graph.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<(ParamId, Tensor)> = self
            .params
            .iter()
            .filter(|(id, _)| !self.frozen.contains(id))
            .map(|(&id, &v)| {
                let g = grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(self.value(v).shape()));
                (id, g)
            })
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let ga = g.zip_map(self.value(*b), |x, y| x * y)?;
                let gb = g.zip_map(self.value(*a), |x, y| x * y)?;
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scale(*s)),
            Op::Relu(a) => {
                let ga = g.zip_map(self.value(*a), |x, v| if v > 0.0 { x } else { 0.0 })?;
                self.accumulate(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = g.zip_map(&node.value, |x, s| x * s * (1.0 - s))?;
                self.accumulate(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let ga = g.zip_map(&node.value, |x, t| x * (1.0 - t * t))?;
                self.accumulate(grads, *a, ga);
            }
            Op::Conv2d { x, w, b, geom } => {
                let cg = conv::conv2d_backward(self.value(*x), self.value(*w), *geom, g)?;
                self.accumulate(grads, *x, cg.x);
                self.accumulate(grads, *w, cg.w);
                if let Some(b) = b {
                    self.accumulate(grads, *b, cg.b);
                }
            }
            Op::DeformConv { spec, m, offsets, mask, w, b } => {
                let dg = deform::deform_conv_backward(
                    spec,
                    self.value(*m),
                    self.value(*offsets),
                    self.value(*mask),
                    self.value(*w),
                    g,
                )?;
                self.accumulate(grads, *m, dg.input);
                self.accumulate(grads, *offsets, dg.offsets);
                self.accumulate(grads, *mask, dg.mask);
                self.accumulate(grads, *w, dg.weight);
                if let Some(b) = b {
                    self.accumulate(grads, *b, dg.bias);
                }
            }
            Op::Attention { q, k, v, probs } => {
                let ag = attention::attention_backward(self.value(*q), self.value(*k), self.value(*v), probs, g)?;
                self.accumulate(grads, *q, ag.q);
                self.accumulate(grads, *k, ag.k);
                self.accumulate(grads, *v, ag.v);
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for &p in parts {
                    let len = self.value(p).shape()[1];
                    self.accumulate(grads, p, g.slice_channels(start, len)?);
                    start += len;
                }
            }
            Op::Slice { x, start, len } => {
                let xs = self.value(*x);
                let (b, c) = (xs.shape()[0], xs.shape()[1]);
                let inner: usize = xs.shape()[2..].iter().product();
                let mut gx = Tensor::zeros(xs.shape());
                for bi in 0..b {
                    let dst = &mut gx.sample_mut(bi)[*start * inner..(*start + *len) * inner];
                    dst.copy_from_slice(g.sample(bi));
                }
                debug_assert!(start + len <= c);
                self.accumulate(grads, *x, gx);
            }
            Op::Reshape(x) => {
                let gx = g.clone().reshape(self.value(*x).shape())?;
                self.accumulate(grads, *x, gx);
            }
            Op::GlobalAvgPool(x) => {
                let xs = self.value(*x);
                let (_, _, h, w) = xs.dims4()?;
                let n = h * w;
                let mut gx = Tensor::zeros(xs.shape());
                for (chunk, gv) in gx.data_mut().chunks_mut(n).zip(g.data()) {
                    chunk.fill(gv / n as f64);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Linear { x, w, b } => {
                let (bn, i) = self.value(*x).dims2()?;
                let o = self.value(*w).shape()[0];
                let mut gx = Tensor::zeros(&[bn, i]);
                gemm(bn, i, o, 1.0, g.data(), false, self.value(*w).data(), false, 0.0, gx.data_mut());
                let mut gw = Tensor::zeros(&[o, i]);
                gemm(o, i, bn, 1.0, g.data(), true, self.value(*x).data(), false, 0.0, gw.data_mut());
                let mut gb = Tensor::zeros(&[o]);
                for row in g.data().chunks(o) {
                    for (acc, v) in gb.data_mut().iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *w, gw);
                self.accumulate(grads, *b, gb);
            }
            Op::MatMulNT(a, b) => {
                let (ra, e) = self.value(*a).dims2()?;
                let rb = self.value(*b).shape()[0];
                let mut ga = Tensor::zeros(&[ra, e]);
                gemm(ra, e, rb, 1.0, g.data(), false, self.value(*b).data(), false, 0.0, ga.data_mut());
                let mut gb = Tensor::zeros(&[rb, e]);
                gemm(rb, e, ra, 1.0, g.data(), true, self.value(*a).data(), false, 0.0, gb.data_mut());
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::GaussLogLik { mu, logvar, y } => {
                let (gm, gl, gy) =
                    bounds::gaussian_loglik_matrix_backward(self.value(*mu), self.value(*logvar), self.value(*y), g)?;
                self.accumulate(grads, *mu, gm);
                self.accumulate(grads, *logvar, gl);
                self.accumulate(grads, *y, gy);
            }
            Op::PairRows(x, z) => {
                let (b, dx) = self.value(*x).dims2()?;
                let dz = self.value(*z).shape()[1];
                let (gx, gz) = bounds::pair_rows_backward(g, b, dx, dz)?;
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *z, gz);
            }
            Op::GaussLogLikPairs { mu, logvar, y } => {
                let (gm, gl, gy) =
                    bounds::gaussian_loglik_pairs_backward(self.value(*mu), self.value(*logvar), self.value(*y), g)?;
                self.accumulate(grads, *mu, gm);
                self.accumulate(grads, *logvar, gl);
                self.accumulate(grads, *y, gy);
            }
            Op::InfoNce(s) => {
                let gs = bounds::infonce_backward(self.value(*s), g.data()[0])?;
                self.accumulate(grads, *s, gs);
            }
            Op::L1Out(l) => {
                let gl = bounds::l1out_backward(self.value(*l), g.data()[0])?;
                self.accumulate(grads, *l, gl);
            }
            Op::DiagMean(m) => {
                let r = self.value(*m).shape()[0];
                let mut gm = Tensor::zeros(&[r, r]);
                for i in 0..r {
                    gm.data_mut()[i * r + i] = g.data()[0] / r as f64;
                }
                self.accumulate(grads, *m, gm);
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel() as f64;
                self.accumulate(grads, *a, Tensor::full(self.value(*a).shape(), g.data()[0] / n));
            }
            Op::Sum(a) => {
                self.accumulate(grads, *a, Tensor::full(self.value(*a).shape(), g.data()[0]));
            }
            Op::Mse(p, t) => {
                let n = self.value(*p).numel() as f64;
                let s = 2.0 * g.data()[0] / n;
                let gp = self.value(*p).zip_map(self.value(*t), |a, b| s * (a - b))?;
                self.accumulate(grads, *t, gp.scale(-1.0));
                self.accumulate(grads, *p, gp);
            }
        }
        Ok(())
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Central finite-difference gradient of `f` with respect to every entry of `x`.
pub fn numerical_gradient(x: &Tensor, eps: f64, mut f: impl FnMut(&Tensor) -> Result<f64>) -> Result<Tensor> {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(out)
}

/// Relative error `max|a - n| / max(max|a|, max|n|, 1e-6)` between analytic and numeric gradients.
/// The floor makes gradients that vanish identically (a key bias under softmax) compare in absolute terms.
pub fn gradient_rel_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    let scale = analytic.max_abs().max(numeric.max_abs()).max(1e-6);
    analytic.max_abs_diff(numeric) / scale
}

pub(crate) fn require_batch(b: usize, what: &str) -> Result<()> {
    if b < 2 {
        return Err(Error::InvalidArgument(format!("{what}: batch of {b}; at least 2 samples are required")));
    }
    Ok(())
}
