//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every op applied during one forward pass. Parameter
//! leaves borrow their value from the [`ParamStore`], so building a graph
//! never copies weights. [`Graph::backward`] walks the tape in reverse and
//! returns the gradient of a scalar node with respect to every parameter
//! that took part in the pass.

use super::kernels::{self, ConvGeom};
use super::params::{Gradients, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Input,
    Param(ParamId),
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    Linear { x: Var, w: Var, b: Var },
    Add(Var, Var),
    AddChannel { x: Var, y: Var },
    Scale(Var, f32),
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, mean: Vec<f32>, rstd: Vec<f32> },
    Silu(Var),
    AvgPool2(Var),
    Upsample2(Var),
    Concat(Vec<Var>),
    Attention { qkv: Var, heads: usize, probs: Vec<f32> },
    Mse { x: Var, target: Tensor },
    Dot { x: Var, weights: Tensor },
}

struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Input | Op::Param(_) => vec![],
            Op::Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(*b);
                v
            }
            Op::Linear { x, w, b } => vec![*x, *w, *b],
            Op::Add(a, b) => vec![*a, *b],
            Op::AddChannel { x, y } => vec![*x, *y],
            Op::GroupNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Scale(x, _) | Op::Silu(x) | Op::AvgPool2(x) | Op::Upsample2(x) => vec![*x],
            Op::Concat(xs) => xs.clone(),
            Op::Attention { qkv, .. } => vec![*qkv],
            Op::Mse { x, .. } | Op::Dot { x, .. } => vec![*x],
        }
    }
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.get(*id),
        }
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let (n, cin, h, wd) = xv.dims4();
        let (cout, wcin, k, _) = wv.dims4();
        assert_eq!(cin, wcin, "conv input channels {cin} != weight channels {wcin}");
        let g = ConvGeom { cin, h, w: wd, k, stride, pad };
        let (ho, wo) = g.out_hw();
        let out = kernels::conv2d(xv.data(), n, &g, wv.data(), cout, b.map(|b| self.value(b).data()));
        let out = Tensor::from_vec(&[n, cout, ho, wo], out).expect("conv shape");
        self.push(out, Op::Conv2d { x, w, b, stride, pad })
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let (n, din) = (xv.shape()[0], xv.shape()[1]);
        let dout = wv.shape()[0];
        assert_eq!(wv.shape()[1], din);
        let mut out = vec![0.0f32; n * dout];
        for row in out.chunks_mut(dout) {
            row.copy_from_slice(self.value(b).data());
        }
        kernels::gemm(n, din, dout, xv.data(), (din, 1), wv.data(), (1, din), &mut out, 1.0);
        self.push(Tensor::from_vec(&[n, dout], out).unwrap(), Op::Linear { x, w, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.shape(), self.value(b).shape(), "add shape mismatch");
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// `x[n, c, h, w] + y[n, c]`.
    pub fn add_channel(&mut self, x: Var, y: Var) -> Var {
        let mut out = self.value(x).clone();
        let (n, c, h, w) = out.dims4();
        let yv = self.value(y).data();
        assert_eq!(yv.len(), n * c);
        for (plane, &add) in out.data_mut().chunks_mut(h * w).zip(yv) {
            plane.iter_mut().for_each(|v| *v += add);
        }
        self.push(out, Op::AddChannel { x, y })
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale(x, factor))
    }

    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Var {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4();
        assert_eq!(c % groups, 0, "{c} channels not divisible into {groups} groups");
        let hw = h * w;
        let (mean, rstd) = kernels::group_norm_stats(xv.data(), n, c, hw, groups, 1e-5);
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let cpg = c / groups;
        let mut out = xv.data().to_vec();
        for b in 0..n {
            for ch in 0..c {
                let gi = b * groups + ch / cpg;
                let (m, r) = (mean[gi], rstd[gi]);
                let plane = &mut out[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                for v in plane {
                    *v = (*v - m) * r * gv[ch] + bv[ch];
                }
            }
        }
        let out = Tensor::from_vec(&[n, c, h, w], out).unwrap();
        self.push(out, Op::GroupNorm { x, gamma, beta, groups, mean, rstd })
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * kernels::sigmoid(v));
        self.push(out, Op::Silu(x))
    }

    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4();
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![0.0f32; n * c * oh * ow];
        for (src, dst) in xv.data().chunks(h * w).zip(out.chunks_mut(oh * ow)) {
            for y in 0..oh {
                for xx in 0..ow {
                    let i = 2 * y * w + 2 * xx;
                    dst[y * ow + xx] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
                }
            }
        }
        self.push(Tensor::from_vec(&[n, c, oh, ow], out).unwrap(), Op::AvgPool2(x))
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4();
        let (oh, ow) = (h * 2, w * 2);
        let mut out = vec![0.0f32; n * c * oh * ow];
        for (src, dst) in xv.data().chunks(h * w).zip(out.chunks_mut(oh * ow)) {
            for y in 0..oh {
                for xx in 0..ow {
                    dst[y * ow + xx] = src[(y / 2) * w + xx / 2];
                }
            }
        }
        self.push(Tensor::from_vec(&[n, c, oh, ow], out).unwrap(), Op::Upsample2(x))
    }

    /// Concatenation along the channel axis.
    pub fn concat(&mut self, xs: &[Var]) -> Var {
        let (n, _, h, w) = self.value(xs[0]).dims4();
        let channels: Vec<usize> = xs
            .iter()
            .map(|&v| {
                let (vn, vc, vh, vw) = self.value(v).dims4();
                assert_eq!((vn, vh, vw), (n, h, w), "concat spatial mismatch");
                vc
            })
            .collect();
        let total: usize = channels.iter().sum();
        let hw = h * w;
        let mut out = Vec::with_capacity(n * total * hw);
        for b in 0..n {
            for (&v, &c) in xs.iter().zip(&channels) {
                out.extend_from_slice(&self.value(v).data()[b * c * hw..(b + 1) * c * hw]);
            }
        }
        self.push(Tensor::from_vec(&[n, total, h, w], out).unwrap(), Op::Concat(xs.to_vec()))
    }

    /// Multi-head self-attention over spatial positions. `qkv` is
    /// `[n, 3c, h, w]` holding queries, keys and values stacked on channels;
    /// the output is `[n, c, h, w]`.
    pub fn attention(&mut self, qkv: Var, heads: usize) -> Var {
        let qv = self.value(qkv);
        let (n, c3, h, w) = qv.dims4();
        let c = c3 / 3;
        assert_eq!(c % heads, 0);
        let d = c / heads;
        let t = h * w;
        let scale = 1.0 / (d as f32).sqrt();
        let mut probs = vec![0.0f32; n * heads * t * t];
        let mut out = vec![0.0f32; n * c * t];
        let data = qv.data();
        for b in 0..n {
            for hd in 0..heads {
                let q = &data[(b * c3 + hd * d) * t..(b * c3 + (hd + 1) * d) * t];
                let k = &data[(b * c3 + c + hd * d) * t..(b * c3 + c + (hd + 1) * d) * t];
                let v = &data[(b * c3 + 2 * c + hd * d) * t..(b * c3 + 2 * c + (hd + 1) * d) * t];
                let p = &mut probs[(b * heads + hd) * t * t..(b * heads + hd + 1) * t * t];
                // scores[i, j] = sum_c q[c, i] k[c, j]
                kernels::gemm(t, d, t, q, (1, t), k, (t, 1), p, 0.0);
                for row in p.chunks_mut(t) {
                    let mx = row.iter().fold(f32::NEG_INFINITY, |a, &s| a.max(s * scale));
                    let mut sum = 0.0;
                    for s in row.iter_mut() {
                        *s = (*s * scale - mx).exp();
                        sum += *s;
                    }
                    row.iter_mut().for_each(|s| *s /= sum);
                }
                // out[c, i] = sum_j v[c, j] p[i, j]
                let o = &mut out[(b * c + hd * d) * t..(b * c + (hd + 1) * d) * t];
                kernels::gemm(d, t, t, v, (t, 1), p, (1, t), o, 0.0);
            }
        }
        let out = Tensor::from_vec(&[n, c, h, w], out).unwrap();
        self.push(out, Op::Attention { qkv, heads, probs })
    }

    /// Mean squared error against a constant target; returns a scalar node.
    pub fn mse(&mut self, x: Var, target: Tensor) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape(), target.shape(), "mse shape mismatch");
        let sum: f64 = xv
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| ((a - b) as f64).powi(2))
            .sum();
        let v = (sum / xv.len() as f64) as f32;
        self.push(Tensor::scalar(v), Op::Mse { x, target })
    }

    /// `sum(x * weights)` with constant weights. Backpropagating this scalar
    /// injects `weights` as the upstream gradient of `x`, which is how losses
    /// with hand-derived gradients are attached to the tape.
    pub fn dot(&mut self, x: Var, weights: Tensor) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.len(), weights.len(), "dot shape mismatch");
        let v: f64 = xv.data().iter().zip(weights.data()).map(|(&a, &b)| a as f64 * b as f64).sum();
        self.push(Tensor::scalar(v as f32), Op::Dot { x, weights })
    }

    /// Reverse pass from scalar node `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::new(self.store.len());

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(e) => e.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(gout) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            match &self.nodes[idx].op {
                Op::Input => {}
                Op::Param(id) => out.accumulate(*id, gout),
                Op::Conv2d { x, w, b, stride, pad } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let (n, cin, h, wd) = xv.dims4();
                    let (cout, _, k, _) = wv.dims4();
                    let g = ConvGeom { cin, h, w: wd, k, stride: *stride, pad: *pad };
                    let need_dx = self.needs_grad(*x);
                    let (dx, dw, db) = kernels::conv2d_backward(xv.data(), n, &g, wv.data(), cout, gout.data(), need_dx, true);
                    if let Some(dx) = dx {
                        acc(&mut grads, *x, Tensor::from_vec(xv.shape(), dx).unwrap());
                    }
                    acc(&mut grads, *w, Tensor::from_vec(wv.shape(), dw).unwrap());
                    if let Some(b) = b {
                        acc(&mut grads, *b, Tensor::from_vec(&[cout], db).unwrap());
                    }
                }
                Op::Linear { x, w, b } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let (n, din) = (xv.shape()[0], xv.shape()[1]);
                    let dout = wv.shape()[0];
                    let gy = gout.data();
                    let mut dx = vec![0.0f32; n * din];
                    kernels::gemm(n, dout, din, gy, (dout, 1), wv.data(), (din, 1), &mut dx, 0.0);
                    let mut dw = vec![0.0f32; dout * din];
                    kernels::gemm(dout, n, din, gy, (1, dout), xv.data(), (din, 1), &mut dw, 0.0);
                    let mut db = vec![0.0f32; dout];
                    for row in gy.chunks(dout) {
                        db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    acc(&mut grads, *x, Tensor::from_vec(xv.shape(), dx).unwrap());
                    acc(&mut grads, *w, Tensor::from_vec(wv.shape(), dw).unwrap());
                    acc(&mut grads, *b, Tensor::from_vec(&[dout], db).unwrap());
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, gout.clone());
                    acc(&mut grads, *a, gout);
                }
                Op::AddChannel { x, y } => {
                    let (n, c, h, w) = gout.dims4();
                    let dy: Vec<f32> = gout.data().chunks(h * w).map(|p| p.iter().sum()).collect();
                    acc(&mut grads, *y, Tensor::from_vec(&[n, c], dy).unwrap());
                    acc(&mut grads, *x, gout);
                }
                Op::Scale(x, f) => acc(&mut grads, *x, gout.map(|v| v * f)),
                Op::GroupNorm { x, gamma, beta, groups, mean, rstd } => {
                    let xv = self.value(*x);
                    let (n, c, h, w) = xv.dims4();
                    let hw = h * w;
                    let cpg = c / groups;
                    let gv = self.value(*gamma).data();
                    let mut dx = vec![0.0f32; xv.len()];
                    let mut dgamma = vec![0.0f32; c];
                    let mut dbeta = vec![0.0f32; c];
                    let per = (cpg * hw) as f32;
                    for b in 0..n {
                        for gi in 0..*groups {
                            let si = b * groups + gi;
                            let (m, r) = (mean[si], rstd[si]);
                            let start = (b * c + gi * cpg) * hw;
                            let end = start + cpg * hw;
                            let xs = &xv.data()[start..end];
                            let gs = &gout.data()[start..end];
                            let mut sum_dyh = 0.0f32;
                            let mut sum_dyh_xh = 0.0f32;
                            for (j, (&xj, &gj)) in xs.iter().zip(gs).enumerate() {
                                let ch = gi * cpg + j / hw;
                                let xh = (xj - m) * r;
                                let dyh = gj * gv[ch];
                                sum_dyh += dyh;
                                sum_dyh_xh += dyh * xh;
                                dgamma[ch] += gj * xh;
                                dbeta[ch] += gj;
                            }
                            let mean_dyh = sum_dyh / per;
                            let mean_dyh_xh = sum_dyh_xh / per;
                            for (j, (&xj, &gj)) in xs.iter().zip(gs).enumerate() {
                                let ch = gi * cpg + j / hw;
                                let xh = (xj - m) * r;
                                dx[start + j] = r * (gj * gv[ch] - mean_dyh - xh * mean_dyh_xh);
                            }
                        }
                    }
                    acc(&mut grads, *x, Tensor::from_vec(xv.shape(), dx).unwrap());
                    acc(&mut grads, *gamma, Tensor::from_vec(&[c], dgamma).unwrap());
                    acc(&mut grads, *beta, Tensor::from_vec(&[c], dbeta).unwrap());
                }
                Op::Silu(x) => {
                    let xv = self.value(*x);
                    let mut g = gout;
                    for (gv, &v) in g.data_mut().iter_mut().zip(xv.data()) {
                        let s = kernels::sigmoid(v);
                        *gv *= s * (1.0 + v * (1.0 - s));
                    }
                    acc(&mut grads, *x, g);
                }
                Op::AvgPool2(x) => {
                    let xv = self.value(*x);
                    let (_, _, h, w) = xv.dims4();
                    let (oh, ow) = (h / 2, w / 2);
                    let mut dx = vec![0.0f32; xv.len()];
                    for (src, dst) in gout.data().chunks(oh * ow).zip(dx.chunks_mut(h * w)) {
                        for y in 0..oh {
                            for xx in 0..ow {
                                let g = 0.25 * src[y * ow + xx];
                                let i = 2 * y * w + 2 * xx;
                                dst[i] = g;
                                dst[i + 1] = g;
                                dst[i + w] = g;
                                dst[i + w + 1] = g;
                            }
                        }
                    }
                    acc(&mut grads, *x, Tensor::from_vec(xv.shape(), dx).unwrap());
                }
                Op::Upsample2(x) => {
                    let xv = self.value(*x);
                    let (_, _, h, w) = xv.dims4();
                    let ow = w * 2;
                    let mut dx = vec![0.0f32; xv.len()];
                    for (src, dst) in gout.data().chunks(4 * h * w).zip(dx.chunks_mut(h * w)) {
                        for (i, &g) in src.iter().enumerate() {
                            let (y, xx) = (i / ow, i % ow);
                            dst[(y / 2) * w + xx / 2] += g;
                        }
                    }
                    acc(&mut grads, *x, Tensor::from_vec(xv.shape(), dx).unwrap());
                }
                Op::Concat(xs) => {
                    let (n, total, h, w) = gout.dims4();
                    let hw = h * w;
                    let mut offset = 0;
                    for &v in xs {
                        let c = self.value(v).dims4().1;
                        if self.needs_grad(v) {
                            let mut g = Vec::with_capacity(n * c * hw);
                            for b in 0..n {
                                let base = (b * total + offset) * hw;
                                g.extend_from_slice(&gout.data()[base..base + c * hw]);
                            }
                            acc(&mut grads, v, Tensor::from_vec(&[n, c, h, w], g).unwrap());
                        }
                        offset += c;
                    }
                }
                Op::Attention { qkv, heads, probs } => {
                    let qv = self.value(*qkv);
                    let (n, c3, h, w) = qv.dims4();
                    let c = c3 / 3;
                    let d = c / heads;
                    let t = h * w;
                    let scale = 1.0 / (d as f32).sqrt();
                    let data = qv.data();
                    let go = gout.data();
                    let mut dqkv = vec![0.0f32; qv.len()];
                    let mut dp = vec![0.0f32; t * t];
                    for b in 0..n {
                        for hd in 0..*heads {
                            let qo = (b * c3 + hd * d) * t;
                            let ko = (b * c3 + c + hd * d) * t;
                            let vo = (b * c3 + 2 * c + hd * d) * t;
                            let p = &probs[(b * heads + hd) * t * t..(b * heads + hd + 1) * t * t];
                            let o_grad = &go[(b * c + hd * d) * t..(b * c + (hd + 1) * d) * t];
                            // dV[c, j] = sum_i dO[c, i] p[i, j]
                            kernels::gemm(d, t, t, o_grad, (t, 1), p, (t, 1), &mut dqkv[vo..vo + d * t], 0.0);
                            // dP[i, j] = sum_c dO[c, i] v[c, j]
                            kernels::gemm(t, d, t, o_grad, (1, t), &data[vo..vo + d * t], (t, 1), &mut dp, 0.0);
                            for (prow, dprow) in p.chunks(t).zip(dp.chunks_mut(t)) {
                                let dotp: f32 = prow.iter().zip(dprow.iter()).map(|(a, b)| a * b).sum();
                                for (g, &pv) in dprow.iter_mut().zip(prow) {
                                    *g = pv * (*g - dotp) * scale;
                                }
                            }
                            // dQ[c, i] = sum_j dS[i, j] k[c, j]
                            kernels::gemm(d, t, t, &data[ko..ko + d * t], (t, 1), &dp, (1, t), &mut dqkv[qo..qo + d * t], 0.0);
                            // dK[c, j] = sum_i dS[i, j] q[c, i]
                            kernels::gemm(d, t, t, &data[qo..qo + d * t], (t, 1), &dp, (t, 1), &mut dqkv[ko..ko + d * t], 0.0);
                        }
                    }
                    acc(&mut grads, *qkv, Tensor::from_vec(qv.shape(), dqkv).unwrap());
                }
                Op::Mse { x, target } => {
                    let xv = self.value(*x);
                    let f = 2.0 * gout.data()[0] / xv.len() as f32;
                    let g: Vec<f32> = xv.data().iter().zip(target.data()).map(|(&a, &b)| f * (a - b)).collect();
                    acc(&mut grads, *x, Tensor::from_vec(xv.shape(), g).unwrap());
                }
                Op::Dot { x, weights } => {
                    let f = gout.data()[0];
                    let g = weights.map(|v| v * f).reshape(self.value(*x).shape()).unwrap();
                    acc(&mut grads, *x, g);
                }
            }
        }
        out
    }

    /// Whether any parameter lies upstream of `v`.
    fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }
}
