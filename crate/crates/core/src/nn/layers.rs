//! Parameterised building blocks used by both networks.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
    pub cin: usize,
    pub cout: usize,
}

impl Conv2d {
    /// `k x k` convolution with "same" padding at stride 1.
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / ((cin * k * k) as f32).sqrt();
        let weight = store.add_uniform(format!("{name}.weight"), &[cout, cin, k, k], bound, rng);
        let bias = store.add_uniform(format!("{name}.bias"), &[cout], bound, rng);
        Self { weight, bias, stride, pad: k / 2, cin, cout }
    }

    /// Same as [`Conv2d::new`] but with weights and bias set to zero.
    pub fn zeroed(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), Tensor::zeros(&[cout, cin, k, k]));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]));
        Self { weight, bias, stride: 1, pad: k / 2, cin, cout }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, din: usize, dout: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (din as f32).sqrt();
        let weight = store.add_uniform(format!("{name}.weight"), &[dout, din], bound, rng);
        let bias = store.add_uniform(format!("{name}.bias"), &[dout], bound, rng);
        Self { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.linear(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl GroupNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, max_groups: usize) -> Self {
        let groups = (1..=max_groups.min(channels)).rev().find(|g| channels % g == 0).unwrap_or(1);
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[channels]));
        Self { gamma, beta, groups }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.group_norm(x, gamma, beta, self.groups)
    }
}
