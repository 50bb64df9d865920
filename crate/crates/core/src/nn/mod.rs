//! Minimal neural-network toolkit: dense tensors, a reverse-mode tape,
//! the handful of layers the two networks need, and Adam.

pub mod graph;
pub mod kernels;
pub mod layers;
pub mod optim;
pub mod params;

pub use graph::{Graph, Var};
pub use layers::{Conv2d, GroupNorm, Linear};
pub use optim::{Adam, AdamConfig};
pub use params::{Gradients, ParamId, ParamStore};

#[cfg(test)]
mod gradcheck;
