pub mod checkpoint;
pub mod cluster;
pub mod data;
pub mod depth_map;
pub mod depth_network;
pub mod diffusion;
pub mod error;
pub mod feature_viz;
pub mod harness;
pub mod losses;
pub mod masks;
pub mod metrics;
pub mod nn;
pub mod noise_predictor;
pub mod rng;
pub mod tensor;

pub use depth_map::DepthMap;
pub use error::{Error, Result};
pub use tensor::Tensor;
