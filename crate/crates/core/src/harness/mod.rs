//! Two-stage training, evaluation and visualisation behind the CLI.

pub mod cli;
pub mod commands;
pub mod config;

pub use config::{DepthStageConfig, NoiseStageConfig, RunConfig, SparsifyConfig, Stage};
