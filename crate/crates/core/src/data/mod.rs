//! Synthetic scenes, annotation thinning, and file formats.

pub mod dataset;
pub mod pfm;
pub mod png_io;
pub mod scene;
pub mod sparsify;

pub use dataset::{sparsify_dataset, synth_split, write_synthetic, Dataset, Manifest, Sample};
pub use pfm::{decode_pfm, encode_pfm, load_depth_pfm, save_depth_pfm};
pub use scene::{synth_scene, Scene};
pub use sparsify::{density_tolerance, occupied_rows, sparsify, target_count, SparsityPattern};
