//! Single-image depth prediction with structure-feature fusion.

mod net;
mod train;

use std::path::Path;

pub use net::{DepthNet, DepthPredictorConfig, FeatureFusion};
pub use train::{
    abnormal_pixel_count, evaluate_predictions, load_depth_predictor, predict_samples, DepthTrainOptions, DepthTrainer,
    Evaluation, FeatureMode, LrSchedule, StructureSource, TrainItem, CHECKPOINT_KIND,
};

use crate::data::{png_io, save_depth_pfm};
use crate::depth_map::DepthMap;
use crate::error::Result;

/// Writes `depth` as PFM and as a colour-mapped PNG stretched over the valid
/// value range.
pub fn export_depth(depth: &DepthMap, pfm: &Path, png: &Path) -> Result<()> {
    save_depth_pfm(depth, pfm)?;
    let valid: Vec<f64> = (0..depth.len()).filter(|&i| depth.valid[i]).map(|i| depth.values[i]).collect();
    let lo = valid.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = valid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut rgb = Vec::with_capacity(depth.len() * 3);
    for i in 0..depth.len() {
        let c = if depth.valid[i] {
            png_io::colormap(((depth.values[i] - lo) / span) as f32)
        } else {
            [0, 0, 0]
        };
        rgb.extend_from_slice(&c);
    }
    png_io::write_rgb8(png, depth.width, depth.height, &rgb)
}
