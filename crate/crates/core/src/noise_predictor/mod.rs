//! The diffusion noise predictor and structure-feature extraction.

mod features;
mod train;
mod unet;

pub use features::{check_taps, extract_structure_features, remap_block, FeatureBundle, FeatureScale, FeatureTap};
pub use train::{
    load_noise_predictor, smoothed_endpoints, train_noise_predictor, NoiseTrainOptions, NoiseTrainer,
    TrainedNoisePredictor, CHECKPOINT_KIND,
};
pub use unet::{step_embedding, BlockInfo, BlockKind, NoisePredictor, NoisePredictorConfig, UNetOutput};
