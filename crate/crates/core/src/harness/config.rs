//! Run configuration. Defaults are desk scale; [`RunConfig::full_size`] holds the
//! full-size settings as a preset.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SparsityPattern;
use crate::depth_network::{FeatureMode, LrSchedule};
use crate::diffusion::ScheduleConfig;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::metrics::AlignmentMode;
use crate::noise_predictor::{FeatureTap, NoisePredictorConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    #[default]
    Noise,
    Depth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseStageConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub network: NoisePredictorConfig,
}

impl Default for NoiseStageConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 4,
            lr: 2e-3,
            network: NoisePredictorConfig::desk(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthStageConfig {
    /// Ignored when `epochs` is set.
    pub steps: u64,
    /// Passes over the training split; overrides `steps`.
    pub epochs: Option<u64>,
    pub batch_size: usize,
    pub lr: LrSchedule,
    /// Epochs between learning-rate drops; overrides `lr.every` when set.
    pub lr_drop_epochs: Option<u64>,
    pub encoder_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub feature_mode: FeatureMode,
}

impl Default for DepthStageConfig {
    fn default() -> Self {
        Self {
            steps: 600,
            epochs: None,
            batch_size: 4,
            lr: LrSchedule {
                initial: 2e-3,
                decrement: 4e-4,
                every: 200,
                min: 2e-4,
            },
            lr_drop_epochs: None,
            encoder_channels: vec![12, 16, 24, 32],
            decoder_channels: vec![32, 24, 16, 12],
            feature_mode: FeatureMode::Fresh,
        }
    }
}

impl DepthStageConfig {
    /// Step budget and learning-rate schedule for a training split of `n` images.
    pub fn resolve(&self, n: usize) -> (u64, LrSchedule) {
        let per_epoch = n.div_ceil(self.batch_size.max(1)).max(1) as u64;
        let steps = self.epochs.map_or(self.steps, |e| e * per_epoch);
        let mut lr = self.lr;
        if let Some(e) = self.lr_drop_epochs {
            lr.every = (e * per_epoch).max(1);
        }
        (steps, lr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsifyConfig {
    pub density: f64,
    pub pattern: SparsityPattern,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub stage: Stage,
    pub dataset: Option<PathBuf>,
    pub schedule: ScheduleConfig,
    pub taps: Vec<FeatureTap>,
    pub loss: LossConfig,
    pub noise: NoiseStageConfig,
    pub depth: DepthStageConfig,
    pub seed: u64,
    pub fusion_enabled: bool,
    pub stage1_checkpoint: Option<PathBuf>,
    /// Applied to the training split's ground truth before stage 2.
    pub sparsify: Option<SparsifyConfig>,
    pub alignment_mode: AlignmentMode,
    pub max_depth: Option<f64>,
    pub min_object_pixels: usize,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Noise,
            dataset: None,
            schedule: ScheduleConfig::default(),
            taps: FeatureTap::desk_defaults(),
            loss: LossConfig::default(),
            noise: NoiseStageConfig::default(),
            depth: DepthStageConfig::default(),
            seed: 0,
            fusion_enabled: true,
            stage1_checkpoint: None,
            sparsify: None,
            alignment_mode: AlignmentMode::MedianScaleShift,
            max_depth: None,
            min_object_pixels: 4,
            out: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    /// Full-size settings: 256x256 noise predictor trained at batch 8 and
    /// learning rate 1e-4; depth network at batch 16 starting from 5e-5 and
    /// dropping by 1e-5 every five epochs.
    pub fn full_size() -> Self {
        let mut c = Self::default();
        c.taps = FeatureTap::full_size_defaults();
        c.noise = NoiseStageConfig {
            steps: 100_000,
            batch_size: 8,
            lr: 1e-4,
            network: NoisePredictorConfig::full_size(),
        };
        c.depth.epochs = Some(20);
        c.depth.batch_size = 16;
        c.depth.lr = LrSchedule {
            initial: 5e-5,
            decrement: 1e-5,
            every: 1,
            min: 1e-5,
        };
        c.depth.lr_drop_epochs = Some(5);
        c
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.schedule.build()?;
        self.noise.network.validate()?;
        if self.taps.is_empty() {
            return Err(Error::Config("at least one feature tap is required".into()));
        }
        if self.noise.batch_size == 0 || self.depth.batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if let Some(s) = &self.sparsify {
            if !(s.density > 0.0 && s.density <= 1.0) {
                return Err(Error::Config(format!("sparsify density {} outside (0, 1]", s.density)));
            }
        }
        if self.stage == Stage::Depth && self.fusion_enabled && self.stage1_checkpoint.is_none() {
            return Err(Error::Config("depth stage with fusion requires stage1_checkpoint".into()));
        }
        Ok(())
    }

    /// The dataset root, which must hold a manifest.
    pub fn dataset_root(&self) -> Result<&Path> {
        let root = self
            .dataset
            .as_deref()
            .ok_or_else(|| Error::Config("no dataset path configured".into()))?;
        if !root.join(crate::data::dataset::MANIFEST).is_file() {
            return Err(Error::Data(format!("dataset {} has no manifest", root.display())));
        }
        Ok(root)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_partial_files() {
        let c = RunConfig::full_size();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let partial: RunConfig = serde_json::from_str(r#"{"seed": 7, "loss": {"lambda": 0.0}}"#).unwrap();
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.loss.lambda, 0.0);
        assert_eq!(partial.loss.alpha, 0.1);
    }

    #[test]
    fn full_size_schedule_resolution() {
        let c = RunConfig::full_size();
        let (steps, lr) = c.depth.resolve(160);
        assert_eq!(steps, 200);
        assert_eq!(lr.every, 50);
        assert!((lr.at(0) - 5e-5).abs() < 1e-15);
        assert!((lr.at(50) - 4e-5).abs() < 1e-15);
        assert_eq!(lr.at(10_000), 1e-5);
        let taps: Vec<usize> = c.taps.iter().map(|t| t.step).collect();
        assert_eq!(taps, vec![50, 100, 150, 150, 150]);
    }
}
