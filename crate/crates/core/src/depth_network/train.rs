//! Stage-2 training: the depth network learns from sparse ground truth while
//! the noise predictor stays frozen and supplies structure features.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::net::{DepthNet, DepthPredictorConfig};
use crate::checkpoint::{store_hash, Checkpoint};
use crate::data::Sample;
use crate::depth_map::DepthMap;
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::losses::{align_pair, integrality_plan, total_loss_grad, LossBreakdown, LossConfig};
use crate::metrics::{compute_metrics, AlignmentMode, MetricsReport};
use crate::nn::{Adam, AdamConfig, Graph, ParamStore};
use crate::noise_predictor::{check_taps, extract_structure_features, FeatureBundle, FeatureScale, FeatureTap, NoisePredictor};
use crate::rng::{derive_rng, tags};
use crate::tensor::Tensor;

pub const CHECKPOINT_KIND: &str = "depth_predictor";

/// When structure features are drawn during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// New diffusion noise at every step.
    #[default]
    Fresh,
    /// One draw per training image, reused across steps.
    Cached,
}

/// Step-wise linear decay: `initial - decrement * floor(step / every)`,
/// never below `min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub decrement: f64,
    pub every: u64,
    pub min: f64,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self {
            initial: lr,
            decrement: 0.0,
            every: 1,
            min: lr,
        }
    }

    pub fn at(&self, step: u64) -> f64 {
        let drops = step / self.every.max(1);
        (self.initial - self.decrement * drops as f64).max(self.min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthTrainOptions {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: LrSchedule,
    pub seed: u64,
    pub loss: LossConfig,
    pub feature_mode: FeatureMode,
}

impl DepthTrainOptions {
    pub fn desk() -> Self {
        Self {
            steps: 600,
            batch_size: 4,
            lr: LrSchedule {
                initial: 2e-3,
                decrement: 4e-4,
                every: 200,
                min: 2e-4,
            },
            seed: 0,
            loss: LossConfig::default(),
            feature_mode: FeatureMode::Fresh,
        }
    }
}

/// The frozen noise predictor viewed as a feature extractor.
pub struct StructureSource {
    pub net: NoisePredictor,
    pub store: ParamStore,
    pub taps: Vec<FeatureTap>,
    pub sched: NoiseSchedule,
}

impl StructureSource {
    pub fn new(net: NoisePredictor, store: ParamStore, taps: Vec<FeatureTap>, sched: NoiseSchedule) -> Result<Self> {
        check_taps(&net, &taps, &sched)?;
        Ok(Self { net, store, taps, sched })
    }

    /// Channels per scale after same-scale taps are concatenated.
    pub fn channels(&self) -> BTreeMap<FeatureScale, usize> {
        let mut out = BTreeMap::new();
        for t in &self.taps {
            *out.entry(t.target_scale).or_insert(0) += self.net.block_infos()[t.block].channels;
        }
        out
    }

    pub fn weight_hash(&self) -> String {
        store_hash(&self.store)
    }

    pub fn extract(&self, x0: &Tensor, rng: &mut rand_chacha::ChaCha8Rng) -> Result<FeatureBundle> {
        extract_structure_features(&self.net, &self.store, x0, &self.taps, &self.sched, rng)
    }

    /// Features for item `index` of an evaluation set, independent of batching.
    pub fn extract_eval(&self, image: &Tensor, seed: u64, index: usize) -> Result<FeatureBundle> {
        let x = Tensor::stack(&[image])?;
        self.extract(&x, &mut derive_rng(seed, &[tags::FEATURES, tags::EVAL, index as u64]))
    }
}

/// A training image with sparse supervision and occlusion-refined masks.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub image: Tensor,
    pub gt: DepthMap,
    pub objects: crate::masks::ObjectMaskSet,
}

impl TrainItem {
    /// Refines the sample's occlusion masks and attaches sparse ground truth.
    pub fn new(sample: &Sample, sparse_gt: DepthMap, cfg: &LossConfig, seed: u64) -> Result<Self> {
        let mut objects = sample.objects.clone();
        objects.refine_occlusion(&sample.image, cfg.occlusion(), seed)?;
        Ok(Self {
            image: sample.image.clone(),
            gt: sparse_gt,
            objects,
        })
    }
}

pub struct DepthTrainer {
    pub net: DepthNet,
    pub store: ParamStore,
    pub adam: Adam,
    pub options: DepthTrainOptions,
    pub history: Vec<LossBreakdown>,
    cache: Vec<Option<FeatureBundle>>,
}

impl DepthTrainer {
    pub fn new(config: DepthPredictorConfig, options: DepthTrainOptions) -> Result<Self> {
        options.loss.validate()?;
        if options.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let mut store = ParamStore::new();
        let net = DepthNet::new(config, &mut store, &mut derive_rng(options.seed, &[tags::INIT]))?;
        let adam = Adam::new(
            AdamConfig {
                lr: options.lr.at(0),
                ..Default::default()
            },
            &store,
        );
        Ok(Self {
            net,
            store,
            adam,
            options,
            history: Vec::new(),
            cache: Vec::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.adam.step_count()
    }

    fn batch_features(&mut self, items: &[TrainItem], picks: &[usize], x: &Tensor, source: Option<&StructureSource>, step: u64) -> Result<Option<FeatureBundle>> {
        let Some(src) = source.filter(|_| self.net.config.fusion_enabled) else {
            return Ok(None);
        };
        match self.options.feature_mode {
            FeatureMode::Fresh => {
                let mut rng = derive_rng(self.options.seed, &[tags::FEATURES, step]);
                Ok(Some(src.extract(x, &mut rng)?))
            }
            FeatureMode::Cached => {
                if self.cache.len() != items.len() {
                    self.cache = vec![None; items.len()];
                }
                let mut parts = Vec::with_capacity(picks.len());
                for &i in picks {
                    if self.cache[i].is_none() {
                        let xi = Tensor::stack(&[&items[i].image])?;
                        let mut rng = derive_rng(self.options.seed, &[tags::FEATURES, u64::MAX, i as u64]);
                        self.cache[i] = Some(src.extract(&xi, &mut rng)?);
                    }
                    parts.push(self.cache[i].clone().expect("cached"));
                }
                Ok(Some(FeatureBundle::concat_batch(&parts)?))
            }
        }
    }

    /// One optimisation step; returns the batch-mean loss breakdown.
    pub fn train_step(&mut self, items: &[TrainItem], source: Option<&StructureSource>) -> Result<LossBreakdown> {
        if items.is_empty() {
            return Err(Error::Data("depth training needs at least one image".into()));
        }
        if self.net.config.fusion_enabled && source.is_none() {
            return Err(Error::Config("fusion enabled but no stage-1 network supplied".into()));
        }
        let step = self.step_count();
        let mut rng = derive_rng(self.options.seed, &[tags::BATCH, step]);
        let picks: Vec<usize> = (0..self.options.batch_size).map(|_| rng.random_range(0..items.len())).collect();
        let images: Vec<&Tensor> = picks.iter().map(|&i| &items[i].image).collect();
        let x = Tensor::stack(&images)?;
        let features = self.batch_features(items, &picks, &x, source, step)?;

        let mut g = Graph::new(&self.store);
        let xv = g.input(x);
        let out = self.net.forward(&mut g, xv, features.as_ref())?;
        let pred = g.value(out).clone();
        if !pred.all_finite() {
            return Err(Error::Data(format!("non-finite prediction at step {step}")));
        }
        let b = picks.len();
        let hw = pred.len() / b;
        let mut grad = vec![0.0f32; pred.len()];
        let mut mean = LossBreakdown {
            total: 0.0,
            affinity: 0.0,
            integrality: 0.0,
            flags: Default::default(),
        };
        for (j, &i) in picks.iter().enumerate() {
            let p = DepthMap::from_tensor(&pred.batch_item(j))?;
            let (bd, gr) = total_loss_grad(&p, &items[i].gt, &items[i].objects, &self.options.loss)?;
            for (dst, v) in grad[j * hw..(j + 1) * hw].iter_mut().zip(gr) {
                *dst = (v / b as f64) as f32;
            }
            mean.total += bd.total / b as f64;
            mean.affinity += bd.affinity / b as f64;
            mean.integrality += bd.integrality / b as f64;
            let f = &mut mean.flags;
            f.pred_scale_guarded |= bd.flags.pred_scale_guarded;
            f.gt_scale_guarded |= bd.flags.gt_scale_guarded;
            f.swapped_bounds += bd.flags.swapped_bounds;
            f.abnormal_pixels += bd.flags.abnormal_pixels;
            f.occluded_pixels += bd.flags.occluded_pixels;
            f.objects += bd.flags.objects;
        }
        // Backpropagate the hand-derived loss gradient through the network.
        let surrogate = g.dot(out, Tensor::from_vec(pred.shape(), grad)?);
        let grads = g.backward(surrogate);
        self.adam.set_lr(self.options.lr.at(step));
        self.adam.step(&mut self.store, &grads);
        self.history.push(mean);
        Ok(mean)
    }

    pub fn run(&mut self, items: &[TrainItem], source: Option<&StructureSource>, mut on_step: impl FnMut(u64, &LossBreakdown)) -> Result<()> {
        while self.step_count() < self.options.steps {
            let bd = self.train_step(items, source)?;
            on_step(self.step_count(), &bd);
        }
        Ok(())
    }

    /// Checkpoint recording the fusion setting and the stage-1 weight hash.
    pub fn checkpoint(&self, stage1_hash: Option<&str>, taps: &[FeatureTap]) -> Checkpoint {
        let mut ck = Checkpoint::from_store(
            CHECKPOINT_KIND,
            serde_json::to_value(&self.net.config).expect("config serializes"),
            &self.store,
        );
        ck.meta = serde_json::json!({
            "step": self.step_count(),
            "fusion_enabled": self.net.config.fusion_enabled,
            "stage1_hash": stage1_hash,
            "taps": taps,
            "options": self.options,
        });
        ck
    }
}

/// Rebuilds a depth network; `expect_fusion` rejects a checkpoint trained
/// with the other fusion setting.
pub fn load_depth_predictor(ck: &Checkpoint, expect_fusion: Option<bool>) -> Result<(DepthNet, ParamStore)> {
    ck.expect_kind(CHECKPOINT_KIND)?;
    let config: DepthPredictorConfig = serde_json::from_value(ck.config.clone())?;
    if let Some(want) = expect_fusion {
        if want != config.fusion_enabled {
            return Err(Error::Config(format!(
                "checkpoint was trained with fusion_enabled={}, configuration requests {want}",
                config.fusion_enabled
            )));
        }
    }
    let mut store = ParamStore::new();
    let net = DepthNet::new(config, &mut store, &mut derive_rng(0, &[tags::INIT]))?;
    ck.load_into(&mut store)?;
    Ok((net, store))
}

/// Per-image predictions for `samples`, batched one at a time.
pub fn predict_samples(net: &DepthNet, store: &ParamStore, source: Option<&StructureSource>, samples: &[Sample], seed: u64) -> Result<Vec<DepthMap>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let features = match source.filter(|_| net.config.fusion_enabled) {
                Some(src) => Some(src.extract_eval(&s.image, seed, i)?),
                None => None,
            };
            let x = Tensor::stack(&[&s.image])?;
            let pred = net.predict(store, &x, features.as_ref())?.remove(0);
            if !pred.values.iter().all(|v| v.is_finite()) {
                return Err(Error::Data(format!("non-finite prediction for {}", s.id)));
            }
            Ok(pred)
        })
        .collect()
}

/// Held-out scores against each sample's own (typically dense) depth.
#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub metrics: MetricsReport,
    pub per_image: Vec<MetricsReport>,
    /// Object pixels outside their tolerance band, summed over images.
    pub abnormal_pixels: usize,
}

pub fn evaluate_predictions(preds: &[DepthMap], samples: &[Sample], mode: AlignmentMode, max_depth: Option<f64>, loss: &LossConfig, seed: u64) -> Result<Evaluation> {
    let mut per_image = Vec::with_capacity(samples.len());
    let mut abnormal = 0;
    for (p, s) in preds.iter().zip(samples) {
        per_image.push(compute_metrics(p, &s.depth, mode, max_depth)?);
        abnormal += abnormal_pixel_count(p, s, loss, seed)?;
    }
    Ok(Evaluation {
        metrics: MetricsReport::mean(&per_image)?,
        per_image,
        abnormal_pixels: abnormal,
    })
}

/// Abnormal-region size of a prediction against the sample's ground truth,
/// with occlusion masks refined from the image.
pub fn abnormal_pixel_count(pred: &DepthMap, sample: &Sample, loss: &LossConfig, seed: u64) -> Result<usize> {
    let mut objects = sample.objects.clone();
    objects.refine_occlusion(&sample.image, loss.occlusion(), seed)?;
    let (p, g) = align_pair(pred, &sample.depth, loss)?;
    Ok(integrality_plan(&p, &objects, &g, loss.alpha)?.abnormal_pixels())
}
