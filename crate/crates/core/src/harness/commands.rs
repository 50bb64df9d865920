//! Implementations of the command-line verbs. Each writes its effective
//! configuration, a JSON-lines log and a `summary.json` into its output
//! directory.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{RunConfig, Stage};
use crate::checkpoint::{store_hash, Checkpoint};
use crate::cluster::ComponentStats;
use crate::data::dataset::{sparsify_dataset, write_synthetic, Dataset, Manifest};
use crate::data::{png_io, sparsify, SparsityPattern};
use crate::depth_network::{
    evaluate_predictions, export_depth, load_depth_predictor, predict_samples, DepthPredictorConfig, DepthTrainOptions, DepthTrainer,
    Evaluation, StructureSource, TrainItem,
};
use crate::diffusion::ScheduleConfig;
use crate::error::{Error, Result};
use crate::feature_viz::feature_cluster_maps;
use crate::metrics::{aligned_prediction, format_table, AlignmentMode};
use crate::noise_predictor::{load_noise_predictor, smoothed_endpoints, FeatureTap, NoiseTrainOptions, NoiseTrainer};
use crate::rng::{derive_seed, tags};

pub const NOISE_CHECKPOINT: &str = "noise.ckpt";
pub const DEPTH_CHECKPOINT: &str = "depth.ckpt";
pub const SUMMARY: &str = "summary.json";
pub const LOG: &str = "log.jsonl";
pub const EFFECTIVE_CONFIG: &str = "config.json";

/// Append-only JSON-lines log.
pub struct JsonLog {
    out: BufWriter<File>,
}

impl JsonLog {
    pub fn open(path: &Path, append: bool) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self { out: BufWriter::new(file) })
    }

    pub fn line(&mut self, value: &impl Serialize) -> Result<()> {
        self.raw(&serde_json::to_string(value)?)
    }

    pub fn raw(&mut self, line: &str) -> Result<()> {
        writeln!(self.out, "{line}").map_err(|e| Error::io("log", e))
    }
}

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize)]
pub struct NoiseSummary {
    pub steps: u64,
    pub weight_hash: String,
    pub initial_smoothed_loss: f64,
    pub final_smoothed_loss: f64,
}

/// Stage 1: trains the noise predictor on the training split's images.
pub fn cmd_train_noise(config: &RunConfig, resume: Option<&Path>) -> Result<NoiseSummary> {
    config.validate()?;
    let ds = Dataset::open(config.dataset_root()?)?;
    let sched = config.schedule.build()?;
    let options = NoiseTrainOptions {
        steps: config.noise.steps,
        batch_size: config.noise.batch_size,
        lr: config.noise.lr,
        seed: config.seed,
    };
    let mut trainer = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let t = NoiseTrainer::resume(&ck, options)?;
            if t.net.config != config.noise.network {
                return Err(Error::Config("resumed checkpoint was built with a different network configuration".into()));
            }
            t
        }
        None => NoiseTrainer::new(config.noise.network.clone(), options)?,
    };
    let images: Vec<_> = ds.load_split("train", 1)?.into_iter().map(|s| s.image).collect();
    prepare_out(&config.out)?;
    config.save(&config.out.join(EFFECTIVE_CONFIG))?;
    let mut log = JsonLog::open(&config.out.join(LOG), resume.is_some())?;
    let mut failure = None;
    trainer.run(&images, &sched, |step, loss| {
        if let Err(e) = log.line(&serde_json::json!({"step": step, "loss": loss})) {
            failure.get_or_insert(e);
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let ck = trainer.checkpoint();
    ck.save(&config.out.join(NOISE_CHECKPOINT))?;
    let (first, last) = smoothed_endpoints(&trainer.loss_curve, 100).unwrap_or((f64::NAN, f64::NAN));
    let summary = NoiseSummary {
        steps: trainer.step_count(),
        weight_hash: ck.weight_hash(),
        initial_smoothed_loss: first,
        final_smoothed_loss: last,
    };
    write_json(&config.out.join(SUMMARY), &summary)?;
    Ok(summary)
}

/// Loads a stage-1 checkpoint as a frozen feature source and returns it
/// with the weight hash recorded in the file.
pub fn load_structure_source(path: &Path, taps: &[FeatureTap], schedule: &ScheduleConfig) -> Result<(StructureSource, String)> {
    let ck = Checkpoint::load(path)?;
    let hash = ck.weight_hash();
    let (net, store) = load_noise_predictor(&ck)?;
    Ok((StructureSource::new(net, store, taps.to_vec(), schedule.build()?)?, hash))
}

#[derive(Debug, Clone, Serialize)]
pub struct DepthSummary {
    pub steps: u64,
    pub fusion_enabled: bool,
    pub stage1_hash: Option<String>,
    pub weight_hash: String,
    pub final_loss: Option<crate::losses::LossBreakdown>,
    pub train_density: f64,
}

/// Stage 2: trains the depth network against (optionally thinned) training
/// ground truth, verifying afterwards that stage-1 weights are untouched.
pub fn cmd_train_depth(config: &RunConfig) -> Result<DepthSummary> {
    let mut config = config.clone();
    config.stage = Stage::Depth;
    config.validate()?;
    let ds = Dataset::open(config.dataset_root()?)?;
    let source = match (config.fusion_enabled, &config.stage1_checkpoint) {
        (true, Some(p)) => Some(load_structure_source(p, &config.taps, &config.schedule)?),
        _ => None,
    };
    let samples = ds.load_split("train", config.min_object_pixels)?;
    if samples.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let items = build_train_items(&samples, &config)?;
    let (steps, lr) = config.depth.resolve(items.len());
    let options = DepthTrainOptions {
        steps,
        batch_size: config.depth.batch_size,
        lr,
        seed: config.seed,
        loss: config.loss,
        feature_mode: config.depth.feature_mode,
    };
    let net_config = depth_config(&config, source.as_ref().map(|(s, _)| s));
    let mut trainer = DepthTrainer::new(net_config, options)?;

    prepare_out(&config.out)?;
    config.save(&config.out.join(EFFECTIVE_CONFIG))?;
    let mut log = JsonLog::open(&config.out.join(LOG), false)?;
    let mut failure = None;
    trainer.run(&items, source.as_ref().map(|(s, _)| s), |step, bd| {
        if let Err(e) = log.raw(&bd.log_line(step)) {
            failure.get_or_insert(e);
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some((src, recorded)) = &source {
        let now = store_hash(&src.store);
        if &now != recorded {
            return Err(Error::Integrity(format!(
                "stage-1 weights changed during depth training: {recorded} -> {now}"
            )));
        }
    }
    let stage1_hash = source.as_ref().map(|(_, h)| h.clone());
    let mut ck = trainer.checkpoint(stage1_hash.as_deref(), &config.taps);
    ck.meta["stage1_path"] = serde_json::to_value(&config.stage1_checkpoint)?;
    ck.meta["schedule"] = serde_json::to_value(&config.schedule)?;
    ck.save(&config.out.join(DEPTH_CHECKPOINT))?;
    let summary = DepthSummary {
        steps: trainer.step_count(),
        fusion_enabled: trainer.net.config.fusion_enabled,
        stage1_hash,
        weight_hash: ck.weight_hash(),
        final_loss: trainer.history.last().copied(),
        train_density: items.iter().map(|i| i.gt.density()).sum::<f64>() / items.len() as f64,
    };
    write_json(&config.out.join(SUMMARY), &summary)?;
    Ok(summary)
}

/// Network layout implied by the run configuration and feature source.
pub fn depth_config(config: &RunConfig, source: Option<&StructureSource>) -> DepthPredictorConfig {
    let channels = source.map(|s| s.channels()).unwrap_or_default();
    let mut c = DepthPredictorConfig::desk(channels.clone(), source.is_some() && config.fusion_enabled);
    c.encoder_channels = config.depth.encoder_channels.clone();
    c.decoder_channels = config.depth.decoder_channels.clone();
    c.fusion_scales = channels.keys().copied().collect();
    c
}

/// Thins training ground truth per the configuration and refines occlusion
/// masks. Per-image seeds depend only on the run seed and image index.
pub fn build_train_items(samples: &[crate::data::Sample], config: &RunConfig) -> Result<Vec<TrainItem>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let gt = match config.sparsify {
                Some(sp) => sparsify(&s.depth, sp.density, sp.pattern, derive_seed(config.seed, &[tags::SPARSIFY, i as u64]))?,
                None => s.depth.clone(),
            };
            TrainItem::new(s, gt, &config.loss, derive_seed(config.seed, &[tags::KMEANS, i as u64]))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct EvalRequest {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    pub split: String,
    pub alignment_mode: AlignmentMode,
    pub max_depth: Option<f64>,
    /// Overrides the stage-1 path recorded in the checkpoint.
    pub stage1_checkpoint: Option<PathBuf>,
    /// Refuse checkpoints trained with the other fusion setting.
    pub expect_fusion: Option<bool>,
    pub seed: u64,
    pub out: PathBuf,
    pub export_predictions: bool,
}

/// Scores a depth checkpoint on a dataset split, prints the metric table and
/// exports aligned predictions.
pub fn cmd_eval(req: &EvalRequest) -> Result<Evaluation> {
    let ck = Checkpoint::load(&req.checkpoint)?;
    let (net, store) = load_depth_predictor(&ck, req.expect_fusion)?;
    let ds = Dataset::open(&req.dataset)?;
    let source = if net.config.fusion_enabled {
        let path: Option<PathBuf> = req
            .stage1_checkpoint
            .clone()
            .or_else(|| serde_json::from_value(ck.meta["stage1_path"].clone()).ok().flatten());
        let path = path.ok_or_else(|| Error::Config("fused checkpoint needs a stage-1 checkpoint for evaluation".into()))?;
        let taps: Vec<FeatureTap> = serde_json::from_value(ck.meta["taps"].clone())?;
        let schedule: ScheduleConfig = serde_json::from_value(ck.meta["schedule"].clone()).unwrap_or_default();
        let (src, hash) = load_structure_source(&path, &taps, &schedule)?;
        if ck.meta["stage1_hash"].as_str() != Some(hash.as_str()) {
            return Err(Error::Integrity(format!(
                "stage-1 checkpoint {} does not match the weights the depth network was trained with",
                path.display()
            )));
        }
        Some(src)
    } else {
        None
    };
    let samples = ds.load_split(&req.split, 1)?;
    let preds = predict_samples(&net, &store, source.as_ref(), &samples, req.seed)?;
    let loss: crate::losses::LossConfig = serde_json::from_value(ck.meta["options"]["loss"].clone()).unwrap_or_default();
    let eval = evaluate_predictions(&preds, &samples, req.alignment_mode, req.max_depth, &loss, req.seed)?;

    prepare_out(&req.out)?;
    write_json(&req.out.join("metrics.json"), &eval)?;
    if req.export_predictions {
        for (p, s) in preds.iter().zip(&samples) {
            let aligned = aligned_prediction(p, &s.depth)?;
            let dir = req.out.join("predictions");
            export_depth(&aligned, &dir.join(format!("{}.depth.pfm", s.id)), &dir.join(format!("{}.png", s.id)))?;
        }
    }
    let label = if net.config.fusion_enabled { "fused" } else { "baseline" };
    print!("{}", format_table(&[(label, &eval.metrics)]));
    Ok(eval)
}

#[derive(Debug, Clone, Serialize)]
pub struct TapComponents {
    pub image: String,
    pub tap: FeatureTap,
    #[serde(flatten)]
    pub stats: ComponentStats,
}

#[derive(Debug, Clone)]
pub struct VizRequest {
    pub checkpoint: PathBuf,
    /// Single image file; when absent, `count` images of `dataset/split`.
    pub image: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub split: String,
    pub count: usize,
    pub taps: Vec<FeatureTap>,
    pub k: usize,
    pub schedule: ScheduleConfig,
    pub seed: u64,
    pub out: PathBuf,
}

/// Writes one cluster-map PNG per image and tap plus `components.json`.
pub fn cmd_viz_features(req: &VizRequest) -> Result<Vec<TapComponents>> {
    let ck = Checkpoint::load(&req.checkpoint)?;
    let (net, store) = load_noise_predictor(&ck)?;
    let sched = req.schedule.build()?;
    let images: Vec<(String, crate::Tensor)> = match (&req.image, &req.dataset) {
        (Some(path), _) => {
            let (w, h, rgb) = png_io::read_rgb8(path)?;
            let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            vec![(id, png_io::rgb8_to_tensor(w, h, &rgb))]
        }
        (None, Some(root)) => {
            let ds = Dataset::open(root)?;
            ds.manifest
                .entries(&req.split)?
                .iter()
                .take(req.count)
                .map(|e| Ok((e.id.clone(), ds.load(&req.split, &e.id, 1)?.image)))
                .collect::<Result<_>>()?
        }
        (None, None) => return Err(Error::Config("viz-features needs --image or --dataset".into())),
    };
    prepare_out(&req.out)?;
    let mut rows = Vec::new();
    for (id, image) in &images {
        for map in feature_cluster_maps(&net, &store, &sched, image, &req.taps, req.k, req.seed)? {
            let name = format!("{id}_t{}_b{}.png", map.tap.step, map.tap.block);
            png_io::write_rgb8(&req.out.join(name), map.width, map.height, &map.to_rgb())?;
            rows.push(TapComponents {
                image: id.clone(),
                tap: map.tap,
                stats: map.stats,
            });
        }
    }
    write_json(&req.out.join("components.json"), &rows)?;
    Ok(rows)
}

/// Copies a dataset with thinned ground truth and logs achieved densities.
pub fn cmd_sparsify(src: &Path, dst: &Path, density: f64, pattern: SparsityPattern, seed: u64, splits: &[String]) -> Result<Manifest> {
    let manifest = sparsify_dataset(src, dst, density, pattern, seed, splits)?;
    let mut log = JsonLog::open(&dst.join(LOG), false)?;
    for (split, entries) in &manifest.splits {
        for e in entries {
            log.line(&serde_json::json!({"split": split, "id": e.id, "density": e.density}))?;
        }
    }
    Ok(manifest)
}

/// Generates a synthetic dataset.
pub fn cmd_synth_data(out: &Path, train: usize, test: usize, size: usize, seed: u64) -> Result<Manifest> {
    if size == 0 || size % 16 != 0 {
        return Err(Error::Config(format!("image size {size} must be a positive multiple of 16")));
    }
    write_synthetic(out, &[("train", train), ("test", test)], size, seed)
}
