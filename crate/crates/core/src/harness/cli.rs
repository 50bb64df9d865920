//! Argument parsing for the `diffdepth` binary.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::commands::{self, EvalRequest, VizRequest};
use super::config::{RunConfig, SparsifyConfig};
use crate::data::SparsityPattern;
use crate::depth_network::FeatureMode;
use crate::error::{Error, Result};
use crate::metrics::AlignmentMode;
use crate::noise_predictor::{FeatureScale, FeatureTap};

#[derive(Debug, Parser)]
#[command(name = "diffdepth", version, about = "Depth prediction with frozen diffusion features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// JSON run configuration; fields not given keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the noise predictor (stage 1).
    TrainNoise {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train the depth network (stage 2) on frozen structure features.
    TrainDepth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        stage1: Option<PathBuf>,
        /// Train the plain encoder-decoder without feature fusion.
        #[arg(long)]
        no_fusion: bool,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Thin training ground truth to this density first.
        #[arg(long)]
        density: Option<f64>,
        #[arg(long, value_enum, default_value_t = SparsityPattern::Uniform)]
        pattern: SparsityPattern,
        #[arg(long, value_enum)]
        feature_mode: Option<FeatureMode>,
    },
    /// Score a depth checkpoint and export predictions.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, value_enum)]
        alignment: Option<AlignmentMode>,
        #[arg(long)]
        stage1: Option<PathBuf>,
        #[arg(long)]
        max_depth: Option<f64>,
        /// Skip writing per-image PFM and PNG predictions.
        #[arg(long)]
        no_export: bool,
    },
    /// Cluster structure features with k-means and report component sizes.
    VizFeatures {
        #[command(flatten)]
        common: Common,
        /// Stage-1 checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 8)]
        count: usize,
        /// Taps as `step:block:scale`, e.g. `150:5:1/8`; repeatable.
        #[arg(long = "tap", value_parser = parse_tap)]
        taps: Vec<FeatureTap>,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Copy a dataset with thinned ground-truth depth.
    Sparsify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        density: f64,
        #[arg(long, value_enum, default_value_t = SparsityPattern::Uniform)]
        pattern: SparsityPattern,
        /// Splits to thin; others are copied unchanged.
        #[arg(long = "split", default_values_t = vec!["train".to_string()])]
        splits: Vec<String>,
    },
    /// Generate a synthetic dataset.
    SynthData {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 500)]
        train: usize,
        #[arg(long, default_value_t = 50)]
        test: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
}

pub fn parse_tap(s: &str) -> std::result::Result<FeatureTap, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [step, block, scale] = parts[..] else {
        return Err(format!("expected step:block:scale, got {s:?}"));
    };
    let scale = match scale {
        "1/2" => FeatureScale::Half,
        "1/4" => FeatureScale::Quarter,
        "1/8" => FeatureScale::Eighth,
        other => return Err(format!("scale must be 1/2, 1/4 or 1/8, got {other:?}")),
    };
    Ok(FeatureTap::new(
        step.parse().map_err(|_| format!("bad step {step:?}"))?,
        block.parse().map_err(|_| format!("bad block {block:?}"))?,
        scale,
    ))
}

/// Defaults, then the config file, then command-line overrides.
pub fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut c = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        c.seed = s;
    }
    if let Some(o) = &common.out {
        c.out = o.clone();
    }
    Ok(c)
}

/// `--out`, else the config file's `out`, else `fallback`.
fn out_dir(common: &Common, config: &RunConfig, fallback: &Path) -> PathBuf {
    match (&common.out, &common.config) {
        (Some(o), _) => o.clone(),
        (None, Some(_)) => config.out.clone(),
        (None, None) => fallback.to_path_buf(),
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainNoise { common, dataset, steps, batch_size, lr, resume } => {
            let mut c = resolve_config(&common)?;
            c.dataset = dataset.or(c.dataset);
            c.noise.steps = steps.unwrap_or(c.noise.steps);
            c.noise.batch_size = batch_size.unwrap_or(c.noise.batch_size);
            c.noise.lr = lr.unwrap_or(c.noise.lr);
            print_json(&commands::cmd_train_noise(&c, resume.as_deref())?)
        }
        Command::TrainDepth {
            common,
            dataset,
            stage1,
            no_fusion,
            lambda,
            alpha,
            steps,
            batch_size,
            density,
            pattern,
            feature_mode,
        } => {
            let mut c = resolve_config(&common)?;
            c.dataset = dataset.or(c.dataset);
            c.stage1_checkpoint = stage1.or(c.stage1_checkpoint);
            if no_fusion {
                c.fusion_enabled = false;
            }
            c.loss.lambda = lambda.unwrap_or(c.loss.lambda);
            c.loss.alpha = alpha.unwrap_or(c.loss.alpha);
            c.depth.steps = steps.unwrap_or(c.depth.steps);
            c.depth.batch_size = batch_size.unwrap_or(c.depth.batch_size);
            if let Some(d) = density {
                c.sparsify = Some(SparsifyConfig { density: d, pattern });
            }
            c.depth.feature_mode = feature_mode.unwrap_or(c.depth.feature_mode);
            print_json(&commands::cmd_train_depth(&c)?)
        }
        Command::Eval {
            common,
            checkpoint,
            dataset,
            split,
            alignment,
            stage1,
            max_depth,
            no_export,
        } => {
            let c = resolve_config(&common)?;
            let dataset = dataset
                .or(c.dataset.clone())
                .ok_or_else(|| Error::Config("eval needs --dataset".into()))?;
            let req = EvalRequest {
                out: out_dir(&common, &c, &checkpoint.with_file_name("eval")),
                checkpoint,
                dataset,
                split,
                alignment_mode: alignment.unwrap_or(c.alignment_mode),
                max_depth: max_depth.or(c.max_depth),
                stage1_checkpoint: stage1,
                expect_fusion: common.config.as_ref().map(|_| c.fusion_enabled),
                seed: c.seed,
                export_predictions: !no_export,
            };
            commands::cmd_eval(&req).map(|_| ())
        }
        Command::VizFeatures {
            common,
            checkpoint,
            image,
            dataset,
            split,
            count,
            taps,
            k,
        } => {
            let c = resolve_config(&common)?;
            let taps = if taps.is_empty() { c.taps.clone() } else { taps };
            let req = VizRequest {
                out: out_dir(&common, &c, Path::new("runs/viz")),
                checkpoint,
                image,
                dataset: dataset.or(c.dataset.clone()),
                split,
                count,
                taps,
                k,
                schedule: c.schedule.clone(),
                seed: c.seed,
            };
            let rows = commands::cmd_viz_features(&req)?;
            print_json(&rows)
        }
        Command::Sparsify {
            common,
            dataset,
            density,
            pattern,
            splits,
        } => {
            let c = resolve_config(&common)?;
            let out = common
                .out
                .clone()
                .ok_or_else(|| Error::Config("sparsify needs --out".into()))?;
            let m = commands::cmd_sparsify(&dataset, &out, density, pattern, c.seed, &splits)?;
            print_json(&m.sparsity)
        }
        Command::SynthData { common, train, test, size } => {
            let c = resolve_config(&common)?;
            let out = common
                .out
                .clone()
                .ok_or_else(|| Error::Config("synth-data needs --out".into()))?;
            let m = commands::cmd_synth_data(&out, train, test, size, c.seed)?;
            print_json(&serde_json::json!({
                "out": out,
                "train": m.splits.get("train").map_or(0, Vec::len),
                "test": m.splits.get("test").map_or(0, Vec::len),
            }))
        }
    }
}

/// Parses arguments, runs, and maps errors to exit codes.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
