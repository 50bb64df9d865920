//! Trains the baseline and the feature-fused depth network under 1% uniform
//! supervision and compares them on dense test depth.
//!
//! cargo run --release --example depth_training -- [noise.ckpt] [steps]
//!
//! Without a checkpoint a briefly trained noise predictor is used, which is
//! enough to exercise the pipeline but not to help the fused model.

use std::path::PathBuf;

use diffdepth::checkpoint::Checkpoint;
use diffdepth::data::{synth_split, SparsityPattern};
use diffdepth::depth_network::{evaluate_predictions, predict_samples, DepthTrainOptions, DepthTrainer, FeatureMode, StructureSource};
use diffdepth::harness::commands::{build_train_items, depth_config};
use diffdepth::harness::{RunConfig, SparsifyConfig};
use diffdepth::metrics::{format_table, AlignmentMode};
use diffdepth::noise_predictor::{load_noise_predictor, NoisePredictorConfig, NoiseTrainOptions, NoiseTrainer};

fn main() -> diffdepth::Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = args.next().filter(|a| a != "-").map(PathBuf::from);
    let steps: u64 = args.next().map(|s| s.parse().expect("steps")).unwrap_or(150);

    let train = synth_split(0, "train", 100, 64);
    let test = synth_split(0, "test", 20, 64);
    let mut cfg = RunConfig::default();
    cfg.sparsify = Some(SparsifyConfig { density: 0.01, pattern: SparsityPattern::Uniform });
    cfg.depth.feature_mode = FeatureMode::Cached;
    let sched = cfg.schedule.build()?;

    let ck = match ckpt {
        Some(p) => Checkpoint::load(&p)?,
        None => {
            let images: Vec<_> = train.iter().map(|s| s.image.clone()).collect();
            let mut opts = NoiseTrainOptions::desk();
            opts.steps = 40;
            let mut t = NoiseTrainer::new(NoisePredictorConfig::desk(), opts)?;
            t.run(&images, &sched, |_, _| {})?;
            t.checkpoint()
        }
    };
    let (net, store) = load_noise_predictor(&ck)?;
    let source = StructureSource::new(net, store, cfg.taps.clone(), sched)?;
    let items = build_train_items(&train, &cfg)?;

    let mut rows = Vec::new();
    for fusion in [false, true] {
        cfg.fusion_enabled = fusion;
        let src = fusion.then_some(&source);
        let mut opts = DepthTrainOptions::desk();
        opts.steps = steps;
        opts.lr.every = (steps / 3).max(1);
        opts.loss = cfg.loss;
        opts.feature_mode = cfg.depth.feature_mode;
        let mut trainer = DepthTrainer::new(depth_config(&cfg, src), opts)?;
        trainer.run(&items, src, |step, b| {
            if step % 50 == 0 {
                println!("{} step {step:>4}  L_af {:.4}  L_obj {:.4}", if fusion { "fused" } else { "baseline" }, b.affinity, b.integrality);
            }
        })?;
        let preds = predict_samples(&trainer.net, &trainer.store, src, &test, 0)?;
        let ev = evaluate_predictions(&preds, &test, AlignmentMode::MedianScaleShift, None, &cfg.loss, 0)?;
        println!("abnormal object pixels: {}", ev.abnormal_pixels);
        rows.push((if fusion { "fused" } else { "baseline" }, ev.metrics));
    }
    let refs: Vec<(&str, &_)> = rows.iter().map(|(l, r)| (*l, r)).collect();
    print!("{}", format_table(&refs));
    Ok(())
}
