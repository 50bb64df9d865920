//! Trains the desk-scale diffusion UNet on synthetic scenes and saves a
//! checkpoint.
//!
//! cargo run --release --example train_noise_predictor -- [steps] [out.ckpt]

use std::path::PathBuf;

use diffdepth::data::synth_split;
use diffdepth::diffusion::ScheduleConfig;
use diffdepth::noise_predictor::{smoothed_endpoints, NoisePredictorConfig, NoiseTrainOptions, NoiseTrainer};

fn main() -> diffdepth::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().map(|s| s.parse().expect("steps")).unwrap_or(200);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("diffdepth-noise.ckpt"));

    let images: Vec<_> = synth_split(0, "train", 200, 64).into_iter().map(|s| s.image).collect();
    let sched = ScheduleConfig::default().build()?;
    let mut opts = NoiseTrainOptions::desk();
    opts.steps = steps;
    let config = NoisePredictorConfig::desk();
    println!("{} blocks, training {steps} steps on {} images", config.num_blocks(), images.len());
    let mut trainer = NoiseTrainer::new(config, opts)?;
    trainer.run(&images, &sched, |step, loss| {
        if step % 50 == 0 {
            println!("step {step:>5}  loss {loss:.4}");
        }
    })?;
    if let Some((first, last)) = smoothed_endpoints(&trainer.loss_curve, (steps as usize / 10).max(1)) {
        println!("smoothed loss {first:.4} -> {last:.4}");
    }
    let ck = trainer.checkpoint();
    ck.save(&out)?;
    println!("saved {} (weights {})", out.display(), ck.weight_hash());
    Ok(())
}
