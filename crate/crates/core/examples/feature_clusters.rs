//! Clusters structure features of one scene at a noisy and a clean step and
//! writes the label maps as PNGs.
//!
//! cargo run --release --example feature_clusters -- <noise.ckpt> [out_dir]
//!
//! Without a checkpoint a briefly trained predictor is used.

use std::path::PathBuf;

use diffdepth::checkpoint::Checkpoint;
use diffdepth::data::{png_io, synth_scene};
use diffdepth::diffusion::ScheduleConfig;
use diffdepth::feature_viz::feature_cluster_maps;
use diffdepth::noise_predictor::{load_noise_predictor, FeatureTap, NoisePredictorConfig, NoiseTrainOptions, NoiseTrainer};

fn main() -> diffdepth::Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = args.next().map(PathBuf::from);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("diffdepth-features"));
    std::fs::create_dir_all(&out).map_err(|e| diffdepth::Error::io(&out, e))?;

    let sched = ScheduleConfig::default().build()?;
    let ck = match ckpt {
        Some(p) => Checkpoint::load(&p)?,
        None => {
            let scenes: Vec<_> = (0..32).map(|i| synth_scene(i, 64).image).collect();
            let mut opts = NoiseTrainOptions::desk();
            opts.steps = 40;
            let mut t = NoiseTrainer::new(NoisePredictorConfig::desk(), opts)?;
            t.run(&scenes, &sched, |_, _| {})?;
            t.checkpoint()
        }
    };
    let (net, store) = load_noise_predictor(&ck)?;

    let scene = synth_scene(1234, 64);
    png_io::write_rgb8(&out.join("image.png"), 64, 64, &png_io::tensor_to_rgb8(&scene.image))?;
    let mut taps = FeatureTap::desk_defaults();
    taps.extend(taps.clone().into_iter().map(|t| FeatureTap { step: 0, ..t }));
    for map in feature_cluster_maps(&net, &store, &sched, &scene.image, &taps, 5, 0)? {
        let name = format!("t{}_b{}.png", map.tap.step, map.tap.block);
        png_io::write_rgb8(&out.join(&name), map.width, map.height, &map.to_rgb())?;
        println!(
            "{name:<14} {}x{}  {} components, mean area {:.1}",
            map.width, map.height, map.stats.components, map.stats.mean_area
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}
