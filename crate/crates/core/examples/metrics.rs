//! Depth metrics with and without median scale-shift alignment.
//!
//! cargo run --example metrics

use diffdepth::data::synth_scene;
use diffdepth::metrics::{compute_metrics, format_table, AlignmentMode};
use diffdepth::DepthMap;

fn main() -> diffdepth::Result<()> {
    let gt = synth_scene(11, 64).depth;
    let affine = DepthMap::dense(64, 64, gt.values.iter().map(|d| 0.05 * d + 0.4).collect())?;
    let noisy = DepthMap::dense(
        64,
        64,
        gt.values.iter().enumerate().map(|(i, d)| d * (1.0 + 0.2 * ((i * 7919 % 101) as f64 / 100.0 - 0.5))).collect(),
    )?;

    let rows = [
        ("affine raw", compute_metrics(&affine, &gt, AlignmentMode::None, None)?),
        ("affine aligned", compute_metrics(&affine, &gt, AlignmentMode::MedianScaleShift, None)?),
        ("noisy raw", compute_metrics(&noisy, &gt, AlignmentMode::None, None)?),
        ("noisy capped", compute_metrics(&noisy, &gt, AlignmentMode::None, Some(20.0))?),
    ];
    let refs: Vec<(&str, &_)> = rows.iter().map(|(l, r)| (*l, r)).collect();
    print!("{}", format_table(&refs));
    Ok(())
}
