//! Affinity and integrality losses on a synthetic scene, and their gradient.
//!
//! cargo run --example losses

use diffdepth::data::{sparsify, synth_scene, SparsityPattern};
use diffdepth::losses::{align_pair, integrality_plan, total_loss_grad, LossConfig};
use diffdepth::DepthMap;

fn main() -> diffdepth::Result<()> {
    let cfg = LossConfig::default();
    let mut scene = synth_scene(3, 64);
    scene.objects.refine_occlusion(&scene.image, cfg.occlusion(), 0)?;
    let gt = sparsify(&scene.depth, 0.0185, SparsityPattern::Uniform, 0)?;

    // A prediction that is right up to scale and shift, except that the
    // first object is smeared towards the far background.
    let mut values: Vec<f64> = scene.depth.values.iter().map(|d| 0.3 * d + 2.0).collect();
    if let Some(obj) = scene.objects.objects.first() {
        for (n, &i) in obj.pixels.iter().enumerate() {
            if n % 3 == 0 {
                values[i] += 6.0;
            }
        }
    }
    let pred = DepthMap::dense(64, 64, values)?;

    let (pa, ga) = align_pair(&pred, &gt, &cfg)?;
    let plan = integrality_plan(&pa, &scene.objects, &ga, cfg.alpha)?;
    for (k, o) in plan.objects.iter().enumerate() {
        println!(
            "object {k}: band [{:.3}, {:.3}] ({:?}), {} abnormal pixels",
            o.bounds.lower,
            o.bounds.upper,
            o.bounds.source,
            o.abnormal.len()
        );
    }
    let (b, grad) = total_loss_grad(&pred, &gt, &scene.objects, &cfg)?;
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    println!("L_af {:.5}  L_obj {:.5}  total {:.5}  |grad| {norm:.4}", b.affinity, b.integrality, b.total);

    let clean = DepthMap::dense(64, 64, scene.depth.values.iter().map(|d| 0.3 * d + 2.0).collect())?;
    let (c, _) = total_loss_grad(&clean, &gt, &scene.objects, &cfg)?;
    println!("without the smear: L_af {:.5}  L_obj {:.5}", c.affinity, c.integrality);
    Ok(())
}
