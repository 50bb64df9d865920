//! Object masks of a synthetic scene with colour-based occlusion refinement.
//!
//! cargo run --example occlusion_masks -- [out_dir]

use std::path::PathBuf;

use diffdepth::data::synth_scene;
use diffdepth::masks::{write_overlay, OcclusionConfig};

fn main() -> diffdepth::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("diffdepth-masks"));
    std::fs::create_dir_all(&out).map_err(|e| diffdepth::Error::io(&out, e))?;
    let mut scene = synth_scene(5, 64);
    scene.objects.refine_occlusion(&scene.image, OcclusionConfig::default(), 0)?;
    for o in &scene.objects.objects {
        println!("object {:>2}: {:>4} pixels, {:>3} flagged occluded", o.label, o.len(), o.occluded_count());
    }
    scene.objects.save(&out.join("objects.png"))?;
    write_overlay(&out.join("overlay.png"), &scene.image, &scene.objects)?;
    println!("wrote {}", out.display());
    Ok(())
}
