//! Generates a small synthetic dataset on disk and thins its training depth
//! with both sparsity patterns.
//!
//! cargo run --release --example synthetic_data -- [out_dir]

use std::path::PathBuf;

use diffdepth::data::{sparsify, sparsify_dataset, synth_scene, write_synthetic, Dataset, SparsityPattern};

fn main() -> diffdepth::Result<()> {
    let root = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("diffdepth-data"));
    let manifest = write_synthetic(&root, &[("train", 8), ("test", 4)], 64, 0)?;
    println!("wrote {} train / {} test scenes to {}", manifest.entries("train")?.len(), manifest.entries("test")?.len(), root.display());

    let scene = synth_scene(7, 64);
    println!("scene 7: {} objects, depth valid {:.1}%", scene.objects.k(), 100.0 * scene.depth.density());
    for pattern in [SparsityPattern::Uniform, SparsityPattern::Scanline] {
        for density in [0.0185, 0.01, 0.001] {
            let thin = sparsify(&scene.depth, density, pattern, 1)?;
            println!("  {pattern:?} target {density:.4} -> {} pixels ({:.4})", thin.valid_count(), thin.density());
        }
    }

    let thin_root = root.with_extension("thin");
    sparsify_dataset(&root, &thin_root, 0.01, SparsityPattern::Uniform, 0, &["train".to_string()])?;
    let ds = Dataset::open(&thin_root)?;
    let train = ds.load_split("train", 1)?;
    let mean = train.iter().map(|s| s.depth.density()).sum::<f64>() / train.len() as f64;
    println!("thinned copy at {}: mean train density {mean:.4}", thin_root.display());
    Ok(())
}
