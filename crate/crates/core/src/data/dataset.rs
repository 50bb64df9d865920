//! On-disk dataset layout:
//!
//! ```text
//! root/manifest.json
//! root/{split}/{id}.png         RGB image
//! root/{split}/{id}.depth.pfm   depth, invalid pixels as negative sentinel
//! root/{split}/{id}.masks.png   16-bit object index map
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::pfm::{load_depth_pfm, save_depth_pfm};
use crate::data::png_io;
use crate::data::scene::{synth_scene, Scene};
use crate::data::sparsify::{sparsify, SparsityPattern};
use crate::depth_map::DepthMap;
use crate::error::{Error, Result};
use crate::masks::{load_object_masks, ObjectMaskSet};
use crate::rng::{derive_seed, tags};
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityRecord {
    pub density: f64,
    pub pattern: SparsityPattern,
    pub seed: u64,
    pub splits: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub size: usize,
    pub splits: BTreeMap<String, Vec<ManifestEntry>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sparsity: Vec<SparsityRecord>,
}

impl Manifest {
    pub fn entries(&self, split: &str) -> Result<&[ManifestEntry]> {
        self.splits
            .get(split)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Data(format!("split {split:?} not in manifest")))
    }
}

/// One image with its depth and object masks.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    /// `[3, h, w]` in `[-1, 1]`.
    pub image: Tensor,
    pub depth: DepthMap,
    pub objects: ObjectMaskSet,
}

impl From<Scene> for Sample {
    fn from(s: Scene) -> Self {
        Sample {
            id: format!("{:06}", s.seed),
            image: s.image,
            depth: s.depth,
            objects: s.objects,
        }
    }
}

fn paths(root: &Path, split: &str, id: &str) -> (PathBuf, PathBuf, PathBuf) {
    let dir = root.join(split);
    (
        dir.join(format!("{id}.png")),
        dir.join(format!("{id}.depth.pfm")),
        dir.join(format!("{id}.masks.png")),
    )
}

pub fn write_sample(root: &Path, split: &str, sample: &Sample) -> Result<()> {
    let (img, depth, masks) = paths(root, split, &sample.id);
    let (h, w) = (sample.image.shape()[1], sample.image.shape()[2]);
    png_io::write_rgb8(&img, w, h, &png_io::tensor_to_rgb8(&sample.image))?;
    save_depth_pfm(&sample.depth, &depth)?;
    sample.objects.save(&masks)
}

pub fn write_manifest(root: &Path, manifest: &Manifest) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let path = root.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(manifest)?).map_err(|e| Error::io(&path, e))
}

/// Seed of scene `index` in `split` of a synthetic dataset.
pub fn scene_seed(seed: u64, split: &str, index: usize) -> u64 {
    let split_tag = split.bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64));
    derive_seed(seed, &[tags::SPLIT, split_tag, index as u64])
}

/// Synthetic scenes for one split, generated in memory.
pub fn synth_split(seed: u64, split: &str, count: usize, size: usize) -> Vec<Sample> {
    (0..count)
        .map(|i| {
            let mut s: Sample = synth_scene(scene_seed(seed, split, i), size).into();
            s.id = format!("{i:06}");
            s
        })
        .collect()
}

/// Generates and writes a synthetic dataset.
pub fn write_synthetic(root: &Path, splits: &[(&str, usize)], size: usize, seed: u64) -> Result<Manifest> {
    let mut manifest = Manifest {
        size,
        splits: BTreeMap::new(),
        sparsity: Vec::new(),
    };
    for &(split, count) in splits {
        let mut entries = Vec::with_capacity(count);
        for sample in synth_split(seed, split, count, size) {
            write_sample(root, split, &sample)?;
            entries.push(ManifestEntry {
                id: sample.id.clone(),
                density: sample.depth.density(),
            });
        }
        manifest.splits.insert(split.to_string(), entries);
    }
    write_manifest(root, &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST);
        if !path.is_file() {
            return Err(Error::Data(format!("no dataset manifest at {}", path.display())));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest: serde_json::from_str(&text)?,
        })
    }

    pub fn load(&self, split: &str, id: &str, min_object_pixels: usize) -> Result<Sample> {
        let (img, depth, masks) = paths(&self.root, split, id);
        let (w, h, rgb) = png_io::read_rgb8(&img)?;
        let depth = load_depth_pfm(&depth)?;
        let objects = load_object_masks(&masks, min_object_pixels)?;
        if (depth.height, depth.width) != (h, w) || (objects.height, objects.width) != (h, w) {
            return Err(Error::Data(format!("{split}/{id}: image, depth and masks differ in size")));
        }
        Ok(Sample {
            id: id.to_string(),
            image: png_io::rgb8_to_tensor(w, h, &rgb),
            depth,
            objects,
        })
    }

    pub fn load_split(&self, split: &str, min_object_pixels: usize) -> Result<Vec<Sample>> {
        self.manifest
            .entries(split)?
            .iter()
            .map(|e| self.load(split, &e.id, min_object_pixels))
            .collect()
    }
}

/// Copies `src` to `dst`, thinning the depth of the listed splits to
/// `density`. Other splits are copied unchanged.
pub fn sparsify_dataset(
    src: &Path,
    dst: &Path,
    density: f64,
    pattern: SparsityPattern,
    seed: u64,
    splits: &[String],
) -> Result<Manifest> {
    let ds = Dataset::open(src)?;
    let mut manifest = ds.manifest.clone();
    for split in splits {
        ds.manifest.entries(split)?;
    }
    for (split, entries) in manifest.splits.iter_mut() {
        let thin = splits.contains(split);
        for (i, entry) in entries.iter_mut().enumerate() {
            let mut sample = ds.load(split, &entry.id, 1)?;
            if thin {
                let s = derive_seed(seed, &[tags::SPARSIFY, i as u64]);
                sample.depth = sparsify(&sample.depth, density, pattern, s)?;
            }
            entry.density = sample.depth.density();
            write_sample(dst, split, &sample)?;
        }
    }
    manifest.sparsity.push(SparsityRecord {
        density,
        pattern,
        seed,
        splits: splits.to_vec(),
    });
    write_manifest(dst, &manifest)?;
    Ok(manifest)
}
