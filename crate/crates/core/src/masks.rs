//! Object masks: ingestion from 16-bit index maps and the k-means occlusion
//! refinement that excludes colour outliers from each object.

use std::path::Path;

use crate::cluster::{cosine_similarity, kmeans};
use crate::data::png_io;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OcclusionConfig {
    pub k: usize,
    pub fraction: f64,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self { k: 5, fraction: 0.20 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMask {
    /// Index value in the source map.
    pub label: u16,
    /// Row-major pixel indices, ascending.
    pub pixels: Vec<usize>,
    /// Parallel to `pixels`.
    pub occluded: Vec<bool>,
}

impl ObjectMask {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn occluded_count(&self) -> usize {
        self.occluded.iter().filter(|&&o| o).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMaskSet {
    pub height: usize,
    pub width: usize,
    pub objects: Vec<ObjectMask>,
    /// Objects discarded for being under the size threshold.
    pub dropped: usize,
    /// Objects too small for clustering during occlusion refinement.
    pub occlusion_skipped: usize,
}

impl ObjectMaskSet {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            objects: Vec::new(),
            dropped: 0,
            occlusion_skipped: 0,
        }
    }

    /// One object per distinct nonzero index, in ascending index order.
    pub fn from_index_map(height: usize, width: usize, map: &[u16], min_object_pixels: usize) -> Result<Self> {
        if map.len() != height * width {
            return Err(Error::Mask(format!("index map has {} pixels, expected {}", map.len(), height * width)));
        }
        let mut by_label: std::collections::BTreeMap<u16, Vec<usize>> = Default::default();
        for (i, &v) in map.iter().enumerate() {
            if v != 0 {
                by_label.entry(v).or_default().push(i);
            }
        }
        let mut set = Self::empty(height, width);
        for (label, pixels) in by_label {
            if pixels.len() < min_object_pixels.max(1) {
                set.dropped += 1;
                continue;
            }
            let n = pixels.len();
            set.objects.push(ObjectMask {
                label,
                pixels,
                occluded: vec![false; n],
            });
        }
        Ok(set)
    }

    pub fn k(&self) -> usize {
        self.objects.len()
    }

    pub fn to_index_map(&self) -> Vec<u16> {
        let mut map = vec![0u16; self.height * self.width];
        for o in &self.objects {
            for &p in &o.pixels {
                map[p] = o.label;
            }
        }
        map
    }

    /// Dense boolean object masks.
    pub fn masks(&self) -> Vec<Vec<bool>> {
        self.objects
            .iter()
            .map(|o| {
                let mut m = vec![false; self.height * self.width];
                o.pixels.iter().for_each(|&p| m[p] = true);
                m
            })
            .collect()
    }

    /// Dense boolean occlusion masks.
    pub fn occlusion_masks(&self) -> Vec<Vec<bool>> {
        self.objects
            .iter()
            .map(|o| {
                let mut m = vec![false; self.height * self.width];
                for (&p, &occ) in o.pixels.iter().zip(&o.occluded) {
                    m[p] = occ;
                }
                m
            })
            .collect()
    }

    pub fn check_bounds(&self, height: usize, width: usize) -> Result<()> {
        if (height, width) != (self.height, self.width) {
            return Err(Error::Mask(format!(
                "mask set is {}x{}, image is {height}x{width}",
                self.height, self.width
            )));
        }
        for o in &self.objects {
            if let Some(&p) = o.pixels.iter().find(|&&p| p >= height * width) {
                return Err(Error::Mask(format!("object {} references pixel {p} outside the image", o.label)));
            }
            if o.occluded.len() != o.pixels.len() {
                return Err(Error::Mask(format!("object {} occlusion list length mismatch", o.label)));
            }
        }
        Ok(())
    }

    /// Recomputes every object's occlusion mask from `image` (`[3, h, w]`).
    pub fn refine_occlusion(&mut self, image: &Tensor, cfg: OcclusionConfig, seed: u64) -> Result<()> {
        if image.shape().len() != 3 || image.shape()[0] != 3 {
            return Err(Error::Shape(format!("expected [3, h, w] image, got {:?}", image.shape())));
        }
        self.check_bounds(image.shape()[1], image.shape()[2])?;
        self.occlusion_skipped = 0;
        for o in &mut self.objects {
            match occlusion_mask(image, &o.pixels, cfg, seed, o.label as u64) {
                Some(m) => o.occluded = m,
                None => {
                    o.occluded = vec![false; o.pixels.len()];
                    self.occlusion_skipped += 1;
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        png_io::write_gray16(path, self.width, self.height, &self.to_index_map())
    }
}

/// Reads a 16-bit index map (0 = background).
pub fn load_object_masks(path: &Path, min_object_pixels: usize) -> Result<ObjectMaskSet> {
    let (w, h, map) = png_io::read_gray16(path)?;
    ObjectMaskSet::from_index_map(h, w, &map, min_object_pixels)
}

/// RGB vectors in `[0, 1]` for the given pixels of a `[3, h, w]` image in `[-1, 1]`.
fn rgb_points(image: &Tensor, pixels: &[usize]) -> Vec<f64> {
    let hw = image.shape()[1] * image.shape()[2];
    let d = image.data();
    let mut pts = Vec::with_capacity(pixels.len() * 3);
    for &p in pixels {
        for c in 0..3 {
            pts.push((d[c * hw + p] as f64 + 1.0) / 2.0);
        }
    }
    pts
}

/// Occlusion flags for one object's pixels, or `None` when the object has
/// fewer than `k` pixels.
///
/// Pixels whose cosine similarity to their cluster center is strictly below
/// the sorted similarity at position `floor(fraction * n)` are flagged.
pub fn occlusion_mask(image: &Tensor, pixels: &[usize], cfg: OcclusionConfig, seed: u64, stream: u64) -> Option<Vec<bool>> {
    let n = pixels.len();
    if cfg.k == 0 || n < cfg.k || n == 0 {
        return None;
    }
    let pts = rgb_points(image, pixels);
    let km = kmeans(&pts, 3, cfg.k, seed, stream);
    let sims: Vec<f64> = (0..n)
        .map(|i| cosine_similarity(&pts[i * 3..i * 3 + 3], km.center(km.assignments[i])))
        .collect();
    let mut sorted = sims.clone();
    sorted.sort_by(f64::total_cmp);
    let pos = ((cfg.fraction * n as f64).floor() as usize).min(n - 1);
    let threshold = sorted[pos];
    Some(sims.iter().map(|&s| s < threshold).collect())
}

/// Debug visualisation: objects tinted by palette colour, occluded pixels white.
pub fn write_overlay(path: &Path, image: &Tensor, set: &ObjectMaskSet) -> Result<()> {
    set.check_bounds(image.shape()[1], image.shape()[2])?;
    let mut rgb = png_io::tensor_to_rgb8(image);
    for (i, o) in set.objects.iter().enumerate() {
        let tint = png_io::palette(i);
        for (&p, &occ) in o.pixels.iter().zip(&o.occluded) {
            let px = &mut rgb[p * 3..p * 3 + 3];
            for c in 0..3 {
                px[c] = if occ { 255 } else { ((px[c] as u16 + tint[c] as u16) / 2) as u8 };
            }
        }
    }
    png_io::write_rgb8(path, set.width, set.height, &rgb)
}
