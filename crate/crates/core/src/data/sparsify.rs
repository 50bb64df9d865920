//! Annotation-density simulation: thin a validity mask to a target density.

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::depth_map::DepthMap;
use crate::error::{Error, Result};
use crate::rng::{derive_rng, tags};

/// Fraction of each kept row's valid pixels the scanline pattern expects to
/// retain when choosing how many rows to keep.
pub const ROW_KEEP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SparsityPattern {
    Uniform,
    Scanline,
}

/// Acceptable gap between achieved and target density for `n` pixels.
pub fn density_tolerance(target: f64, n: usize) -> f64 {
    (0.02 * target).max(0.5 / n as f64)
}

/// Number of valid pixels kept for a target density over `n` pixels.
pub fn target_count(target_density: f64, n: usize) -> usize {
    ((target_density * n as f64).round() as usize).max(1)
}

/// Keeps `round(target_density * h * w)` of the currently valid pixels.
///
/// `Uniform` samples without replacement. `Scanline` visits rows with valid
/// pixels in a random order (a Poisson process conditioned on the row count),
/// keeps rows until they could supply the target at [`ROW_KEEP`] retention,
/// then samples the exact count within the kept rows. Values are untouched.
pub fn sparsify(gt: &DepthMap, target_density: f64, pattern: SparsityPattern, seed: u64) -> Result<DepthMap> {
    let n = gt.len();
    if !(target_density > 0.0 && target_density <= 1.0) {
        return Err(Error::Range(format!("target density {target_density} outside (0, 1]")));
    }
    let current = gt.valid_count();
    let m = target_count(target_density, n);
    if m > current {
        return Err(Error::Range(format!(
            "target density {target_density} exceeds current density {}",
            gt.density()
        )));
    }
    if m == current {
        return Ok(gt.clone());
    }
    let mut rng = derive_rng(seed, &[tags::SPARSIFY]);
    let pool: Vec<usize> = match pattern {
        SparsityPattern::Uniform => (0..n).filter(|&i| gt.valid[i]).collect(),
        SparsityPattern::Scanline => {
            let w = gt.width;
            let mut rows: Vec<usize> = (0..gt.height).filter(|&r| gt.valid[r * w..(r + 1) * w].iter().any(|&v| v)).collect();
            rows.shuffle(&mut rng);
            let mut kept = Vec::new();
            let mut capacity = 0.0;
            let mut total = 0;
            for r in rows {
                if capacity >= m as f64 && total >= m {
                    break;
                }
                let c = gt.valid[r * w..(r + 1) * w].iter().filter(|&&v| v).count();
                capacity += ROW_KEEP * c as f64;
                total += c;
                kept.push(r);
            }
            kept.sort_unstable();
            kept.iter().flat_map(|&r| (r * w..(r + 1) * w).filter(|&i| gt.valid[i])).collect()
        }
    };
    let mut valid = vec![false; n];
    for j in index::sample(&mut rng, pool.len(), m) {
        valid[pool[j]] = true;
    }
    DepthMap::new(gt.height, gt.width, gt.values.clone(), valid)
}

/// Rows that contain at least one valid pixel.
pub fn occupied_rows(d: &DepthMap) -> usize {
    (0..d.height)
        .filter(|&r| d.valid[r * d.width..(r + 1) * d.width].iter().any(|&v| v))
        .count()
}
