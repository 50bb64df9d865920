//! k-means cluster maps of structure features and their connected-component
//! statistics.

use serde::Serialize;

use crate::cluster::{connected_components, kmeans, ComponentStats};
use crate::data::png_io;
use crate::diffusion::NoiseSchedule;
use crate::error::{shape_err, Result};
use crate::nn::ParamStore;
use crate::noise_predictor::{extract_structure_features, FeatureTap, NoisePredictor};
use crate::rng::{derive_rng, tags};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterMap {
    pub tap: FeatureTap,
    pub height: usize,
    pub width: usize,
    pub labels: Vec<usize>,
    pub stats: ComponentStats,
}

impl ClusterMap {
    pub fn to_rgb(&self) -> Vec<u8> {
        self.labels.iter().flat_map(|&l| png_io::palette(l)).collect()
    }
}

/// Clusters the pixels of a `[1, c, h, w]` map by their channel vectors.
pub fn cluster_feature_map(map: &Tensor, k: usize, seed: u64) -> Result<(Vec<usize>, usize, usize)> {
    let s = map.shape();
    if s.len() != 4 || s[0] != 1 {
        return Err(shape_err!("expected a [1, c, h, w] feature map, got {s:?}"));
    }
    let (c, h, w) = (s[1], s[2], s[3]);
    let hw = h * w;
    let d = map.data();
    let mut points = Vec::with_capacity(hw * c);
    for i in 0..hw {
        for ch in 0..c {
            points.push(d[ch * hw + i] as f64);
        }
    }
    let km = kmeans(&points, c, k.min(hw), seed, 0);
    Ok((km.assignments, h, w))
}

/// One cluster map per tap for a single `[3, h, w]` image. All taps sharing a
/// step see the same noise draw.
pub fn feature_cluster_maps(
    net: &NoisePredictor,
    store: &ParamStore,
    sched: &NoiseSchedule,
    image: &Tensor,
    taps: &[FeatureTap],
    k: usize,
    seed: u64,
) -> Result<Vec<ClusterMap>> {
    let x = Tensor::stack(&[image])?;
    let mut out = Vec::with_capacity(taps.len());
    for tap in taps {
        let mut rng = derive_rng(seed, &[tags::FEATURES, tags::EVAL, tap.step as u64]);
        let bundle = extract_structure_features(net, store, &x, &[*tap], sched, &mut rng)?;
        let map = bundle.get(tap.target_scale).expect("single-tap bundle");
        let (labels, h, w) = cluster_feature_map(map, k, seed)?;
        let stats = connected_components(&labels, h, w);
        out.push(ClusterMap {
            tap: *tap,
            height: h,
            width: w,
            labels,
            stats,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cluster_covers_map() {
        let map = Tensor::from_vec(&[1, 2, 3, 3], (0..18).map(|v| v as f32).collect()).unwrap();
        let (labels, h, w) = cluster_feature_map(&map, 1, 0).unwrap();
        let s = connected_components(&labels, h, w);
        assert_eq!((s.components, s.mean_area), (1, 9.0));
    }
}
