//! Structure-aware features: intermediate block outputs of the frozen noise
//! predictor, taken at chosen diffusion steps and resized to 1/2, 1/4 and
//! 1/8 of the input resolution.

use std::collections::BTreeMap;
use std::fmt;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::unet::NoisePredictor;
use crate::diffusion::{q_sample, NoiseSchedule};
use crate::error::{Error, Result};
use crate::nn::kernels::resize_bilinear;
use crate::nn::{Graph, ParamStore};
use crate::rng::normal_tensor;
use crate::tensor::Tensor;

/// Output scale of a tapped feature relative to the input image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureScale {
    #[serde(rename = "1/2")]
    Half,
    #[serde(rename = "1/4")]
    Quarter,
    #[serde(rename = "1/8")]
    Eighth,
}

impl FeatureScale {
    pub const ALL: [FeatureScale; 3] = [FeatureScale::Half, FeatureScale::Quarter, FeatureScale::Eighth];

    pub fn divisor(self) -> usize {
        match self {
            FeatureScale::Half => 2,
            FeatureScale::Quarter => 4,
            FeatureScale::Eighth => 8,
        }
    }

    /// `floor(size * scale)`.
    pub fn apply(self, size: usize) -> usize {
        size / self.divisor()
    }
}

impl fmt::Display for FeatureScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "1/{}", self.divisor())
    }
}

/// One `(step, block)` pair and the scale its feature is resized to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureTap {
    pub step: usize,
    pub block: usize,
    pub target_scale: FeatureScale,
}

impl FeatureTap {
    pub fn new(step: usize, block: usize, target_scale: FeatureScale) -> Self {
        Self { step, block, target_scale }
    }

    /// Taps for the full-size network (256x256, six resolution levels).
    pub fn full_size_defaults() -> Vec<Self> {
        vec![
            Self::new(50, 12, FeatureScale::Half),
            Self::new(100, 8, FeatureScale::Quarter),
            Self::new(150, 5, FeatureScale::Eighth),
            Self::new(150, 6, FeatureScale::Eighth),
            Self::new(150, 7, FeatureScale::Eighth),
        ]
    }

    /// [`FeatureTap::full_size_defaults`] with block indices remapped onto the
    /// desk-scale network.
    pub fn desk_defaults() -> Vec<Self> {
        let from = super::NoisePredictorConfig::full_size().num_blocks();
        let to = super::NoisePredictorConfig::desk().num_blocks();
        Self::full_size_defaults()
            .into_iter()
            .map(|t| Self { block: remap_block(t.block, from, to), ..t })
            .collect()
    }
}

/// Proportional remapping of a block index between networks with
/// `from_blocks` and `to_blocks` blocks.
pub fn remap_block(block: usize, from_blocks: usize, to_blocks: usize) -> usize {
    let scaled = (block as f64 * to_blocks as f64 / from_blocks as f64).round() as usize;
    scaled.min(to_blocks - 1)
}

/// Feature maps grouped by output scale; each map is `[n, c, h, w]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureBundle {
    maps: BTreeMap<FeatureScale, Tensor>,
}

impl FeatureBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, scale: FeatureScale, map: Tensor) {
        self.maps.insert(scale, map);
    }

    pub fn get(&self, scale: FeatureScale) -> Option<&Tensor> {
        self.maps.get(&scale)
    }

    pub fn scales(&self) -> impl Iterator<Item = FeatureScale> + '_ {
        self.maps.keys().copied()
    }

    pub fn missing_scales(&self) -> Vec<FeatureScale> {
        FeatureScale::ALL.into_iter().filter(|s| !self.maps.contains_key(s)).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.missing_scales().is_empty()
    }

    pub fn channels(&self, scale: FeatureScale) -> Option<usize> {
        self.maps.get(&scale).map(|t| t.shape()[1])
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            maps: self.maps.iter().map(|(&s, t)| (s, Tensor::zeros(t.shape()))).collect(),
        }
    }

    /// Items `indices` of every map, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut maps = BTreeMap::new();
        for (&s, t) in &self.maps {
            let items: Vec<Tensor> = indices.iter().map(|&i| t.batch_item(i)).collect();
            let refs: Vec<&Tensor> = items.iter().collect();
            maps.insert(s, Tensor::stack(&refs)?);
        }
        Ok(Self { maps })
    }

    /// Concatenates bundles along the batch axis.
    pub fn concat_batch(parts: &[FeatureBundle]) -> Result<Self> {
        let mut maps = BTreeMap::new();
        let Some(first) = parts.first() else { return Ok(Self::default()) };
        for s in first.scales() {
            let mut items = Vec::new();
            for p in parts {
                let t = p.get(s).ok_or_else(|| Error::Config(format!("bundle part lacks scale {s}")))?;
                for i in 0..t.shape()[0] {
                    items.push(t.batch_item(i));
                }
            }
            let refs: Vec<&Tensor> = items.iter().collect();
            maps.insert(s, Tensor::stack(&refs)?);
        }
        Ok(Self { maps })
    }
}

/// Validates taps against the instantiated network.
pub fn check_taps(net: &NoisePredictor, taps: &[FeatureTap], sched: &NoiseSchedule) -> Result<()> {
    if taps.is_empty() {
        return Err(Error::Config("at least one feature tap is required".into()));
    }
    let n = net.num_blocks();
    for tap in taps {
        if tap.block >= n {
            return Err(Error::Config(format!(
                "tap block {} does not exist; valid block indices are 0..={}",
                tap.block,
                n - 1
            )));
        }
        if tap.step >= sched.steps() {
            return Err(Error::Config(format!("tap step {} outside schedule of {} steps", tap.step, sched.steps())));
        }
    }
    Ok(())
}

/// Noises `x0` (`[n, 3, h, w]`) once per distinct tap step, runs the frozen
/// network up to the deepest block needed, and assembles the bundle. Taps
/// that share a scale are concatenated on channels in tap order.
pub fn extract_structure_features(
    net: &NoisePredictor,
    store: &ParamStore,
    x0: &Tensor,
    taps: &[FeatureTap],
    sched: &NoiseSchedule,
    noise: &mut ChaCha8Rng,
) -> Result<FeatureBundle> {
    check_taps(net, taps, sched)?;
    net.check_input(x0)?;
    let (n, _, h, w) = x0.dims4();
    let mut steps: Vec<usize> = Vec::new();
    for t in taps {
        if !steps.contains(&t.step) {
            steps.push(t.step);
        }
    }
    let mut tapped: Vec<Option<Tensor>> = vec![None; taps.len()];
    for &step in &steps {
        let eps = normal_tensor(x0.shape(), noise);
        let noisy = q_sample(x0, step, &eps, sched)?;
        let deepest = taps.iter().filter(|t| t.step == step).map(|t| t.block).max().unwrap();
        let mut g = Graph::new(store);
        let x = g.input(noisy.pixels);
        let out = net.forward(&mut g, x, &vec![step; n], Some(deepest))?;
        for (i, tap) in taps.iter().enumerate().filter(|(_, t)| t.step == step) {
            let feat = g.value(out.blocks[tap.block]);
            let (_, c, fh, fw) = feat.dims4();
            let (oh, ow) = (tap.target_scale.apply(h), tap.target_scale.apply(w));
            let resized = resize_bilinear(feat.data(), n, c, fh, fw, oh, ow);
            tapped[i] = Some(Tensor::from_vec(&[n, c, oh, ow], resized)?);
        }
    }
    let mut bundle = FeatureBundle::new();
    for scale in FeatureScale::ALL {
        let parts: Vec<&Tensor> = taps
            .iter()
            .zip(&tapped)
            .filter(|(t, _)| t.target_scale == scale)
            .map(|(_, f)| f.as_ref().expect("tap evaluated"))
            .collect();
        if parts.is_empty() {
            continue;
        }
        bundle.insert(scale, concat_channels(&parts)?);
    }
    Ok(bundle)
}

fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let (n, _, h, w) = parts[0].dims4();
    let total: usize = parts.iter().map(|t| t.shape()[1]).sum();
    let hw = h * w;
    let mut data = Vec::with_capacity(n * total * hw);
    for b in 0..n {
        for t in parts {
            let c = t.shape()[1];
            data.extend_from_slice(&t.data()[b * c * hw..(b + 1) * c * hw]);
        }
    }
    Tensor::from_vec(&[n, total, h, w], data)
}
