use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::depth_map::DepthMap;
use crate::error::{shape_err, Error, Result};
use crate::nn::{Conv2d, Graph, GroupNorm, ParamStore, Var};
use crate::noise_predictor::{FeatureBundle, FeatureScale};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthPredictorConfig {
    /// Widths at 1, 1/2, 1/4 and 1/8 resolution.
    pub encoder_channels: Vec<usize>,
    /// Widths at 1/8, 1/4, 1/2 and 1 resolution.
    pub decoder_channels: Vec<usize>,
    pub fusion_scales: BTreeSet<FeatureScale>,
    pub fusion_enabled: bool,
    /// Channel count of the structure features at each fused scale.
    pub structure_channels: BTreeMap<FeatureScale, usize>,
    pub norm_groups: usize,
}

impl DepthPredictorConfig {
    pub fn desk(structure_channels: BTreeMap<FeatureScale, usize>, fusion_enabled: bool) -> Self {
        Self {
            encoder_channels: vec![12, 16, 24, 32],
            decoder_channels: vec![32, 24, 16, 12],
            fusion_scales: FeatureScale::ALL.into_iter().collect(),
            fusion_enabled,
            structure_channels,
            norm_groups: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.len() != 4 || self.decoder_channels.len() != 4 {
            return Err(Error::Config("depth network needs 4 encoder and 4 decoder widths".into()));
        }
        if self.encoder_channels.iter().chain(&self.decoder_channels).any(|&c| c == 0) {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        if self.fusion_enabled {
            if self.fusion_scales.is_empty() {
                return Err(Error::Config("fusion enabled with no fusion scales".into()));
            }
            for s in &self.fusion_scales {
                if !self.structure_channels.contains_key(s) {
                    return Err(Error::Config(format!("no structure channel count for fusion scale {s}")));
                }
            }
        }
        Ok(())
    }

    pub fn required_multiple(&self) -> usize {
        8
    }
}

fn decoder_level(scale: FeatureScale) -> usize {
    match scale {
        FeatureScale::Eighth => 0,
        FeatureScale::Quarter => 1,
        FeatureScale::Half => 2,
    }
}

fn level_scale(level: usize) -> Option<FeatureScale> {
    FeatureScale::ALL.into_iter().find(|&s| decoder_level(s) == level)
}

/// Conv, group norm, SiLU.
#[derive(Debug, Clone)]
struct ConvUnit {
    conv: Conv2d,
    norm: GroupNorm,
}

impl ConvUnit {
    fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, stride: usize, groups: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv: Conv2d::new(store, &format!("{name}.conv"), cin, cout, 3, stride, rng),
            norm: GroupNorm::new(store, &format!("{name}.norm"), cout, groups),
        }
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.conv.forward(g, x);
        let h = self.norm.forward(g, h);
        g.silu(h)
    }
}

/// Merges structure features into a decoder stage.
///
/// The structure map is projected to the detail width, concatenated with the
/// detail map, passed through one conv unit, and added back to the detail map
/// through a zero-initialised 1x1 projection, so the module starts as the
/// identity on the detail path.
#[derive(Debug, Clone)]
pub struct FeatureFusion {
    project: Conv2d,
    mix: ConvUnit,
    out: Conv2d,
    pub detail_channels: usize,
    pub structure_channels: usize,
}

impl FeatureFusion {
    pub fn new(store: &mut ParamStore, name: &str, detail_channels: usize, structure_channels: usize, groups: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            project: Conv2d::new(store, &format!("{name}.project"), structure_channels, detail_channels, 1, 1, rng),
            mix: ConvUnit::new(store, &format!("{name}.mix"), 2 * detail_channels, detail_channels, 1, groups, rng),
            out: Conv2d::zeroed(store, &format!("{name}.out"), detail_channels, detail_channels, 1),
            detail_channels,
            structure_channels,
        }
    }

    pub fn forward(&self, g: &mut Graph, detail: Var, structure: Var) -> Result<Var> {
        let (dn, dc, dh, dw) = g.value(detail).dims4();
        let (sn, sc, sh, sw) = g.value(structure).dims4();
        if (dn, dh, dw) != (sn, sh, sw) {
            return Err(shape_err!("fusion inputs differ: detail [{dn}, {dc}, {dh}, {dw}], structure [{sn}, {sc}, {sh}, {sw}]"));
        }
        if dc != self.detail_channels || sc != self.structure_channels {
            return Err(shape_err!(
                "fusion expects {} detail and {} structure channels, got {dc} and {sc}",
                self.detail_channels,
                self.structure_channels
            ));
        }
        let s = self.project.forward(g, structure);
        let cat = g.concat(&[detail, s]);
        let h = self.mix.forward(g, cat);
        let h = self.out.forward(g, h);
        Ok(g.add(detail, h))
    }
}

/// Four-level convolutional encoder-decoder with skip connections and a
/// fusion module at each configured decoder scale.
#[derive(Debug, Clone)]
pub struct DepthNet {
    pub config: DepthPredictorConfig,
    encoder: Vec<[ConvUnit; 2]>,
    decoder: Vec<[ConvUnit; 2]>,
    fusion: BTreeMap<FeatureScale, FeatureFusion>,
    head: Conv2d,
}

impl DepthNet {
    pub fn new(config: DepthPredictorConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let (enc, dec, groups) = (&config.encoder_channels, &config.decoder_channels, config.norm_groups);
        let mut encoder = Vec::new();
        for l in 0..4 {
            let cin = if l == 0 { 3 } else { enc[l - 1] };
            let stride = if l == 0 { 1 } else { 2 };
            encoder.push([
                ConvUnit::new(store, &format!("enc{l}.a"), cin, enc[l], stride, groups, rng),
                ConvUnit::new(store, &format!("enc{l}.b"), enc[l], enc[l], 1, groups, rng),
            ]);
        }
        let mut decoder = Vec::new();
        for l in 0..4 {
            // Stage 0 reads the bottleneck; later stages read the upsampled
            // previous stage concatenated with the matching encoder skip.
            let cin = if l == 0 { enc[3] } else { dec[l - 1] + enc[3 - l] };
            decoder.push([
                ConvUnit::new(store, &format!("dec{l}.a"), cin, dec[l], 1, groups, rng),
                ConvUnit::new(store, &format!("dec{l}.b"), dec[l], dec[l], 1, groups, rng),
            ]);
        }
        let mut fusion = BTreeMap::new();
        if config.fusion_enabled {
            for &s in &config.fusion_scales {
                let l = decoder_level(s);
                fusion.insert(
                    s,
                    FeatureFusion::new(store, &format!("ffm{l}"), dec[l], config.structure_channels[&s], groups, rng),
                );
            }
        }
        let head = Conv2d::new(store, "head", dec[3], 1, 1, 1, rng);
        Ok(Self {
            config,
            encoder,
            decoder,
            fusion,
            head,
        })
    }

    pub fn fusion_module(&self, scale: FeatureScale) -> Option<&FeatureFusion> {
        self.fusion.get(&scale)
    }

    fn check(&self, x: &Tensor, features: Option<&FeatureBundle>) -> Result<()> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(shape_err!("depth network expects [n, 3, h, w], got {s:?}"));
        }
        let m = self.config.required_multiple();
        if s[2] % m != 0 || s[3] % m != 0 {
            return Err(shape_err!("input {}x{} is not a multiple of {m}", s[2], s[3]));
        }
        if self.config.fusion_enabled {
            let bundle = features.ok_or_else(|| Error::Config("fusion enabled but no structure features supplied".into()))?;
            for &scale in &self.config.fusion_scales {
                let map = bundle
                    .get(scale)
                    .ok_or_else(|| Error::Config(format!("structure features missing scale {scale}")))?;
                let want = [s[0], self.config.structure_channels[&scale], scale.apply(s[2]), scale.apply(s[3])];
                if map.shape() != want {
                    return Err(shape_err!("structure features at {scale} are {:?}, expected {want:?}", map.shape()));
                }
            }
        }
        Ok(())
    }

    /// Returns the `[n, 1, h, w]` prediction.
    pub fn forward(&self, g: &mut Graph, x: Var, features: Option<&FeatureBundle>) -> Result<Var> {
        self.check(g.value(x), features)?;
        let mut skips = Vec::with_capacity(4);
        let mut h = x;
        for [a, b] in &self.encoder {
            h = a.forward(g, h);
            h = b.forward(g, h);
            skips.push(h);
        }
        for (l, [a, b]) in self.decoder.iter().enumerate() {
            if l > 0 {
                let up = g.upsample2(h);
                h = g.concat(&[up, skips[3 - l]]);
            }
            h = a.forward(g, h);
            h = b.forward(g, h);
            let fused = level_scale(l).and_then(|s| Some((s, self.fusion.get(&s)?)));
            if let (Some(bundle), Some((scale, ffm))) = (features, fused) {
                let s = g.input(bundle.get(scale).expect("checked").clone());
                h = ffm.forward(g, h, s)?;
            }
        }
        Ok(self.head.forward(g, h))
    }

    /// Dense predictions for a `[n, 3, h, w]` batch.
    pub fn predict(&self, store: &ParamStore, x0: &Tensor, features: Option<&FeatureBundle>) -> Result<Vec<DepthMap>> {
        let mut g = Graph::new(store);
        let x = g.input(x0.clone());
        let out = self.forward(&mut g, x, features)?;
        let t = g.value(out);
        (0..t.shape()[0]).map(|i| DepthMap::from_tensor(&t.batch_item(i))).collect()
    }
}
