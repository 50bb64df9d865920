//! Diffusion UNet: residual blocks with step embedding, self-attention at
//! configured resolutions, and residual (BigGAN-style) up/down sampling.
//!
//! Blocks are numbered sequentially from 0 over encoder, bottleneck and
//! decoder. The stem convolution and the output head are not blocks. For
//! `L = num_resolutions + 1` resolution levels and `R` resblocks per level
//! the network has `2 * (L * R + L - 1) + 1` blocks:
//!
//! * encoder, level by level: `R` resblocks, then a down block (except at
//!   the coarsest level);
//! * one bottleneck block (resblock, attention, resblock);
//! * decoder, coarsest level first: `R` resblocks that each consume one
//!   encoder skip, then an up block (except at the finest level).

use std::collections::BTreeSet;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv2d, Graph, GroupNorm, Linear, ParamStore, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePredictorConfig {
    pub image_size: usize,
    pub base_channels: usize,
    /// Channel multiplier per resolution level; length `num_resolutions + 1`.
    pub channel_mults: Vec<usize>,
    /// Number of 2x downsamplings.
    pub num_resolutions: usize,
    /// Spatial sizes (in pixels) that get self-attention.
    pub attention_resolutions: BTreeSet<usize>,
    pub resblocks_per_resolution: usize,
    pub step_embedding_dim: usize,
    pub heads: usize,
    pub norm_groups: usize,
}

impl NoisePredictorConfig {
    /// Full-size layout: 256x256 input down to 1/32.
    pub fn full_size() -> Self {
        Self {
            image_size: 256,
            base_channels: 128,
            channel_mults: vec![1, 1, 2, 2, 4, 4],
            num_resolutions: 5,
            attention_resolutions: [32, 16, 8].into_iter().collect(),
            resblocks_per_resolution: 2,
            step_embedding_dim: 512,
            heads: 4,
            norm_groups: 32,
        }
    }

    /// Desk-scale layout: 64x64 input down to 1/16.
    pub fn desk() -> Self {
        Self {
            image_size: 64,
            base_channels: 8,
            channel_mults: vec![1, 2, 2, 4, 4],
            num_resolutions: 4,
            attention_resolutions: [8, 4].into_iter().collect(),
            resblocks_per_resolution: 2,
            step_embedding_dim: 32,
            heads: 2,
            norm_groups: 4,
        }
    }

    pub fn levels(&self) -> usize {
        self.num_resolutions + 1
    }

    pub fn level_channels(&self, level: usize) -> usize {
        self.base_channels * self.channel_mults[level]
    }

    pub fn required_multiple(&self) -> usize {
        1 << self.num_resolutions
    }

    pub fn num_blocks(&self) -> usize {
        let l = self.levels();
        2 * (l * self.resblocks_per_resolution + l - 1) + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.step_embedding_dim == 0 || self.step_embedding_dim % 2 != 0 {
            return Err(Error::Config("base_channels and an even step_embedding_dim must be positive".into()));
        }
        if self.resblocks_per_resolution == 0 {
            return Err(Error::Config("resblocks_per_resolution must be >= 1".into()));
        }
        if self.channel_mults.len() != self.levels() {
            return Err(Error::Config(format!(
                "channel_mults has {} entries, need num_resolutions + 1 = {}",
                self.channel_mults.len(),
                self.levels()
            )));
        }
        if self.image_size % self.required_multiple() != 0 {
            return Err(Error::Config(format!(
                "image_size {} not divisible by {}",
                self.image_size,
                self.required_multiple()
            )));
        }
        let produced: BTreeSet<usize> = (0..self.levels()).map(|l| self.image_size >> l).collect();
        if let Some(r) = self.attention_resolutions.iter().find(|r| !produced.contains(r)) {
            return Err(Error::Config(format!(
                "attention resolution {r} is not produced; available {produced:?}"
            )));
        }
        for l in 0..self.levels() {
            let c = self.level_channels(l);
            if self.attention_resolutions.contains(&(self.image_size >> l)) && c % self.heads != 0 {
                return Err(Error::Config(format!("{c} channels not divisible by {} heads", self.heads)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Encoder,
    Down,
    Bottleneck,
    Decoder,
    Up,
}

/// Static description of one numbered block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub index: usize,
    pub kind: BlockKind,
    /// Output spatial size relative to the configured image size, as a
    /// power-of-two divisor.
    pub downscale: usize,
    pub channels: usize,
}

struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    emb: Linear,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
    resample: Resample,
}

#[derive(Clone, Copy, PartialEq)]
enum Resample {
    None,
    Down,
    Up,
}

impl ResBlock {
    fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, cfg: &NoisePredictorConfig, resample: Resample, rng: &mut ChaCha8Rng) -> Self {
        let stride = if resample == Resample::Down { 2 } else { 1 };
        Self {
            norm1: GroupNorm::new(store, &format!("{name}.norm1"), cin, cfg.norm_groups),
            conv1: Conv2d::new(store, &format!("{name}.conv1"), cin, cout, 3, stride, rng),
            emb: Linear::new(store, &format!("{name}.emb"), cfg.step_embedding_dim, cout, rng),
            norm2: GroupNorm::new(store, &format!("{name}.norm2"), cout, cfg.norm_groups),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), cout, cout, 3, 1, rng),
            skip: (cin != cout).then(|| Conv2d::new(store, &format!("{name}.skip"), cin, cout, 1, 1, rng)),
            resample,
        }
    }

    fn forward(&self, g: &mut Graph, x: Var, emb: Var) -> Var {
        let h = self.norm1.forward(g, x);
        let mut h = g.silu(h);
        if self.resample == Resample::Up {
            h = g.upsample2(h);
        }
        let h = self.conv1.forward(g, h);
        let e = self.emb.forward(g, emb);
        let h = g.add_channel(h, e);
        let h = self.norm2.forward(g, h);
        let h = g.silu(h);
        let h = self.conv2.forward(g, h);
        let mut skip = match self.resample {
            Resample::None => x,
            Resample::Down => g.avg_pool2(x),
            Resample::Up => g.upsample2(x),
        };
        if let Some(proj) = &self.skip {
            skip = proj.forward(g, skip);
        }
        g.add(skip, h)
    }
}

struct AttnBlock {
    norm: GroupNorm,
    qkv: Conv2d,
    proj: Conv2d,
    heads: usize,
}

impl AttnBlock {
    fn new(store: &mut ParamStore, name: &str, c: usize, cfg: &NoisePredictorConfig, rng: &mut ChaCha8Rng) -> Self {
        Self {
            norm: GroupNorm::new(store, &format!("{name}.norm"), c, cfg.norm_groups),
            qkv: Conv2d::new(store, &format!("{name}.qkv"), c, 3 * c, 1, 1, rng),
            proj: Conv2d::zeroed(store, &format!("{name}.proj"), c, c, 1),
            heads: cfg.heads,
        }
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.norm.forward(g, x);
        let qkv = self.qkv.forward(g, h);
        let a = g.attention(qkv, self.heads);
        let p = self.proj.forward(g, a);
        g.add(x, p)
    }
}

enum Block {
    Res { res: ResBlock, attn: Option<AttnBlock>, skip_in: bool, skip_out: bool },
    Resample(ResBlock),
    Middle { first: ResBlock, attn: AttnBlock, second: ResBlock },
}

/// Output of a (possibly truncated) forward pass.
pub struct UNetOutput {
    /// Noise estimate; `None` when the pass stopped early.
    pub eps: Option<Var>,
    /// Output of every block that was evaluated, indexed by block number.
    pub blocks: Vec<Var>,
}

pub struct NoisePredictor {
    pub config: NoisePredictorConfig,
    stem: Conv2d,
    emb1: Linear,
    emb2: Linear,
    blocks: Vec<Block>,
    infos: Vec<BlockInfo>,
    out_norm: GroupNorm,
    out_conv: Conv2d,
}

impl NoisePredictor {
    /// Builds the network, registering freshly initialised weights in `store`.
    pub fn new(config: NoisePredictorConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let cfg = &config;
        let r = cfg.resblocks_per_resolution;
        let levels = cfg.levels();
        let edim = cfg.step_embedding_dim;
        let stem = Conv2d::new(store, "stem", 3, cfg.level_channels(0), 3, 1, rng);
        let emb1 = Linear::new(store, "step_emb.0", edim, edim, rng);
        let emb2 = Linear::new(store, "step_emb.1", edim, edim, rng);
        let mut blocks = Vec::new();
        let mut infos = Vec::new();
        let attn_at = |level: usize| cfg.attention_resolutions.contains(&(cfg.image_size >> level));
        let mut push = |blocks: &mut Vec<Block>, block: Block, kind: BlockKind, level: usize, channels: usize| {
            infos.push(BlockInfo { index: blocks.len(), kind, downscale: 1 << level, channels });
            blocks.push(block);
        };

        let mut ch = cfg.level_channels(0);
        let mut skip_channels = Vec::new();
        for level in 0..levels {
            let out = cfg.level_channels(level);
            for _ in 0..r {
                let name = format!("block{}", blocks.len());
                let res = ResBlock::new(store, &name, ch, out, cfg, Resample::None, rng);
                let attn = attn_at(level).then(|| AttnBlock::new(store, &format!("{name}.attn"), out, cfg, rng));
                push(&mut blocks, Block::Res { res, attn, skip_in: false, skip_out: true }, BlockKind::Encoder, level, out);
                skip_channels.push(out);
                ch = out;
            }
            if level + 1 < levels {
                let name = format!("block{}", blocks.len());
                let down = ResBlock::new(store, &name, ch, ch, cfg, Resample::Down, rng);
                push(&mut blocks, Block::Resample(down), BlockKind::Down, level + 1, ch);
            }
        }

        let name = format!("block{}", blocks.len());
        let middle = Block::Middle {
            first: ResBlock::new(store, &format!("{name}.0"), ch, ch, cfg, Resample::None, rng),
            attn: AttnBlock::new(store, &format!("{name}.attn"), ch, cfg, rng),
            second: ResBlock::new(store, &format!("{name}.1"), ch, ch, cfg, Resample::None, rng),
        };
        push(&mut blocks, middle, BlockKind::Bottleneck, levels - 1, ch);

        for level in (0..levels).rev() {
            let out = cfg.level_channels(level);
            for _ in 0..r {
                let skip = skip_channels.pop().expect("skip per decoder resblock");
                let name = format!("block{}", blocks.len());
                let res = ResBlock::new(store, &name, ch + skip, out, cfg, Resample::None, rng);
                let attn = attn_at(level).then(|| AttnBlock::new(store, &format!("{name}.attn"), out, cfg, rng));
                push(&mut blocks, Block::Res { res, attn, skip_in: true, skip_out: false }, BlockKind::Decoder, level, out);
                ch = out;
            }
            if level > 0 {
                let name = format!("block{}", blocks.len());
                let next = cfg.level_channels(level - 1);
                let up = ResBlock::new(store, &name, ch, next, cfg, Resample::Up, rng);
                push(&mut blocks, Block::Resample(up), BlockKind::Up, level - 1, next);
                ch = next;
            }
        }
        debug_assert_eq!(blocks.len(), cfg.num_blocks());

        let out_norm = GroupNorm::new(store, "out.norm", ch, cfg.norm_groups);
        let out_conv = Conv2d::zeroed(store, "out.conv", ch, 3, 3);
        Ok(Self { config, stem, emb1, emb2, blocks, infos, out_norm, out_conv })
    }

    pub fn block_infos(&self) -> &[BlockInfo] {
        &self.infos
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Checks that `x` is `[n, 3, h, w]` with `h`, `w` divisible by the
    /// downsampling factor.
    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        let shape = x.shape();
        let m = self.config.required_multiple();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::Shape(format!("expected [n, 3, h, w] input, got {shape:?}")));
        }
        if shape[2] % m != 0 || shape[3] % m != 0 {
            return Err(Error::Shape(format!(
                "spatial size {}x{} must be a multiple of {m}",
                shape[2], shape[3]
            )));
        }
        Ok(())
    }

    /// Runs the network on `x` (already noised) at per-item steps `steps`.
    /// With `until = Some(b)` evaluation stops after block `b`.
    pub fn forward(&self, g: &mut Graph, x: Var, steps: &[usize], until: Option<usize>) -> Result<UNetOutput> {
        self.check_input(g.value(x))?;
        let n = g.value(x).shape()[0];
        if steps.len() != n {
            return Err(Error::Shape(format!("{} steps for a batch of {n}", steps.len())));
        }
        let last = until.unwrap_or(self.blocks.len() - 1);
        if last >= self.blocks.len() {
            return Err(Error::Config(format!(
                "block {last} does not exist; valid indices are 0..={}",
                self.blocks.len() - 1
            )));
        }
        let emb = g.input(step_embedding(steps, self.config.step_embedding_dim));
        let emb = self.emb1.forward(g, emb);
        let emb = g.silu(emb);
        let emb = self.emb2.forward(g, emb);
        let emb = g.silu(emb);

        let mut h = self.stem.forward(g, x);
        let mut skips = Vec::new();
        let mut outputs = Vec::with_capacity(last + 1);
        for block in &self.blocks[..=last] {
            h = match block {
                Block::Res { res, attn, skip_in, skip_out } => {
                    let input = if *skip_in {
                        let s = skips.pop().expect("encoder skip");
                        g.concat(&[h, s])
                    } else {
                        h
                    };
                    let mut y = res.forward(g, input, emb);
                    if let Some(a) = attn {
                        y = a.forward(g, y);
                    }
                    if *skip_out {
                        skips.push(y);
                    }
                    y
                }
                Block::Resample(res) => res.forward(g, h, emb),
                Block::Middle { first, attn, second } => {
                    let y = first.forward(g, h, emb);
                    let y = attn.forward(g, y);
                    second.forward(g, y, emb)
                }
            };
            outputs.push(h);
        }
        let eps = (last + 1 == self.blocks.len()).then(|| {
            let y = self.out_norm.forward(g, h);
            let y = g.silu(y);
            self.out_conv.forward(g, y)
        });
        Ok(UNetOutput { eps, blocks: outputs })
    }

    /// Noise estimate for a batch, without recording gradients for later use.
    pub fn predict_noise(&self, store: &ParamStore, x_t: &Tensor, steps: &[usize]) -> Result<Tensor> {
        let mut g = Graph::new(store);
        let x = g.input(x_t.clone());
        let out = self.forward(&mut g, x, steps, None)?;
        Ok(g.value(out.eps.expect("full pass")).clone())
    }
}

/// Sinusoidal embedding `[sin(t * f_i), cos(t * f_i)]` with geometric
/// frequencies `f_i = 10000^(-i / (dim/2))`.
pub fn step_embedding(steps: &[usize], dim: usize) -> Tensor {
    let half = dim / 2;
    let mut out = Vec::with_capacity(steps.len() * dim);
    for &t in steps {
        let freqs = (0..half).map(|i| (-(10000f64.ln()) * i as f64 / half as f64).exp());
        let args: Vec<f64> = freqs.map(|f| t as f64 * f).collect();
        out.extend(args.iter().map(|a| a.sin() as f32));
        out.extend(args.iter().map(|a| a.cos() as f32));
    }
    Tensor::from_vec(&[steps.len(), dim], out).expect("embedding shape")
}
