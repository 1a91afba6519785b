//! Video encoder: cube-projection tokenizer, multiscale pooled-attention
//! stages, CLS (or average) readout, and the two projection heads.
//!
//! Gradients are computed by explicit backward passes over cached
//! activations; there is no autograd tape.

mod backbone;
mod heads;
pub mod ops;
pub mod params;

use std::sync::atomic::{AtomicU64, Ordering};

pub use backbone::{BlockSpec, Forward, ForwardCache, TokenGrid};
pub(crate) use backbone::two_mut;
pub use heads::{HeadCache, HeadKind, PretextCache};
pub use ops::Grid;
pub use params::{ParamSet, Tensor};

use crate::config::{Config, HeadsMode, Objective, PoolingMode};
use crate::error::Result;
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Encoder geometry and head sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub frames: usize,
    pub size: usize,
    pub channels: usize,
    pub temporal_kernel: usize,
    pub temporal_stride: usize,
    pub spatial_patch: usize,
    pub spatial_stride: usize,
    pub stage_channels: Vec<usize>,
    pub stage_blocks: Vec<usize>,
    pub stage_heads: Vec<usize>,
    pub mlp_ratio: usize,
    pub pooling: PoolingMode,
    pub head_hidden: usize,
    pub head_out: usize,
    pub heads_mode: HeadsMode,
    /// Adds the binary shuffled/ordered classifier used by the pretext baseline.
    pub pretext_head: bool,
}

impl ModelConfig {
    pub fn from_config(cfg: &Config) -> Self {
        Self {
            frames: cfg.clip_length,
            size: cfg.crop_size,
            channels: cfg.input_channels,
            temporal_kernel: cfg.temporal_kernel,
            temporal_stride: cfg.group_size,
            spatial_patch: cfg.spatial_patch,
            spatial_stride: cfg.spatial_stride,
            stage_channels: cfg.stage_channels.clone(),
            stage_blocks: cfg.stage_blocks.clone(),
            stage_heads: cfg.stage_heads.clone(),
            mlp_ratio: cfg.mlp_ratio,
            pooling: cfg.pooling_mode,
            head_hidden: cfg.head_hidden,
            head_out: cfg.head_out,
            heads_mode: cfg.heads_mode,
            pretext_head: cfg.objective == Objective::Pretext,
        }
    }

    /// Two blocks, 64-bit friendly sizes; used by gradient checks.
    pub fn micro() -> Self {
        Self {
            frames: 4,
            size: 8,
            channels: 3,
            temporal_kernel: 2,
            temporal_stride: 2,
            spatial_patch: 4,
            spatial_stride: 4,
            stage_channels: vec![4, 8],
            stage_blocks: vec![1, 1],
            stage_heads: vec![1, 2],
            mlp_ratio: 2,
            pooling: PoolingMode::Cls,
            head_hidden: 6,
            head_out: 4,
            heads_mode: HeadsMode::Separate,
            pretext_head: false,
        }
    }

    /// Temporal padding: none for kernel 2, one frame each side for kernel 3.
    pub fn temporal_padding(&self) -> usize {
        (self.temporal_kernel - 1) / 2
    }

    pub fn spatial_padding(&self) -> usize {
        (self.spatial_patch - self.spatial_stride).div_ceil(2)
    }

    pub fn token_grid(&self) -> Grid {
        let pt = self.temporal_padding();
        let ps = self.spatial_padding();
        let side = (self.size + 2 * ps - self.spatial_patch) / self.spatial_stride + 1;
        Grid {
            t: (self.frames + 2 * pt - self.temporal_kernel) / self.temporal_stride + 1,
            h: side,
            w: side,
        }
    }

    /// Input features per cube.
    pub fn patch_dim(&self) -> usize {
        self.temporal_kernel * self.spatial_patch * self.spatial_patch * self.channels
    }

    pub fn repr_dim(&self) -> usize {
        *self.stage_channels.last().expect("at least one stage")
    }

    pub fn block_specs(&self) -> Vec<BlockSpec> {
        let mut specs = Vec::new();
        let mut grid = self.token_grid();
        let mut dim = self.stage_channels[0];
        for (s, (&width, (&blocks, &heads))) in self
            .stage_channels
            .iter()
            .zip(self.stage_blocks.iter().zip(&self.stage_heads))
            .enumerate()
        {
            for b in 0..blocks {
                let transition = s > 0 && b == 0;
                let q_pool = if transition && grid.spatially_poolable() {
                    ops::TokenPool::new(grid)
                } else {
                    ops::TokenPool::identity(grid)
                };
                let kv_pool = if grid.spatially_poolable() {
                    ops::TokenPool::new(grid)
                } else {
                    ops::TokenPool::identity(grid)
                };
                let out_grid = q_pool.output;
                specs.push(BlockSpec {
                    stage: s,
                    dim_in: dim,
                    dim_out: width,
                    heads,
                    mlp_hidden: width * self.mlp_ratio,
                    q_pool,
                    kv_pool,
                });
                dim = width;
                grid = out_grid;
            }
        }
        specs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct BlockParams {
    pub norm1_w: usize,
    pub norm1_b: usize,
    pub qkv_w: usize,
    pub qkv_b: usize,
    pub proj_w: usize,
    pub proj_b: usize,
    pub skip: Option<(usize, usize)>,
    pub norm2_w: usize,
    pub norm2_b: usize,
    pub fc1_w: usize,
    pub fc1_b: usize,
    pub fc2_w: usize,
    pub fc2_b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct HeadParams {
    pub fc1_w: usize,
    pub fc1_b: usize,
    pub fc2_w: usize,
    pub fc2_b: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub cube_w: usize,
    pub cube_b: usize,
    pub cls: usize,
    pub pos_time: usize,
    pub pos_space: usize,
    pub blocks: Vec<BlockParams>,
    pub norm_w: usize,
    pub norm_b: usize,
    pub head_v: HeadParams,
    pub head_t: HeadParams,
    pub pretext: Option<(usize, usize)>,
}

/// Parameter names and shapes for a configuration, all zero.
fn build_layout<S: Scalar>(cfg: &ModelConfig, specs: &[BlockSpec]) -> (ParamSet<S>, Layout) {
    let mut p = ParamSet::new();
    let c0 = cfg.stage_channels[0];
    let grid = cfg.token_grid();
    let cube_w = p.add("cube.weight", &[cfg.patch_dim(), c0]);
    let cube_b = p.add("cube.bias", &[c0]);
    let cls = p.add("cls", &[c0]);
    let pos_time = p.add("pos.time", &[grid.t, c0]);
    let pos_space = p.add("pos.space", &[grid.h * grid.w, c0]);
    let mut blocks = Vec::with_capacity(specs.len());
    for (i, b) in specs.iter().enumerate() {
        let n = |s: &str| format!("blocks.{i}.{s}");
        let norm1_w = p.add(n("norm1.weight"), &[b.dim_in]);
        let norm1_b = p.add(n("norm1.bias"), &[b.dim_in]);
        let qkv_w = p.add(n("attn.qkv.weight"), &[b.dim_in, 3 * b.dim_out]);
        let qkv_b = p.add(n("attn.qkv.bias"), &[3 * b.dim_out]);
        let proj_w = p.add(n("attn.proj.weight"), &[b.dim_out, b.dim_out]);
        let proj_b = p.add(n("attn.proj.bias"), &[b.dim_out]);
        let skip = (b.dim_in != b.dim_out).then(|| {
            (
                p.add(n("skip.weight"), &[b.dim_in, b.dim_out]),
                p.add(n("skip.bias"), &[b.dim_out]),
            )
        });
        let norm2_w = p.add(n("norm2.weight"), &[b.dim_out]);
        let norm2_b = p.add(n("norm2.bias"), &[b.dim_out]);
        let fc1_w = p.add(n("mlp.fc1.weight"), &[b.dim_out, b.mlp_hidden]);
        let fc1_b = p.add(n("mlp.fc1.bias"), &[b.mlp_hidden]);
        let fc2_w = p.add(n("mlp.fc2.weight"), &[b.mlp_hidden, b.dim_out]);
        let fc2_b = p.add(n("mlp.fc2.bias"), &[b.dim_out]);
        blocks.push(BlockParams {
            norm1_w,
            norm1_b,
            qkv_w,
            qkv_b,
            proj_w,
            proj_b,
            skip,
            norm2_w,
            norm2_b,
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
        });
    }
    let c = cfg.repr_dim();
    let norm_w = p.add("norm.weight", &[c]);
    let norm_b = p.add("norm.bias", &[c]);
    let mut head = |prefix: &str| HeadParams {
        fc1_w: p.add(format!("{prefix}.fc1.weight"), &[c, cfg.head_hidden]),
        fc1_b: p.add(format!("{prefix}.fc1.bias"), &[cfg.head_hidden]),
        fc2_w: p.add(format!("{prefix}.fc2.weight"), &[cfg.head_hidden, cfg.head_out]),
        fc2_b: p.add(format!("{prefix}.fc2.bias"), &[cfg.head_out]),
    };
    let (head_v, head_t) = match cfg.heads_mode {
        HeadsMode::Separate => (head("head_v"), head("head_t")),
        HeadsMode::Shared => {
            let h = head("head");
            (h, h)
        }
    };
    let pretext = cfg
        .pretext_head
        .then(|| (p.add("pretext.weight", &[c]), p.add("pretext.bias", &[1])));
    (
        p,
        Layout {
            cube_w,
            cube_b,
            cls,
            pos_time,
            pos_space,
            blocks,
            norm_w,
            norm_b,
            head_v,
            head_t,
            pretext,
        },
    )
}

/// True for tensors exempt from weight decay.
pub fn is_no_decay(name: &str) -> bool {
    name.ends_with(".bias") || name.contains("norm") || name == "cls" || name.starts_with("pos.")
}

/// Parameters of the encoder and both heads.
#[derive(Debug)]
pub struct Encoder<S: Scalar> {
    cfg: ModelConfig,
    specs: Vec<BlockSpec>,
    layout: Layout,
    params: ParamSet<S>,
    forward_calls: AtomicU64,
}

impl<S: Scalar> Clone for Encoder<S> {
    fn clone(&self) -> Self {
        Self {
            cfg: self.cfg.clone(),
            specs: self.specs.clone(),
            layout: self.layout.clone(),
            params: self.params.clone(),
            forward_calls: AtomicU64::new(self.forward_calls.load(Ordering::Relaxed)),
        }
    }
}

impl<S: Scalar> PartialEq for Encoder<S> {
    fn eq(&self, other: &Self) -> bool {
        self.cfg == other.cfg && self.params == other.params
    }
}

impl<S: Scalar> Encoder<S> {
    /// Truncated-normal weights with sigma `1 / sqrt(fan_in)`; positional
    /// embeddings and the CLS token at sigma 0.02; zero biases, unit
    /// LayerNorm gains.
    ///
    /// A zero CLS token would sit where the first LayerNorm's Jacobian is
    /// `1 / sqrt(eps)`, which makes early updates erratic. A flat 0.02 for
    /// the weights leaves layers this narrow close to linear.
    pub fn init(cfg: ModelConfig, rng: &mut Rng) -> Self {
        let specs = cfg.block_specs();
        let (mut params, layout) = build_layout::<S>(&cfg, &specs);
        for i in 0..params.len() {
            let name = params.name(i).to_string();
            let fill_one = name.contains("norm") && name.ends_with(".weight");
            let sigma = if fill_one {
                None
            } else if name.ends_with(".weight") {
                // stored [fan_in, fan_out]
                Some(1.0 / (params.get(i).shape[0] as f64).sqrt())
            } else if name.starts_with("pos.") || name == "cls" {
                Some(0.02)
            } else {
                None
            };
            for v in params.data_mut(i) {
                *v = match sigma {
                    _ if fill_one => S::one(),
                    Some(s) => S::of(rng.truncated_normal(s)),
                    None => S::zero(),
                };
            }
        }
        Self {
            cfg,
            specs,
            layout,
            params,
            forward_calls: AtomicU64::new(0),
        }
    }

    /// Wraps existing parameters after checking names and shapes.
    pub fn from_params(cfg: ModelConfig, params: ParamSet<S>) -> Result<Self> {
        let specs = cfg.block_specs();
        let (expected, layout) = build_layout::<S>(&cfg, &specs);
        expected.check_same_layout(&params)?;
        Ok(Self {
            cfg,
            specs,
            layout,
            params,
            forward_calls: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<S> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamSet<S> {
        self.params
    }

    pub fn block_specs(&self) -> &[BlockSpec] {
        &self.specs
    }

    pub fn zero_grads(&self) -> ParamSet<S> {
        self.params.zeros_like()
    }

    pub fn n_parameters(&self) -> usize {
        self.params.n_elements()
    }

    /// Backbone forward passes run so far.
    pub fn forward_calls(&self) -> u64 {
        self.forward_calls.load(Ordering::Relaxed)
    }

    /// Indices of the tensors owned by one head.
    pub fn head_param_indices(&self, kind: HeadKind) -> Vec<usize> {
        let h = self.head_params(kind);
        vec![h.fc1_w, h.fc1_b, h.fc2_w, h.fc2_b]
    }

    /// Indices of the backbone tensors (everything before the heads).
    pub fn backbone_param_indices(&self) -> Vec<usize> {
        (0..=self.layout.norm_b).collect()
    }

    pub(crate) fn head_params(&self, kind: HeadKind) -> HeadParams {
        match kind {
            HeadKind::Visual => self.layout.head_v,
            HeadKind::Temporal => self.layout.head_t,
        }
    }

    /// Forward through the backbone and one head, no caches.
    pub fn embed(&self, kind: HeadKind, clip: &crate::video::VideoTensor) -> Result<Vec<S>> {
        let f = self.forward(clip)?;
        Ok(self.head_forward(kind, &f.repr)?.0)
    }
}

pub type EncoderF32 = Encoder<f32>;
pub type EncoderF64 = Encoder<f64>;

#[cfg(test)]
mod tests;
