//! Cube projection and pooled-attention blocks.

use std::sync::atomic::Ordering;

use super::ops::{
    layer_norm, layer_norm_backward, linear, linear_backward, gelu, gelu_grad, softmax_rows,
    Grid, LayerNormCache, TokenPool,
};
use super::{BlockParams, Encoder, ParamSet};
use crate::config::PoolingMode;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::video::VideoTensor;

/// Static shape of one transformer block.
#[derive(Debug, Clone)]
pub struct BlockSpec {
    pub stage: usize,
    pub dim_in: usize,
    pub dim_out: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    /// Pools queries and the residual path (stage transitions only).
    pub q_pool: TokenPool,
    /// Pools keys and values.
    pub kv_pool: TokenPool,
}

impl BlockSpec {
    pub fn rows_in(&self) -> usize {
        self.q_pool.input.rows()
    }

    pub fn rows_out(&self) -> usize {
        self.q_pool.output.rows()
    }

    pub fn rows_kv(&self) -> usize {
        self.kv_pool.output.rows()
    }
}

/// Cube-projection output `[T', H', W', C0]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid<S> {
    pub grid: Grid,
    pub channels: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> TokenGrid<S> {
    /// Tokens of temporal slice `t`.
    pub fn time_slice(&self, t: usize) -> &[S] {
        let n = self.grid.h * self.grid.w * self.channels;
        &self.data[t * n..(t + 1) * n]
    }
}

pub(crate) struct BlockCache<S> {
    ln1: LayerNormCache<S>,
    xn1: Vec<S>,
    q: Vec<S>,
    k: Vec<S>,
    v: Vec<S>,
    attn: Vec<S>,
    o: Vec<S>,
    ln2: LayerNormCache<S>,
    xn2: Vec<S>,
    pre_act: Vec<S>,
    act: Vec<S>,
}

/// Activations retained for the backward pass.
pub struct ForwardCache<S> {
    patches: Vec<S>,
    blocks: Vec<BlockCache<S>>,
    final_ln: LayerNormCache<S>,
}

pub struct Forward<S> {
    /// Clip representation (CLS token or token mean).
    pub repr: Vec<S>,
    /// Final normalized tokens, CLS first.
    pub tokens: Vec<S>,
    pub grid: Grid,
    pub cache: Option<ForwardCache<S>>,
}

fn check_finite<S: Scalar>(x: &[S], stage: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            stage: stage.to_string(),
        })
    }
}

impl<S: Scalar> Encoder<S> {
    fn check_clip(&self, clip: &VideoTensor) -> Result<()> {
        let c = &self.cfg;
        let expected = (c.frames, c.size, c.size, c.channels);
        let actual = (clip.frames(), clip.height(), clip.width(), clip.channels());
        if expected != actual {
            return Err(Error::shape("encoder input [T, H, W, Ch]", format!("{expected:?}"), format!("{actual:?}")));
        }
        if c.frames % c.temporal_stride != 0 {
            return Err(Error::shape(
                "encoder input frames",
                format!("multiple of {}", c.temporal_stride),
                c.frames,
            ));
        }
        Ok(())
    }

    /// Cube contents for every token, `[tokens, patch_dim]`; zero where padded.
    fn patches(&self, clip: &VideoTensor) -> Vec<S> {
        let c = &self.cfg;
        let grid = c.token_grid();
        let (kt, p) = (c.temporal_kernel, c.spatial_patch);
        let (pt, ps) = (c.temporal_padding() as isize, c.spatial_padding() as isize);
        let ch = c.channels;
        let dim = c.patch_dim();
        let mut out = vec![S::zero(); grid.tokens() * dim];
        for t in 0..grid.t {
            for i in 0..grid.h {
                for j in 0..grid.w {
                    let row = &mut out[((t * grid.h + i) * grid.w + j) * dim..][..dim];
                    for dt in 0..kt {
                        let st = (t * c.temporal_stride) as isize + dt as isize - pt;
                        if st < 0 || st >= c.frames as isize {
                            continue;
                        }
                        for dy in 0..p {
                            let sy = (i * c.spatial_stride) as isize + dy as isize - ps;
                            if sy < 0 || sy >= c.size as isize {
                                continue;
                            }
                            for dx in 0..p {
                                let sx = (j * c.spatial_stride) as isize + dx as isize - ps;
                                if sx < 0 || sx >= c.size as isize {
                                    continue;
                                }
                                let base = ((dt * p + dy) * p + dx) * ch;
                                for k in 0..ch {
                                    row[base + k] =
                                        S::of(clip.at(st as usize, sy as usize, sx as usize, k) as f64);
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// 3-D convolution tokenizer: kernel `k_t x p x p`, stride `2 x s x s`.
    pub fn cube_project(&self, clip: &VideoTensor) -> Result<TokenGrid<S>> {
        self.check_clip(clip)?;
        let grid = self.cfg.token_grid();
        let c0 = self.cfg.stage_channels[0];
        let p = &self.params;
        let data = linear(
            &self.patches(clip),
            p.data(self.layout.cube_w),
            p.data(self.layout.cube_b),
            grid.tokens(),
            self.cfg.patch_dim(),
            c0,
        );
        Ok(TokenGrid {
            grid,
            channels: c0,
            data,
        })
    }

    pub fn forward(&self, clip: &VideoTensor) -> Result<Forward<S>> {
        self.run(clip, false)
    }

    /// Forward pass that keeps activations for [`Encoder::backward`].
    pub fn forward_train(&self, clip: &VideoTensor) -> Result<Forward<S>> {
        self.run(clip, true)
    }

    fn run(&self, clip: &VideoTensor, keep: bool) -> Result<Forward<S>> {
        self.check_clip(clip)?;
        self.forward_calls.fetch_add(1, Ordering::Relaxed);
        let p = &self.params;
        let l = &self.layout;
        let grid = self.cfg.token_grid();
        let c0 = self.cfg.stage_channels[0];
        let patches = self.patches(clip);
        let tok = linear(
            &patches,
            p.data(l.cube_w),
            p.data(l.cube_b),
            grid.tokens(),
            self.cfg.patch_dim(),
            c0,
        );
        check_finite(&tok, "cube projection")?;

        let mut x = Vec::with_capacity(grid.rows() * c0);
        x.extend_from_slice(p.data(l.cls));
        let pos_t = p.data(l.pos_time);
        let pos_s = p.data(l.pos_space);
        let hw = grid.h * grid.w;
        for t in 0..grid.t {
            for s in 0..hw {
                let r = t * hw + s;
                for c in 0..c0 {
                    x.push(tok[r * c0 + c] + pos_t[t * c0 + c] + pos_s[s * c0 + c]);
                }
            }
        }

        let mut caches = Vec::new();
        let mut cur_grid = grid;
        for (i, (spec, bp)) in self.specs.iter().zip(&l.blocks).enumerate() {
            let (y, cache) = self.block_forward(spec, bp, &x);
            if keep {
                caches.push(cache);
            }
            x = y;
            cur_grid = spec.q_pool.output;
            let last_of_stage = self.specs.get(i + 1).is_none_or(|n| n.stage != spec.stage);
            if last_of_stage {
                check_finite(&x, &format!("stage {}", spec.stage + 1))?;
            }
        }

        let d = self.cfg.repr_dim();
        let rows = cur_grid.rows();
        let (tokens, final_ln) = layer_norm(&x, p.data(l.norm_w), p.data(l.norm_b), rows, d);
        let repr = match self.cfg.pooling {
            PoolingMode::Cls => tokens[..d].to_vec(),
            PoolingMode::Avg => {
                let inv = S::one() / S::of((rows - 1) as f64);
                let mut r = vec![S::zero(); d];
                for row in tokens[d..].chunks_exact(d) {
                    for (a, b) in r.iter_mut().zip(row) {
                        *a += *b;
                    }
                }
                r.iter_mut().for_each(|v| *v *= inv);
                r
            }
        };
        let cache = keep.then_some(ForwardCache {
            patches,
            blocks: caches,
            final_ln,
        });
        Ok(Forward {
            repr,
            tokens,
            grid: cur_grid,
            cache,
        })
    }

    fn block_forward(&self, spec: &BlockSpec, bp: &BlockParams, x: &[S]) -> (Vec<S>, BlockCache<S>) {
        let p = &self.params;
        let (din, d) = (spec.dim_in, spec.dim_out);
        let (n_in, n_out, n_kv) = (spec.rows_in(), spec.rows_out(), spec.rows_kv());
        let heads = spec.heads;
        let dh = d / heads;
        let scale = S::one() / S::of(dh as f64).sqrt();

        let (xn1, ln1) = layer_norm(x, p.data(bp.norm1_w), p.data(bp.norm1_b), n_in, din);
        let qkv = linear(&xn1, p.data(bp.qkv_w), p.data(bp.qkv_b), n_in, din, 3 * d);
        let q = spec.q_pool.forward(&qkv, 3 * d, 0, d);
        let k = spec.kv_pool.forward(&qkv, 3 * d, d, d);
        let v = spec.kv_pool.forward(&qkv, 3 * d, 2 * d, d);

        let mut attn = vec![S::zero(); heads * n_out * n_kv];
        let mut o = vec![S::zero(); n_out * d];
        for h in 0..heads {
            let a = &mut attn[h * n_out * n_kv..(h + 1) * n_out * n_kv];
            S::gemm(n_out, dh, n_kv, scale, &q[h * dh..], d, 1, &k[h * dh..], 1, d, S::zero(), a, n_kv, 1);
            softmax_rows(a, n_out, n_kv);
            S::gemm(n_out, n_kv, dh, S::one(), a, n_kv, 1, &v[h * dh..], d, 1, S::zero(), &mut o[h * dh..], d, 1);
        }
        let y = linear(&o, p.data(bp.proj_w), p.data(bp.proj_b), n_out, d, d);

        let mut x1 = match bp.skip {
            Some((w, b)) => {
                let s = linear(&xn1, p.data(w), p.data(b), n_in, din, d);
                spec.q_pool.forward(&s, d, 0, d)
            }
            None => spec.q_pool.forward(x, d, 0, d),
        };
        for (a, b) in x1.iter_mut().zip(&y) {
            *a += *b;
        }

        let hidden = spec.mlp_hidden;
        let (xn2, ln2) = layer_norm(&x1, p.data(bp.norm2_w), p.data(bp.norm2_b), n_out, d);
        let pre_act = linear(&xn2, p.data(bp.fc1_w), p.data(bp.fc1_b), n_out, d, hidden);
        let act: Vec<S> = pre_act.iter().map(|&v| gelu(v)).collect();
        let m = linear(&act, p.data(bp.fc2_w), p.data(bp.fc2_b), n_out, hidden, d);
        for (a, b) in x1.iter_mut().zip(&m) {
            *a += *b;
        }
        (
            x1,
            BlockCache {
                ln1,
                xn1,
                q,
                k,
                v,
                attn,
                o,
                ln2,
                xn2,
                pre_act,
                act,
            },
        )
    }

    /// Accumulates parameter gradients of a scalar loss given `d loss / d repr`.
    pub fn backward(&self, fwd: &Forward<S>, d_repr: &[S], grads: &mut ParamSet<S>) {
        let cache = fwd
            .cache
            .as_ref()
            .expect("backward needs a forward_train result");
        let p = &self.params;
        let l = &self.layout;
        let d = self.cfg.repr_dim();
        let rows = fwd.grid.rows();

        let mut d_tokens = vec![S::zero(); rows * d];
        match self.cfg.pooling {
            PoolingMode::Cls => d_tokens[..d].copy_from_slice(d_repr),
            PoolingMode::Avg => {
                let inv = S::one() / S::of((rows - 1) as f64);
                for row in d_tokens[d..].chunks_exact_mut(d) {
                    for (a, b) in row.iter_mut().zip(d_repr) {
                        *a = *b * inv;
                    }
                }
            }
        }
        let (gw, gb) = two_mut(grads, l.norm_w, l.norm_b);
        let mut dx = layer_norm_backward(&cache.final_ln, p.data(l.norm_w), &d_tokens, gw, gb, rows, d);

        for ((spec, bp), bc) in self.specs.iter().zip(&l.blocks).zip(&cache.blocks).rev() {
            dx = self.block_backward(spec, bp, bc, &dx, grads);
        }

        let grid = self.cfg.token_grid();
        let c0 = self.cfg.stage_channels[0];
        let hw = grid.h * grid.w;
        {
            let g = grads.data_mut(l.cls);
            for (a, b) in g.iter_mut().zip(&dx[..c0]) {
                *a += *b;
            }
        }
        let d_tok = &dx[c0..];
        {
            let g = grads.data_mut(l.pos_time);
            for t in 0..grid.t {
                for s in 0..hw {
                    let r = t * hw + s;
                    for c in 0..c0 {
                        g[t * c0 + c] += d_tok[r * c0 + c];
                    }
                }
            }
        }
        {
            let g = grads.data_mut(l.pos_space);
            for t in 0..grid.t {
                for s in 0..hw {
                    let r = t * hw + s;
                    for c in 0..c0 {
                        g[s * c0 + c] += d_tok[r * c0 + c];
                    }
                }
            }
        }
        let (gw, gb) = two_mut(grads, l.cube_w, l.cube_b);
        linear_backward(
            &cache.patches,
            p.data(l.cube_w),
            d_tok,
            gw,
            gb,
            grid.tokens(),
            self.cfg.patch_dim(),
            c0,
            false,
        );
    }

    fn block_backward(
        &self,
        spec: &BlockSpec,
        bp: &BlockParams,
        c: &BlockCache<S>,
        dy_out: &[S],
        grads: &mut ParamSet<S>,
    ) -> Vec<S> {
        let p = &self.params;
        let (din, d) = (spec.dim_in, spec.dim_out);
        let (n_in, n_out, n_kv) = (spec.rows_in(), spec.rows_out(), spec.rows_kv());
        let heads = spec.heads;
        let dh = d / heads;
        let hidden = spec.mlp_hidden;
        let scale = S::one() / S::of(dh as f64).sqrt();

        // MLP branch
        let mut dx1 = dy_out.to_vec();
        let (gw, gb) = two_mut(grads, bp.fc2_w, bp.fc2_b);
        let mut d_act = linear_backward(&c.act, p.data(bp.fc2_w), dy_out, gw, gb, n_out, hidden, d, true)
            .expect("dx requested");
        for (g, &x) in d_act.iter_mut().zip(&c.pre_act) {
            *g *= gelu_grad(x);
        }
        let (gw, gb) = two_mut(grads, bp.fc1_w, bp.fc1_b);
        let d_xn2 = linear_backward(&c.xn2, p.data(bp.fc1_w), &d_act, gw, gb, n_out, d, hidden, true)
            .expect("dx requested");
        let (gw, gb) = two_mut(grads, bp.norm2_w, bp.norm2_b);
        let d_ln2 = layer_norm_backward(&c.ln2, p.data(bp.norm2_w), &d_xn2, gw, gb, n_out, d);
        for (a, b) in dx1.iter_mut().zip(&d_ln2) {
            *a += *b;
        }

        // attention branch
        let (gw, gb) = two_mut(grads, bp.proj_w, bp.proj_b);
        let d_o = linear_backward(&c.o, p.data(bp.proj_w), &dx1, gw, gb, n_out, d, d, true)
            .expect("dx requested");
        let mut dq = vec![S::zero(); n_out * d];
        let mut dk = vec![S::zero(); n_kv * d];
        let mut dv = vec![S::zero(); n_kv * d];
        let mut d_a = vec![S::zero(); n_out * n_kv];
        for h in 0..heads {
            let a = &c.attn[h * n_out * n_kv..(h + 1) * n_out * n_kv];
            S::gemm(n_out, dh, n_kv, S::one(), &d_o[h * dh..], d, 1, &c.v[h * dh..], 1, d, S::zero(), &mut d_a, n_kv, 1);
            S::gemm(n_kv, n_out, dh, S::one(), a, 1, n_kv, &d_o[h * dh..], d, 1, S::zero(), &mut dv[h * dh..], d, 1);
            for r in 0..n_out {
                let ar = &a[r * n_kv..(r + 1) * n_kv];
                let gr = &mut d_a[r * n_kv..(r + 1) * n_kv];
                let dot: S = ar.iter().zip(gr.iter()).map(|(x, y)| *x * *y).sum();
                for (g, &x) in gr.iter_mut().zip(ar) {
                    *g = x * (*g - dot) * scale;
                }
            }
            S::gemm(n_out, n_kv, dh, S::one(), &d_a, n_kv, 1, &c.k[h * dh..], d, 1, S::zero(), &mut dq[h * dh..], d, 1);
            S::gemm(n_kv, n_out, dh, S::one(), &d_a, 1, n_kv, &c.q[h * dh..], d, 1, S::zero(), &mut dk[h * dh..], d, 1);
        }
        let mut d_qkv = vec![S::zero(); n_in * 3 * d];
        spec.q_pool.backward(&dq, &mut d_qkv, 3 * d, 0, d);
        spec.kv_pool.backward(&dk, &mut d_qkv, 3 * d, d, d);
        spec.kv_pool.backward(&dv, &mut d_qkv, 3 * d, 2 * d, d);
        let (gw, gb) = two_mut(grads, bp.qkv_w, bp.qkv_b);
        let mut d_xn1 = linear_backward(&c.xn1, p.data(bp.qkv_w), &d_qkv, gw, gb, n_in, din, 3 * d, true)
            .expect("dx requested");

        // residual path
        let mut dx = vec![S::zero(); n_in * din];
        match bp.skip {
            Some((w, b)) => {
                let mut d_s = vec![S::zero(); n_in * d];
                spec.q_pool.backward(&dx1, &mut d_s, d, 0, d);
                let (gw, gb) = two_mut(grads, w, b);
                let d_skip = linear_backward(&c.xn1, p.data(w), &d_s, gw, gb, n_in, din, d, true)
                    .expect("dx requested");
                for (a, b) in d_xn1.iter_mut().zip(&d_skip) {
                    *a += *b;
                }
            }
            None => spec.q_pool.backward(&dx1, &mut dx, d, 0, d),
        }
        let (gw, gb) = two_mut(grads, bp.norm1_w, bp.norm1_b);
        let d_ln1 = layer_norm_backward(&c.ln1, p.data(bp.norm1_w), &d_xn1, gw, gb, n_in, din);
        for (a, b) in dx.iter_mut().zip(&d_ln1) {
            *a += *b;
        }
        dx
    }
}

/// Mutable views of two distinct tensors.
pub(crate) fn two_mut<S: Scalar>(p: &mut ParamSet<S>, a: usize, b: usize) -> (&mut [S], &mut [S]) {
    assert_ne!(a, b);
    let (lo, hi, swap) = if a < b { (a, b, false) } else { (b, a, true) };
    let mut it = p.tensors_mut().enumerate().filter(|(i, _)| *i == lo || *i == hi);
    let first = &mut it.next().expect("index in range").1.data;
    let second = &mut it.next().expect("index in range").1.data;
    if swap {
        (second.as_mut_slice(), first.as_mut_slice())
    } else {
        (first.as_mut_slice(), second.as_mut_slice())
    }
}
