//! Projection heads: linear, ReLU, linear, L2 normalization.

use super::backbone::two_mut;
use super::ops::{linear, linear_backward};
use super::{Encoder, ParamSet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadKind {
    /// Feeds the visual (cross-clip) objective.
    Visual,
    /// Feeds the shuffled temporal objective.
    Temporal,
}

pub struct HeadCache<S> {
    input: Vec<S>,
    pre_act: Vec<S>,
    act: Vec<S>,
    norm: S,
    z: Vec<S>,
}

pub struct PretextCache<S> {
    input: Vec<S>,
    pub probability: S,
}

impl<S: Scalar> Encoder<S> {
    /// Unit-norm embedding of a representation.
    pub fn head_forward(&self, kind: HeadKind, repr: &[S]) -> Result<(Vec<S>, HeadCache<S>)> {
        let c = self.cfg.repr_dim();
        if repr.len() != c {
            return Err(Error::shape("head input", c, repr.len()));
        }
        let hp = self.head_params(kind);
        let p = &self.params;
        let hidden = self.cfg.head_hidden;
        let out = self.cfg.head_out;
        let pre_act = linear(repr, p.data(hp.fc1_w), p.data(hp.fc1_b), 1, c, hidden);
        let act: Vec<S> = pre_act.iter().map(|&v| v.max(S::zero())).collect();
        let u = linear(&act, p.data(hp.fc2_w), p.data(hp.fc2_b), 1, hidden, out);
        let norm = u.iter().map(|&v| v * v).sum::<S>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite {
                stage: "projection head".into(),
            });
        }
        if norm <= S::epsilon() * S::epsilon() {
            return Err(Error::DegenerateEmbedding);
        }
        let z: Vec<S> = u.iter().map(|&v| v / norm).collect();
        Ok((
            z.clone(),
            HeadCache {
                input: repr.to_vec(),
                pre_act,
                act,
                norm,
                z,
            },
        ))
    }

    /// Accumulates head gradients and returns `d loss / d repr`.
    pub fn head_backward(
        &self,
        kind: HeadKind,
        cache: &HeadCache<S>,
        dz: &[S],
        grads: &mut ParamSet<S>,
    ) -> Vec<S> {
        let hp = self.head_params(kind);
        let p = &self.params;
        let c = self.cfg.repr_dim();
        let hidden = self.cfg.head_hidden;
        let out = self.cfg.head_out;
        let dot: S = cache.z.iter().zip(dz).map(|(a, b)| *a * *b).sum();
        let du: Vec<S> = cache
            .z
            .iter()
            .zip(dz)
            .map(|(&z, &g)| (g - z * dot) / cache.norm)
            .collect();
        let (gw, gb) = two_mut(grads, hp.fc2_w, hp.fc2_b);
        let mut d_act = linear_backward(&cache.act, p.data(hp.fc2_w), &du, gw, gb, 1, hidden, out, true)
            .expect("dx requested");
        for (g, &x) in d_act.iter_mut().zip(&cache.pre_act) {
            if x <= S::zero() {
                *g = S::zero();
            }
        }
        let (gw, gb) = two_mut(grads, hp.fc1_w, hp.fc1_b);
        linear_backward(&cache.input, p.data(hp.fc1_w), &d_act, gw, gb, 1, c, hidden, true)
            .expect("dx requested")
    }

    /// Probability that the clip behind `repr` was shuffled.
    pub fn pretext_forward(&self, repr: &[S]) -> Result<PretextCache<S>> {
        let (w, b) = self
            .layout
            .pretext
            .ok_or_else(|| Error::InvalidArgument("model has no pretext head".into()))?;
        let logit: S = repr.iter().zip(self.params.data(w)).map(|(a, b)| *a * *b).sum::<S>()
            + self.params.data(b)[0];
        let probability = S::one() / (S::one() + (-logit).exp());
        Ok(PretextCache {
            input: repr.to_vec(),
            probability,
        })
    }

    /// Binary cross-entropy of the pretext head and its backward pass.
    /// Accumulates `scale * d loss / d theta` and returns
    /// `(loss, scale * d loss / d repr)`.
    pub fn pretext_loss_backward(
        &self,
        cache: &PretextCache<S>,
        shuffled: bool,
        scale: S,
        grads: &mut ParamSet<S>,
    ) -> (S, Vec<S>) {
        let (w, b) = self.layout.pretext.expect("pretext head present");
        let target = if shuffled { S::one() } else { S::zero() };
        let pr = cache.probability;
        let tiny = S::of(1e-12);
        let loss = -(target * (pr.max(tiny)).ln() + (S::one() - target) * ((S::one() - pr).max(tiny)).ln());
        let dlogit = (pr - target) * scale;
        {
            let gw = grads.data_mut(w);
            for (g, x) in gw.iter_mut().zip(&cache.input) {
                *g += dlogit * *x;
            }
        }
        grads.data_mut(b)[0] += dlogit;
        let d_repr = self.params.data(w).iter().map(|&x| x * dlogit).collect();
        (loss, d_repr)
    }
}
