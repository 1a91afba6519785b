//! Contrastive objectives: InfoNCE, the shuffled temporal loss, the visual
//! cross-clip loss and their weighted sum.

use crate::augment::{apply_policy, group_shuffle, AugmentPolicy, GroupPermutation};
use crate::config::{Config, Objective, WeightedTerm};
use crate::error::{Error, Result};
use crate::model::{Encoder, HeadKind, ParamSet};
use crate::momentum::Negatives;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::video::VideoTensor;

/// Anchor, positive and `N` negatives, all unit-norm rows of width `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch<S> {
    pub anchor: Vec<S>,
    pub positive: Vec<S>,
    /// Row-major `[N, dim]`.
    pub negatives: Vec<S>,
}

impl<S: Scalar> ContrastiveBatch<S> {
    pub fn new(anchor: Vec<S>, positive: Vec<S>, negatives: Vec<S>) -> Result<Self> {
        let d = anchor.len();
        if positive.len() != d {
            return Err(Error::shape("positive embedding", d, positive.len()));
        }
        if d == 0 || negatives.len() % d != 0 {
            return Err(Error::shape("negative matrix width", d, negatives.len()));
        }
        Ok(Self {
            anchor,
            positive,
            negatives,
        })
    }

    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    pub fn n_negatives(&self) -> usize {
        self.negatives.len() / self.dim().max(1)
    }
}

/// Loss value and its gradients with respect to every embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoNceGrad<S> {
    pub loss: S,
    pub d_anchor: Vec<S>,
    pub d_positive: Vec<S>,
    pub d_negatives: Vec<S>,
    /// `z_a . z_p / tau`.
    pub positive_logit: S,
    /// Mean of `z_a . z_n / tau`.
    pub negative_logit_mean: S,
}

fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

/// `-log softmax(logits)[0]` with the positive logit first, max-shifted.
pub fn info_nce_logits<S: Scalar>(positive: S, negatives: &[S]) -> Result<S> {
    if negatives.is_empty() {
        return Err(Error::NoNegatives);
    }
    let max = negatives.iter().fold(positive, |m, &v| m.max(v));
    let sum: S = std::iter::once(positive)
        .chain(negatives.iter().copied())
        .map(|l| (l - max).exp())
        .sum();
    Ok(max + sum.ln() - positive)
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("temperature must be > 0, got {tau}")))
    }
}

pub fn info_nce<S: Scalar>(batch: &ContrastiveBatch<S>, tau: f64) -> Result<S> {
    check_tau(tau)?;
    let inv = S::of(1.0 / tau);
    let pos = dot(&batch.anchor, &batch.positive) * inv;
    let negs: Vec<S> = batch
        .negatives
        .chunks(batch.dim())
        .map(|n| dot(&batch.anchor, n) * inv)
        .collect();
    info_nce_logits(pos, &negs)
}

/// InfoNCE with gradients for anchor, positive and negatives.
pub fn info_nce_grad<S: Scalar>(batch: &ContrastiveBatch<S>, tau: f64) -> Result<InfoNceGrad<S>> {
    check_tau(tau)?;
    let d = batch.dim();
    let n = batch.n_negatives();
    if n == 0 {
        return Err(Error::NoNegatives);
    }
    let inv = S::of(1.0 / tau);
    let mut logits = Vec::with_capacity(n + 1);
    logits.push(dot(&batch.anchor, &batch.positive) * inv);
    logits.extend(batch.negatives.chunks(d).map(|r| dot(&batch.anchor, r) * inv));
    let max = logits.iter().fold(S::neg_infinity(), |m, &v| m.max(v));
    let exps: Vec<S> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: S = exps.iter().copied().sum();
    let loss = max + sum.ln() - logits[0];
    // d loss / d logit_j = softmax_j - [j == 0]
    let mut g: Vec<S> = exps.iter().map(|&e| e / sum).collect();
    g[0] -= S::one();

    let mut d_anchor: Vec<S> = batch.positive.iter().map(|&p| g[0] * p * inv).collect();
    for (j, row) in batch.negatives.chunks(d).enumerate() {
        let w = g[j + 1] * inv;
        for (da, &x) in d_anchor.iter_mut().zip(row) {
            *da += w * x;
        }
    }
    let d_positive = batch.anchor.iter().map(|&a| g[0] * inv * a).collect();
    let mut d_negatives = Vec::with_capacity(n * d);
    for gj in &g[1..] {
        d_negatives.extend(batch.anchor.iter().map(|&a| *gj * inv * a));
    }
    let neg_mean = logits[1..].iter().copied().sum::<S>() / S::of(n as f64);
    Ok(InfoNceGrad {
        loss,
        d_anchor,
        d_positive,
        d_negatives,
        positive_logit: logits[0],
        negative_logit_mean: neg_mean,
    })
}

pub fn total_loss(lt: f64, lv: f64, lambda_weight: f64) -> f64 {
    lt + lambda_weight * lv
}

/// Which loss terms are active and how they are weighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub temporal: f64,
    pub visual: f64,
    /// Weight of the binary shuffled/ordered term that stands in for the
    /// temporal loss in the pretext baseline.
    pub pretext: f64,
}

impl LossWeights {
    pub fn from_config(cfg: &Config) -> Self {
        let (mut temporal, mut visual) = match cfg.lambda_target {
            WeightedTerm::Visual => (1.0, cfg.lambda_weight),
            WeightedTerm::Temporal => (cfg.lambda_weight, 1.0),
        };
        let mut pretext = 0.0;
        if cfg.objective == Objective::Pretext {
            pretext = temporal;
        }
        if !cfg.objective.uses_temporal() {
            temporal = 0.0;
        }
        if !cfg.objective.uses_visual() {
            visual = 0.0;
        }
        Self {
            temporal,
            visual,
            pretext,
        }
    }
}

/// Clips feeding one contrastive update for one video.
#[derive(Debug, Clone)]
pub struct Views {
    /// `psi1(clip)`; shared by both objectives.
    pub anchor: VideoTensor,
    /// `psi2(clip)`, the temporal positive.
    pub temporal_positive: Option<VideoTensor>,
    /// Group shuffles of the temporal positive.
    pub temporal_negatives: Vec<VideoTensor>,
    /// Augmented second clip of the same video.
    pub visual_positive: Option<VideoTensor>,
}

impl Views {
    /// Independent augmentation draws for every view, taken in a fixed order:
    /// anchor, temporal positive, visual positive.
    pub fn build(
        anchor_clip: &VideoTensor,
        visual_clip: Option<&VideoTensor>,
        perms: &[GroupPermutation],
        policy: &AugmentPolicy,
        rng: &mut Rng,
    ) -> Result<Self> {
        let anchor = apply_policy(anchor_clip, policy, rng)?;
        let (temporal_positive, temporal_negatives) = if perms.is_empty() {
            (None, Vec::new())
        } else {
            let p = apply_policy(anchor_clip, policy, rng)?;
            let negs = perms
                .iter()
                .map(|perm| group_shuffle(&p, perm))
                .collect::<Result<Vec<_>>>()?;
            (Some(p), negs)
        };
        let visual_positive = visual_clip.map(|c| apply_policy(c, policy, rng)).transpose()?;
        Ok(Self {
            anchor,
            temporal_positive,
            temporal_negatives,
            visual_positive,
        })
    }
}

/// Per-video loss values and logit statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossReport {
    pub temporal: Option<f64>,
    pub visual: Option<f64>,
    pub total: f64,
    pub temporal_pos_logit: Option<f64>,
    pub temporal_neg_logit: Option<f64>,
    pub visual_pos_logit: Option<f64>,
    pub visual_neg_logit: Option<f64>,
}

/// Output of [`contrastive_step`].
#[derive(Debug, Clone)]
pub struct StepOutput<S> {
    pub report: LossReport,
    /// Momentum visual embedding of the visual positive, to be enqueued.
    pub key: Option<Vec<S>>,
}

/// Embeds through the momentum encoder; no caches are kept.
fn momentum_embed<S: Scalar>(momentum: &Encoder<S>, kind: HeadKind, clip: &VideoTensor) -> Result<Vec<S>> {
    momentum.embed(kind, clip)
}

/// Loss for one video and accumulation of `scale * d loss / d theta_online`.
///
/// The anchor runs through the online backbone exactly once; its
/// representation feeds both heads. Momentum passes never touch `grads`.
pub fn contrastive_step<S: Scalar>(
    online: &Encoder<S>,
    momentum: &Encoder<S>,
    views: &Views,
    bank: Option<&Negatives<S>>,
    tau: f64,
    weights: LossWeights,
    scale: S,
    grads: &mut ParamSet<S>,
) -> Result<StepOutput<S>> {
    check_tau(tau)?;
    let use_t = weights.temporal != 0.0;
    let use_v = weights.visual != 0.0;
    if !use_t && !use_v {
        return Err(Error::InvalidArgument("both loss terms are disabled".into()));
    }
    let fwd = online.forward_train(&views.anchor)?;
    let mut d_repr = vec![S::zero(); fwd.repr.len()];
    let mut report = LossReport::default();
    let mut key = None;

    if use_t {
        let pos_clip = views
            .temporal_positive
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("temporal objective needs a positive view".into()))?;
        if views.temporal_negatives.is_empty() {
            return Err(Error::NoNegatives);
        }
        let (za, cache) = online.head_forward(HeadKind::Temporal, &fwd.repr)?;
        let zp = momentum_embed(momentum, HeadKind::Temporal, pos_clip)?;
        let mut negs = Vec::with_capacity(views.temporal_negatives.len() * zp.len());
        for clip in &views.temporal_negatives {
            negs.extend(momentum_embed(momentum, HeadKind::Temporal, clip)?);
        }
        let g = info_nce_grad(&ContrastiveBatch::new(za, zp, negs)?, tau)?;
        let w = S::of(weights.temporal) * scale;
        let dz: Vec<S> = g.d_anchor.iter().map(|&v| v * w).collect();
        let dr = online.head_backward(HeadKind::Temporal, &cache, &dz, grads);
        for (a, b) in d_repr.iter_mut().zip(&dr) {
            *a += *b;
        }
        report.temporal = Some(g.loss.to_f64_lossy());
        report.temporal_pos_logit = Some(g.positive_logit.to_f64_lossy());
        report.temporal_neg_logit = Some(g.negative_logit_mean.to_f64_lossy());
    }

    if use_v {
        let pos_clip = views
            .visual_positive
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("visual objective needs a positive view".into()))?;
        let bank = bank.ok_or(Error::EmptyBank)?;
        if bank.is_empty() {
            return Err(Error::EmptyBank);
        }
        let (za, cache) = online.head_forward(HeadKind::Visual, &fwd.repr)?;
        let zp = momentum_embed(momentum, HeadKind::Visual, pos_clip)?;
        let g = info_nce_grad(&ContrastiveBatch::new(za, zp.clone(), bank.data.clone())?, tau)?;
        let w = S::of(weights.visual) * scale;
        let dz: Vec<S> = g.d_anchor.iter().map(|&v| v * w).collect();
        let dr = online.head_backward(HeadKind::Visual, &cache, &dz, grads);
        for (a, b) in d_repr.iter_mut().zip(&dr) {
            *a += *b;
        }
        report.visual = Some(g.loss.to_f64_lossy());
        report.visual_pos_logit = Some(g.positive_logit.to_f64_lossy());
        report.visual_neg_logit = Some(g.negative_logit_mean.to_f64_lossy());
        key = Some(zp);
    }

    online.backward(&fwd, &d_repr, grads);
    report.total = weights.temporal * report.temporal.unwrap_or(0.0) + weights.visual * report.visual.unwrap_or(0.0);
    Ok(StepOutput { report, key })
}

/// Shuffled temporal loss for one clip; accumulates online gradients when
/// `grads` is given.
#[allow(clippy::too_many_arguments)]
pub fn temporal_loss<S: Scalar>(
    online: &Encoder<S>,
    momentum: &Encoder<S>,
    clip: &VideoTensor,
    policy: &AugmentPolicy,
    perms: &[GroupPermutation],
    tau: f64,
    rng: &mut Rng,
    grads: Option<&mut ParamSet<S>>,
) -> Result<(f64, LossReport)> {
    if perms.is_empty() {
        return Err(Error::NoNegatives);
    }
    if perms.iter().any(|p| p.is_identity()) {
        return Err(Error::InvalidArgument("identity permutation is not a negative".into()));
    }
    let views = Views::build(clip, None, perms, policy, rng)?;
    let mut scratch;
    let g = match grads {
        Some(g) => g,
        None => {
            scratch = online.zero_grads();
            &mut scratch
        }
    };
    let weights = LossWeights {
        temporal: 1.0,
        visual: 0.0,
        pretext: 0.0,
    };
    let out = contrastive_step(online, momentum, &views, None, tau, weights, S::one(), g)?;
    Ok((out.report.temporal.unwrap_or(f64::NAN), out.report))
}

/// Visual cross-clip loss against the bank; returns the loss and the
/// momentum key of the positive.
#[allow(clippy::too_many_arguments)]
pub fn visual_loss<S: Scalar>(
    online: &Encoder<S>,
    momentum: &Encoder<S>,
    anchor_clip: &VideoTensor,
    positive_clip: &VideoTensor,
    bank: &Negatives<S>,
    policy: &AugmentPolicy,
    tau: f64,
    rng: &mut Rng,
    grads: Option<&mut ParamSet<S>>,
) -> Result<(f64, Vec<S>)> {
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    let views = Views::build(anchor_clip, Some(positive_clip), &[], policy, rng)?;
    let mut scratch;
    let g = match grads {
        Some(g) => g,
        None => {
            scratch = online.zero_grads();
            &mut scratch
        }
    };
    let weights = LossWeights {
        temporal: 0.0,
        visual: 1.0,
        pretext: 0.0,
    };
    let out = contrastive_step(online, momentum, &views, Some(bank), tau, weights, S::one(), g)?;
    Ok((out.report.visual.unwrap_or(f64::NAN), out.key.expect("visual key")))
}

/// Binary ordered/shuffled classification loss on one clip.
pub fn pretext_step<S: Scalar>(
    online: &Encoder<S>,
    clip: &VideoTensor,
    shuffled: bool,
    scale: S,
    grads: &mut ParamSet<S>,
) -> Result<(f64, bool)> {
    let fwd = online.forward_train(clip)?;
    let cache = online.pretext_forward(&fwd.repr)?;
    let correct = (cache.probability > S::of(0.5)) == shuffled;
    let (loss, d_repr) = online.pretext_loss_backward(&cache, shuffled, scale, grads);
    online.backward(&fwd, &d_repr, grads);
    Ok((loss.to_f64_lossy(), correct))
}

pub fn objective_weights(objective: Objective, cfg: &Config) -> LossWeights {
    LossWeights::from_config(&Config {
        objective,
        ..cfg.clone()
    })
}
