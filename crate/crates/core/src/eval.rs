//! Evaluation battery: linear probe on frozen features, shuffle
//! sensitivity, retrieval, low-shot probing, per-class motion report,
//! full finetuning, and plain-text/delimited report tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::augment::{group_shuffle, sample_negative_perms, GroupPermutation};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::{Encoder, HeadKind};
use crate::motion::{default_top_k, median, profile};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::synthdata::Dataset;
use crate::trainer::AdamW;
use crate::video::VideoTensor;

/// Linear-probe hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub test_fraction: f64,
    pub seed: u64,
    /// Center and scale features by training-split statistics.
    pub standardize: bool,
}

impl ProbeConfig {
    pub fn from_config(cfg: &Config) -> Self {
        Self {
            epochs: cfg.probe_epochs,
            lr: cfg.probe_lr,
            batch_size: cfg.probe_batch,
            test_fraction: cfg.probe_test_fraction,
            seed: cfg.seed,
            standardize: true,
        }
    }
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self::from_config(&Config::default())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub top1: f64,
    /// Accuracy per class; `None` for classes absent from the evaluated set.
    pub per_class: Vec<Option<f64>>,
    pub per_class_count: Vec<usize>,
    pub n_eval: usize,
}

impl ProbeResult {
    pub fn from_predictions(predicted: &[usize], labels: &[usize], n_classes: usize) -> Self {
        let mut hits = vec![0usize; n_classes];
        let mut counts = vec![0usize; n_classes];
        for (&p, &l) in predicted.iter().zip(labels) {
            counts[l] += 1;
            hits[l] += (p == l) as usize;
        }
        let n = labels.len();
        let total: usize = hits.iter().sum();
        Self {
            top1: if n == 0 { 0.0 } else { total as f64 / n as f64 },
            per_class: hits
                .iter()
                .zip(&counts)
                .map(|(&h, &c)| (c > 0).then(|| h as f64 / c as f64))
                .collect(),
            per_class_count: counts,
            n_eval: n,
        }
    }
}

/// Train/test indices with every class split in the same proportion.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn stratified_split(labels: &[usize], n_classes: usize, test_fraction: f64, rng: &mut Rng) -> Result<Split> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidArgument(format!("test fraction {test_fraction} outside [0, 1)")));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        rng.shuffle(&mut members);
        let n_test = ((members.len() as f64 * test_fraction).round() as usize).min(members.len().saturating_sub(1));
        if members.len() - n_test == 0 {
            return Err(Error::MissingClass { class });
        }
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

/// `floor(fraction * n_c)` training samples per class, at least one each.
pub fn stratified_subset(labels: &[usize], indices: &[usize], n_classes: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} outside (0, 1]")));
    }
    let mut rng = Rng::derive(seed, &[0x10f5, fraction.to_bits()]);
    let mut out = Vec::new();
    for class in 0..n_classes {
        let mut members: Vec<usize> = indices.iter().copied().filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            return Err(Error::MissingClass { class });
        }
        let keep = (members.len() as f64 * fraction + 1e-9).floor() as usize;
        if keep == 0 {
            return Err(Error::FractionTooSmall { fraction });
        }
        if keep < members.len() {
            rng.shuffle(&mut members);
        }
        out.extend_from_slice(&members[..keep]);
    }
    out.sort_unstable();
    Ok(out)
}

/// Multinomial logistic regression on fixed features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub n_classes: usize,
    pub dim: usize,
    /// Row-major `[dim, n_classes]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl LinearProbe {
    fn normalized(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let x = self.normalized(x);
        let mut out = self.bias.clone();
        for (i, xi) in x.iter().enumerate() {
            for (c, o) in out.iter_mut().enumerate() {
                *o += xi * self.weight[i * self.n_classes + c];
            }
        }
        out
    }

    /// Highest logit, ties broken toward the lower class index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let l = self.logits(x);
        let mut best = 0;
        for c in 1..l.len() {
            if l[c] > l[best] {
                best = c;
            }
        }
        best
    }

    pub fn evaluate(&self, features: &[Vec<f64>], labels: &[usize], indices: &[usize]) -> ProbeResult {
        let pred: Vec<usize> = indices.iter().map(|&i| self.predict(&features[i])).collect();
        let lab: Vec<usize> = indices.iter().map(|&i| labels[i]).collect();
        ProbeResult::from_predictions(&pred, &lab, self.n_classes)
    }

    /// Adam on mean cross-entropy over shuffled mini-batches.
    pub fn train(
        features: &[Vec<f64>],
        labels: &[usize],
        indices: &[usize],
        n_classes: usize,
        cfg: &ProbeConfig,
    ) -> Result<Self> {
        for class in 0..n_classes {
            if !indices.iter().any(|&i| labels[i] == class) {
                return Err(Error::MissingClass { class });
            }
        }
        let dim = features[indices[0]].len();
        let (mean, scale) = if cfg.standardize {
            let n = indices.len() as f64;
            let mut mean = vec![0.0; dim];
            for &i in indices {
                for (m, v) in mean.iter_mut().zip(&features[i]) {
                    *m += v / n;
                }
            }
            let mut var = vec![0.0; dim];
            for &i in indices {
                for ((s, v), m) in var.iter_mut().zip(&features[i]).zip(&mean) {
                    *s += (v - m).powi(2) / n;
                }
            }
            let scale = var.iter().map(|v| 1.0 / (v.sqrt() + 1e-6)).collect();
            (mean, scale)
        } else {
            (vec![0.0; dim], vec![1.0; dim])
        };
        let mut probe = Self {
            n_classes,
            dim,
            weight: vec![0.0; dim * n_classes],
            bias: vec![0.0; n_classes],
            mean,
            scale,
        };
        let xs: Vec<Vec<f64>> = indices.iter().map(|&i| probe.normalized(&features[i])).collect();
        let ys: Vec<usize> = indices.iter().map(|&i| labels[i]).collect();
        let mut params = crate::model::ParamSet::<f64>::new();
        params.add("probe.weight", &[dim, n_classes]);
        params.add("probe.bias", &[n_classes]);
        let mut opt = AdamW::new(&params);
        let mut rng = Rng::derive(cfg.seed, &[0x9a0b]);
        let mut order: Vec<usize> = (0..xs.len()).collect();
        let mut t = 0;
        for _ in 0..cfg.epochs {
            rng.shuffle(&mut order);
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                let mut grads = params.zeros_like();
                let inv = 1.0 / chunk.len() as f64;
                for &j in chunk {
                    let x = &xs[j];
                    let mut logits = params.data(1).to_vec();
                    let w = params.data(0);
                    for (i, xi) in x.iter().enumerate() {
                        for (c, l) in logits.iter_mut().enumerate() {
                            *l += xi * w[i * n_classes + c];
                        }
                    }
                    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    let d: Vec<f64> = exps
                        .iter()
                        .enumerate()
                        .map(|(c, e)| (e / sum - (c == ys[j]) as u8 as f64) * inv)
                        .collect();
                    let gw = grads.data_mut(0);
                    for (i, xi) in x.iter().enumerate() {
                        for c in 0..n_classes {
                            gw[i * n_classes + c] += xi * d[c];
                        }
                    }
                    for (g, dc) in grads.data_mut(1).iter_mut().zip(&d) {
                        *g += dc;
                    }
                }
                t += 1;
                opt.update(&mut params, &grads, t, cfg.lr, 0.9, 0.999, 1e-8, 0.0);
            }
        }
        probe.weight = params.data(0).to_vec();
        probe.bias = params.data(1).to_vec();
        Ok(probe)
    }
}

/// First frame of the centered clip of `clip_length` frames.
pub fn center_start(video_frames: usize, clip_length: usize, stride: usize) -> usize {
    let span = (clip_length - 1) * stride + 1;
    video_frames.saturating_sub(span) / 2
}

pub fn center_clip(video: &VideoTensor, cfg: &Config) -> Result<VideoTensor> {
    let start = center_start(video.frames(), cfg.clip_length, cfg.clip_stride);
    video.subclip(start, cfg.clip_length, cfg.clip_stride)
}

/// Frozen backbone representation of `clip`, in f64.
pub fn representation<S: Scalar>(encoder: &Encoder<S>, clip: &VideoTensor) -> Result<Vec<f64>> {
    Ok(encoder.forward(clip)?.repr.iter().map(|v| v.to_f64_lossy()).collect())
}

/// Representation of the center clip of every video.
pub fn extract_features<S: Scalar>(encoder: &Encoder<S>, data: &Dataset, cfg: &Config) -> Result<Vec<Vec<f64>>> {
    data.samples
        .iter()
        .map(|s| representation(encoder, &center_clip(&s.video, cfg)?))
        .collect()
}

/// Linear probe fit and evaluation on frozen features.
#[derive(Debug, Clone)]
pub struct ProbeRun {
    pub result: ProbeResult,
    pub probe: LinearProbe,
    pub split: Split,
    pub features: Vec<Vec<f64>>,
}

pub fn linear_probe<S: Scalar>(encoder: &Encoder<S>, data: &Dataset, cfg: &Config, probe_cfg: &ProbeConfig) -> Result<ProbeRun> {
    let features = extract_features(encoder, data, cfg)?;
    probe_features(features, &data.labels(), data.spec.n_classes(), probe_cfg)
}

pub fn probe_features(features: Vec<Vec<f64>>, labels: &[usize], n_classes: usize, probe_cfg: &ProbeConfig) -> Result<ProbeRun> {
    let mut rng = Rng::derive(probe_cfg.seed, &[0x5b17]);
    let split = stratified_split(labels, n_classes, probe_cfg.test_fraction, &mut rng)?;
    let probe = LinearProbe::train(&features, labels, &split.train, n_classes, probe_cfg)?;
    let eval_idx = if split.test.is_empty() { &split.train } else { &split.test };
    let result = probe.evaluate(&features, labels, eval_idx);
    Ok(ProbeRun {
        result,
        probe,
        split,
        features,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShuffleResult {
    pub acc_normal: f64,
    pub acc_shuffled: f64,
    pub drop: f64,
}

/// Probe accuracy on clean center clips and on group-shuffled copies.
/// `perm_for` picks the permutation applied to each evaluated video.
pub fn shuffle_eval_with<S: Scalar>(
    encoder: &Encoder<S>,
    probe: &LinearProbe,
    data: &Dataset,
    indices: &[usize],
    cfg: &Config,
    perm_for: &mut dyn FnMut(usize) -> Result<GroupPermutation>,
) -> Result<ShuffleResult> {
    let labels = data.labels();
    let mut normal = Vec::with_capacity(indices.len());
    let mut shuffled = Vec::with_capacity(indices.len());
    for &i in indices {
        let clip = center_clip(&data.samples[i].video, cfg)?;
        normal.push(probe.predict(&representation(encoder, &clip)?));
        let perm = perm_for(i)?;
        let sclip = group_shuffle(&clip, &perm)?;
        shuffled.push(probe.predict(&representation(encoder, &sclip)?));
    }
    let lab: Vec<usize> = indices.iter().map(|&i| labels[i]).collect();
    let n = probe.n_classes;
    let acc_normal = ProbeResult::from_predictions(&normal, &lab, n).top1;
    let acc_shuffled = ProbeResult::from_predictions(&shuffled, &lab, n).top1;
    Ok(ShuffleResult {
        acc_normal,
        acc_shuffled,
        drop: acc_normal - acc_shuffled,
    })
}

/// Shuffle sensitivity with a random non-identity group shuffle per video.
pub fn shuffle_eval<S: Scalar>(
    encoder: &Encoder<S>,
    probe: &LinearProbe,
    data: &Dataset,
    indices: &[usize],
    cfg: &Config,
    seed: u64,
) -> Result<ShuffleResult> {
    let mut perm_for = |i: usize| -> Result<GroupPermutation> {
        let mut rng = Rng::derive(seed, &[0x5f1e, i as u64]);
        Ok(sample_negative_perms(cfg.group_size, cfg.n_groups(), 1, &mut rng)?.remove(0))
    };
    shuffle_eval_with(encoder, probe, data, indices, cfg, &mut perm_for)
}

/// `(gallery index, cosine similarity)` of the `k` most similar gallery
/// rows, descending; ties go to the lower index.
pub fn retrieve_topk(query: &[f64], gallery: &[Vec<f64>], k: usize) -> Result<Vec<(usize, f64)>> {
    if gallery.is_empty() {
        return Err(Error::InvalidArgument("empty gallery".into()));
    }
    if k > gallery.len() {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds gallery size {}", gallery.len())));
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let qn = norm(query);
    let mut scored: Vec<(usize, f64)> = gallery
        .iter()
        .enumerate()
        .map(|(i, g)| {
            if g.len() != query.len() {
                return Err(Error::shape("gallery embedding", query.len(), g.len()));
            }
            let d: f64 = g.iter().zip(query).map(|(a, b)| a * b).sum();
            let denom = qn * norm(g);
            Ok((i, if denom > 0.0 { d / denom } else { 0.0 }))
        })
        .collect::<Result<_>>()?;
    // partial selection keeps this O(n log k)
    let cmp = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if k < scored.len() && k > 0 {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
    scored.truncate(k);
    Ok(scored)
}

/// Visual-head embeddings of every video's center clip.
pub fn visual_embeddings<S: Scalar>(encoder: &Encoder<S>, data: &Dataset, cfg: &Config) -> Result<Vec<Vec<f64>>> {
    data.samples
        .iter()
        .map(|s| {
            let z = encoder.embed(HeadKind::Visual, &center_clip(&s.video, cfg)?)?;
            Ok(z.iter().map(|v| v.to_f64_lossy()).collect())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowshotRow {
    pub fraction: f64,
    pub n_train: usize,
    pub accuracy: f64,
}

/// Probe accuracy per training fraction on a fixed split; test set shared.
pub fn lowshot_eval(
    features: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    fractions: &[f64],
    probe_cfg: &ProbeConfig,
) -> Result<Vec<LowshotRow>> {
    let mut rng = Rng::derive(probe_cfg.seed, &[0x5b17]);
    let split = stratified_split(labels, n_classes, probe_cfg.test_fraction, &mut rng)?;
    let eval_idx = if split.test.is_empty() { &split.train } else { &split.test };
    fractions
        .iter()
        .map(|&f| {
            let train = if f == 1.0 {
                split.train.clone()
            } else {
                stratified_subset(labels, &split.train, n_classes, f, probe_cfg.seed)?
            };
            let probe = LinearProbe::train(features, labels, &train, n_classes, probe_cfg)?;
            Ok(LowshotRow {
                fraction: f,
                n_train: train.len(),
                accuracy: probe.evaluate(features, labels, eval_idx).top1,
            })
        })
        .collect()
}

/// `100 * (a - b) / b`; infinite when `b` is zero and `a` is not.
pub fn relative_delta_pct(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        if a == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        100.0 * (a - b) / b
    }
}

/// Median window-motion amplitude of every video.
pub fn video_motion_scores(data: &Dataset, cfg: &Config) -> Result<Vec<f64>> {
    data.samples
        .iter()
        .map(|s| {
            let v = &s.video;
            let k = if cfg.motion_top_k == 0 {
                default_top_k(v.height(), v.width())
            } else {
                cfg.motion_top_k
            };
            Ok(profile(v, k, 1.0)?.motion_score())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionClassRow {
    pub category: String,
    /// Median of per-video motion scores of the class (raw, unnormalized).
    pub motion: f64,
    pub delta_accuracy: f64,
}

/// Per-class accuracy difference `a - b` next to the class motion score,
/// sorted by descending difference (ties by category name).
pub fn motion_class_report(
    a: &ProbeResult,
    b: &ProbeResult,
    class_names: &[String],
    labels: &[usize],
    motion_scores: &[f64],
) -> Vec<MotionClassRow> {
    let mut rows: Vec<MotionClassRow> = class_names
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let scores: Vec<f64> = labels
                .iter()
                .zip(motion_scores)
                .filter(|(l, _)| **l == c)
                .map(|(_, s)| *s)
                .collect();
            MotionClassRow {
                category: name.clone(),
                motion: if scores.is_empty() { f64::NAN } else { median(&scores) },
                delta_accuracy: a.per_class[c].unwrap_or(0.0) - b.per_class[c].unwrap_or(0.0),
            }
        })
        .collect();
    rows.sort_by(|x, y| {
        y.delta_accuracy
            .total_cmp(&x.delta_accuracy)
            .then_with(|| x.category.cmp(&y.category))
    });
    rows
}

/// Trains the backbone and a linear classifier end to end with
/// cross-entropy; returns held-out accuracy.
pub fn finetune<S: Scalar>(
    encoder: &mut Encoder<S>,
    data: &Dataset,
    cfg: &Config,
    probe_cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    let labels = data.labels();
    let n_classes = data.spec.n_classes();
    let mut rng = Rng::derive(probe_cfg.seed, &[0x5b17]);
    let split = stratified_split(&labels, n_classes, probe_cfg.test_fraction, &mut rng)?;
    let d = encoder.config().repr_dim();
    let mut head = crate::model::ParamSet::<S>::new();
    head.add("cls_head.weight", &[d, n_classes]);
    head.add("cls_head.bias", &[n_classes]);
    let mut init = Rng::derive(probe_cfg.seed, &[0xf1e7]);
    for v in head.data_mut(0) {
        *v = S::of(init.truncated_normal(0.02));
    }
    let mut opt_b = AdamW::new(encoder.params());
    let mut opt_h = AdamW::new(&head);
    let mut order = split.train.clone();
    let mut t = 0;
    let clips: Vec<VideoTensor> = data
        .samples
        .iter()
        .map(|s| center_clip(&s.video, cfg))
        .collect::<Result<_>>()?;
    for _ in 0..probe_cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(probe_cfg.batch_size.max(1)) {
            let mut g_b = encoder.zero_grads();
            let mut g_h = head.zeros_like();
            let inv = S::of(1.0 / chunk.len() as f64);
            for &i in chunk {
                let fwd = encoder.forward_train(&clips[i])?;
                let logits = crate::model::ops::linear(&fwd.repr, head.data(0), head.data(1), 1, d, n_classes);
                let max = logits.iter().fold(S::neg_infinity(), |m, &v| m.max(v));
                let exps: Vec<S> = logits.iter().map(|&l| (l - max).exp()).collect();
                let sum: S = exps.iter().copied().sum();
                let dl: Vec<S> = exps
                    .iter()
                    .enumerate()
                    .map(|(c, &e)| (e / sum - if c == labels[i] { S::one() } else { S::zero() }) * inv)
                    .collect();
                let (gw, gb) = crate::model::two_mut(&mut g_h, 0, 1);
                let d_repr = crate::model::ops::linear_backward(&fwd.repr, head.data(0), &dl, gw, gb, 1, d, n_classes, true)
                    .expect("dx requested");
                encoder.backward(&fwd, &d_repr, &mut g_b);
            }
            t += 1;
            opt_b.update(encoder.params_mut(), &g_b, t, probe_cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay);
            opt_h.update(&mut head, &g_h, t, probe_cfg.lr, 0.9, 0.999, 1e-8, 0.0);
        }
    }
    let eval_idx = if split.test.is_empty() { &split.train } else { &split.test };
    let mut pred = Vec::with_capacity(eval_idx.len());
    for &i in eval_idx {
        let r = encoder.forward(&clips[i])?.repr;
        let logits = crate::model::ops::linear(&r, head.data(0), head.data(1), 1, d, n_classes);
        let mut best = 0;
        for c in 1..n_classes {
            if logits[c] > logits[best] {
                best = c;
            }
        }
        pred.push(best);
    }
    let lab: Vec<usize> = eval_idx.iter().map(|&i| labels[i]).collect();
    Ok(ProbeResult::from_predictions(&pred, &lab, n_classes))
}

/// Hex SHA-256 prefix identifying checkpoint bytes.
pub fn checkpoint_id(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// A table with provenance, rendered as TSV or aligned text.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub title: String,
    pub config_hash: String,
    pub checkpoint_id: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub notes: Vec<String>,
}

impl Report {
    pub fn new(title: &str, config_hash: &str, checkpoint_id: &str, columns: &[&str]) -> Self {
        Self {
            title: title.to_string(),
            config_hash: config_hash.to_string(),
            checkpoint_id: checkpoint_id.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    /// Tab-separated with `#` provenance lines first.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {}", self.title);
        let _ = writeln!(out, "# config_hash\t{}", self.config_hash);
        let _ = writeln!(out, "# checkpoint\t{}", self.checkpoint_id);
        let _ = writeln!(out, "{}", self.columns.join("\t"));
        for r in &self.rows {
            let _ = writeln!(out, "{}", r.join("\t"));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut widths: Vec<usize> = self.columns.iter().map(|c| c.len()).collect();
        for r in &self.rows {
            for (w, cell) in widths.iter_mut().zip(r) {
                *w = (*w).max(cell.len());
            }
        }
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.title);
        let _ = writeln!(out, "config {}  checkpoint {}", self.config_hash, self.checkpoint_id);
        let _ = writeln!(out, "{}", line(&self.columns));
        for r in &self.rows {
            let _ = writeln!(out, "{}", line(r));
        }
        for n in &self.notes {
            let _ = writeln!(out, "{n}");
        }
        out
    }
}

/// Percent with one decimal, as in accuracy tables.
pub fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

/// Groups sample indices by label, classes in ascending order.
pub fn by_class(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut m: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        m.entry(l).or_default().push(i);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_stratified_and_deterministic() {
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let a = stratified_split(&labels, 4, 0.25, &mut Rng::new(1)).unwrap();
        let b = stratified_split(&labels, 4, 0.25, &mut Rng::new(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.test.len(), 12);
        for c in 0..4 {
            assert_eq!(a.test.iter().filter(|&&i| labels[i] == c).count(), 3);
        }
    }

    #[test]
    fn subset_rules() {
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let all: Vec<usize> = (0..20).collect();
        assert_eq!(stratified_subset(&labels, &all, 2, 1.0, 0).unwrap(), all);
        assert_eq!(stratified_subset(&labels, &all, 2, 0.2, 0).unwrap().len(), 4);
        assert!(matches!(
            stratified_subset(&labels, &all, 2, 0.05, 0),
            Err(Error::FractionTooSmall { .. })
        ));
    }

    #[test]
    fn missing_class_is_reported() {
        let feats = vec![vec![0.0], vec![1.0]];
        let err = LinearProbe::train(&feats, &[0, 0], &[0, 1], 2, &ProbeConfig::default()).unwrap_err();
        assert!(matches!(err, Error::MissingClass { class: 1 }));
    }

    #[test]
    fn probe_memorizes_separable_set() {
        let mut rng = Rng::new(3);
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let feats: Vec<Vec<f64>> = labels
            .iter()
            .map(|&l| (0..5).map(|d| if d == l { 2.0 } else { 0.0 } + 0.3 * rng.normal()).collect())
            .collect();
        let idx: Vec<usize> = (0..30).collect();
        let probe = LinearProbe::train(&feats, &labels, &idx, 3, &ProbeConfig::default()).unwrap();
        let r = probe.evaluate(&feats, &labels, &idx);
        assert!(r.top1 >= 0.9, "{}", r.top1);
        let weighted: f64 = r
            .per_class
            .iter()
            .zip(&r.per_class_count)
            .map(|(a, &n)| a.unwrap() * n as f64)
            .sum::<f64>()
            / r.n_eval as f64;
        assert!((weighted - r.top1).abs() < 1e-12);
    }

    #[test]
    fn retrieval_matches_full_sort() {
        let mut rng = Rng::new(4);
        for _ in 0..50 {
            let gallery: Vec<Vec<f64>> = (0..20).map(|_| (0..4).map(|_| rng.normal()).collect()).collect();
            let q: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
            let got = retrieve_topk(&q, &gallery, 3).unwrap();
            let all = retrieve_topk(&q, &gallery, 20).unwrap();
            assert_eq!(got, all[..3].to_vec());
        }
        let gallery = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        let r = retrieve_topk(&[1.0, 0.0], &gallery, 3).unwrap();
        assert_eq!(r.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 2, 1]);
        assert_eq!(r[0].1, 1.0);
    }

    #[test]
    fn relative_delta() {
        assert!((relative_delta_pct(0.6, 0.5) - 20.0).abs() < 1e-9);
        assert_eq!(relative_delta_pct(0.0, 0.0), 0.0);
    }

    #[test]
    fn report_renders_both_forms() {
        let mut r = Report::new("probe", "abc", "def", &["Category", "Motion", "Δ Acc."]);
        r.push(vec!["up".into(), "1.0".into(), "2.0".into()]);
        assert!(r.to_tsv().contains("Category\tMotion\tΔ Acc.\nup\t1.0\t2.0\n"));
        assert!(r.to_text().contains("config abc  checkpoint def"));
    }

    #[test]
    fn equal_results_give_zero_deltas() {
        let r = ProbeResult::from_predictions(&[0, 1, 1], &[0, 1, 0], 2);
        let rows = motion_class_report(&r, &r, &["a".into(), "b".into()], &[0, 1, 0], &[1.0, 2.0, 3.0]);
        assert!(rows.iter().all(|x| x.delta_accuracy == 0.0));
        assert_eq!(rows[0].motion, 2.0);
    }
}
