//! Self-supervised pretraining: clip sampling, loss assembly, AdamW with
//! warmup and cosine decay, EMA and bank upkeep, binary checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::augment::{group_shuffle, jittered_start, sample_negative_perms, AugmentPolicy};
use crate::config::{Config, Objective};
use crate::error::{Error, Result};
use crate::model::{is_no_decay, Encoder, HeadKind, ModelConfig, ParamSet, Tensor};
use crate::momentum::{ema_update, MemoryBank};
use crate::motion::{default_top_k, profile, sample_window};
use crate::objective::{contrastive_step, pretext_step, LossWeights, Views};
use crate::rng::{Rng, RngState};
use crate::scalar::{DType, Scalar};
use crate::synthdata::{epoch_batches, Dataset};
use crate::video::VideoTensor;

const INIT_STREAM: u64 = 0x1417;
const TRAIN_STREAM: u64 = 0x7a41;
const WARMUP_STREAM: u64 = 0xba4c;
const EPOCH_STREAM: u64 = 0xe90c;

/// Linear warmup from `lr_warm` to `lr_peak`, then cosine decay to `lr_end`.
pub fn lr_at(step: u64, cfg: &Config) -> f64 {
    let w = cfg.warmup_steps;
    let s = cfg.total_steps;
    if step < w {
        return cfg.lr_warm + (cfg.lr_peak - cfg.lr_warm) * step as f64 / w as f64;
    }
    if step >= s {
        return cfg.lr_end;
    }
    let progress = (step - w) as f64 / (s - w) as f64;
    cfg.lr_end + 0.5 * (cfg.lr_peak - cfg.lr_end) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Video indices of the batch consumed at `step`. Each epoch is an
/// independent shuffle derived from the seed and the epoch number.
pub fn batch_indices(step: u64, n_videos: usize, batch_size: usize, seed: u64) -> Vec<usize> {
    let per_epoch = n_videos.div_ceil(batch_size) as u64;
    let epoch = step / per_epoch;
    let mut rng = Rng::derive(seed, &[EPOCH_STREAM, epoch]);
    let batches = epoch_batches(n_videos, batch_size, true, &mut rng);
    batches[(step % per_epoch) as usize].clone()
}

/// Clip of `cfg.clip_length` frames drawn from one window of `video`:
/// softmax over window motion when targeted, uniform otherwise.
pub fn sample_clip(video: &VideoTensor, cfg: &Config, rng: &mut Rng) -> Result<(VideoTensor, usize)> {
    let span = (cfg.clip_length - 1) * cfg.clip_stride + 1;
    if span > video.frames() {
        return Err(Error::shape("video frames for one clip", span, video.frames()));
    }
    let top_k = if cfg.motion_top_k == 0 {
        default_top_k(video.height(), video.width())
    } else {
        cfg.motion_top_k
    };
    let beta = if cfg.uniform_sampling() { f64::INFINITY } else { cfg.beta };
    let window_len = video.window_frames();
    let prof = profile(video, top_k, beta)?;
    let window = sample_window(&prof, rng);
    let start = jittered_start(
        window * window_len,
        cfg.temporal_jitter_frames,
        video.frames() - span,
        rng,
    );
    Ok((video.subclip(start, cfg.clip_length, cfg.clip_stride)?, window))
}

/// Decoupled-weight-decay Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<S: Scalar> {
    pub m: ParamSet<S>,
    pub v: ParamSet<S>,
    decay: Vec<bool>,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(params: &ParamSet<S>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            decay: params.names().iter().map(|n| !is_no_decay(n)).collect(),
        }
    }

    pub fn from_moments(params: &ParamSet<S>, m: ParamSet<S>, v: ParamSet<S>) -> Result<Self> {
        params.check_same_layout(&m)?;
        params.check_same_layout(&v)?;
        let mut out = Self::new(params);
        out.m = m;
        out.v = v;
        Ok(out)
    }

    /// One update with bias correction for update number `t` (1-based).
    #[allow(clippy::too_many_arguments)]
    pub fn update(
        &mut self,
        params: &mut ParamSet<S>,
        grads: &ParamSet<S>,
        t: u64,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    ) {
        let c1 = 1.0 - beta1.powf(t as f64);
        let c2 = 1.0 - beta2.powf(t as f64);
        let (b1, b2) = (S::of(beta1), S::of(beta2));
        let (a1, a2) = (S::of(1.0 - beta1), S::of(1.0 - beta2));
        let step = S::of(lr / c1);
        let c2_sqrt = S::of(c2.sqrt());
        let eps = S::of(eps);
        for i in 0..params.len() {
            let shrink = if self.decay[i] { S::of(1.0 - lr * weight_decay) } else { S::one() };
            let g = grads.data(i);
            let m = self.m.data_mut(i);
            let v = self.v.data_mut(i);
            let p = params.data_mut(i);
            for j in 0..p.len() {
                m[j] = b1 * m[j] + a1 * g[j];
                v[j] = b2 * v[j] + a2 * g[j] * g[j];
                p[j] = p[j] * shrink - step * m[j] / (v[j].sqrt() / c2_sqrt + eps);
            }
        }
    }
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_v: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_pretext: Option<f64>,
    pub l_total: f64,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pos_logit_t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neg_logit_t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pos_logit_v: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neg_logit_v: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretext_accuracy: Option<f64>,
    pub bank_count: usize,
}

impl StepMetrics {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Everything needed to continue training bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<S: Scalar> {
    pub cfg: Config,
    pub step: u64,
    pub online: Encoder<S>,
    pub momentum: Encoder<S>,
    pub bank: MemoryBank<S>,
    pub optimizer: AdamW<S>,
    pub rng: Rng,
}

impl<S: Scalar> TrainState<S> {
    /// Fresh state: initialized online encoder, momentum copy, empty bank.
    pub fn new(cfg: &Config) -> Result<Self> {
        cfg.ensure_valid()?;
        let mut init_rng = Rng::derive(cfg.seed, &[INIT_STREAM]);
        let online = Encoder::init(ModelConfig::from_config(cfg), &mut init_rng);
        let momentum = online.clone();
        let optimizer = AdamW::new(online.params());
        Ok(Self {
            cfg: cfg.clone(),
            step: 0,
            momentum,
            optimizer,
            bank: MemoryBank::new(cfg.bank_size, cfg.head_out)?,
            online,
            rng: Rng::derive(cfg.seed, &[TRAIN_STREAM]),
        })
    }

    /// Fresh state with the bank filled by momentum-encoded clips.
    pub fn initialize(cfg: &Config, data: &Dataset) -> Result<Self> {
        let mut state = Self::new(cfg)?;
        if cfg.objective.uses_visual() {
            state.warm_bank(data)?;
        }
        Ok(state)
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights::from_config(&self.cfg)
    }

    /// Encodes clips with the momentum visual head until the bank holds
    /// `bank_warmup_min` keys (or is full).
    pub fn warm_bank(&mut self, data: &Dataset) -> Result<usize> {
        if data.is_empty() {
            return Err(Error::Dataset("cannot warm the bank from an empty dataset".into()));
        }
        let target = self.cfg.bank_warmup_min.clamp(1, self.bank.capacity());
        let policy = AugmentPolicy::from_config(&self.cfg);
        let mut rng = Rng::derive(self.cfg.seed, &[WARMUP_STREAM]);
        let mut encoded = 0;
        while self.bank.count() < target {
            let mut order: Vec<usize> = (0..data.len()).collect();
            rng.shuffle(&mut order);
            for i in order {
                if self.bank.count() >= target {
                    break;
                }
                let (clip, _) = sample_clip(&data.samples[i].video, &self.cfg, &mut rng)?;
                let view = crate::augment::apply_policy(&clip, &policy, &mut rng)?;
                let key = self.momentum.embed(HeadKind::Visual, &view)?;
                self.bank.enqueue(&[key])?;
                encoded += 1;
            }
        }
        Ok(encoded)
    }

    pub fn lr(&self) -> f64 {
        lr_at(self.step, &self.cfg)
    }

    /// One optimization step over the batch scheduled for `self.step`.
    pub fn train_step(&mut self, data: &Dataset) -> Result<StepMetrics> {
        let indices = batch_indices(self.step, data.len(), self.cfg.batch_size, self.cfg.seed);
        self.train_on(data, &indices)
    }

    /// One optimization step over an explicit batch of video indices.
    pub fn train_on(&mut self, data: &Dataset, indices: &[usize]) -> Result<StepMetrics> {
        let cfg = &self.cfg;
        let weights = LossWeights::from_config(cfg);
        let policy = AugmentPolicy::from_config(cfg);
        let bank = if weights.visual != 0.0 {
            Some(self.bank.negatives()?)
        } else {
            None
        };
        let b = indices.len();
        let scale = S::of(1.0 / b as f64);
        let mut grads = self.online.zero_grads();

        let pretext = cfg.objective == Objective::Pretext;
        let shuffled_slots = if pretext {
            let mut slots: Vec<usize> = (0..b).collect();
            self.rng.shuffle(&mut slots);
            let mut n = b / 2;
            if b % 2 == 1 && self.rng.bernoulli(0.5) {
                n += 1;
            }
            let mut flags = vec![false; b];
            for &s in &slots[..n] {
                flags[s] = true;
            }
            flags
        } else {
            vec![false; b]
        };

        let (mut lt, mut lv, mut lp, mut totals) = (vec![], vec![], vec![], vec![]);
        let (mut pt, mut nt, mut pv, mut nv) = (vec![], vec![], vec![], vec![]);
        let mut correct = 0usize;
        let mut keys = Vec::with_capacity(b);
        for (slot, &i) in indices.iter().enumerate() {
            let video = &data.samples[i].video;
            let (anchor, _) = sample_clip(video, cfg, &mut self.rng)?;
            let visual = if weights.visual != 0.0 {
                Some(sample_clip(video, cfg, &mut self.rng)?.0)
            } else {
                None
            };
            let perms = if weights.temporal != 0.0 {
                sample_negative_perms(cfg.group_size, cfg.n_groups(), cfg.n_temporal_negatives, &mut self.rng)?
            } else {
                Vec::new()
            };
            let views = Views::build(&anchor, visual.as_ref(), &perms, &policy, &mut self.rng)?;
            let mut total = 0.0;
            if weights.temporal != 0.0 || weights.visual != 0.0 {
                let out = contrastive_step(
                    &self.online,
                    &self.momentum,
                    &views,
                    bank.as_ref(),
                    cfg.tau,
                    LossWeights { pretext: 0.0, ..weights },
                    scale,
                    &mut grads,
                )?;
                let r = out.report;
                lt.extend(r.temporal);
                lv.extend(r.visual);
                pt.extend(r.temporal_pos_logit);
                nt.extend(r.temporal_neg_logit);
                pv.extend(r.visual_pos_logit);
                nv.extend(r.visual_neg_logit);
                total += r.total;
                keys.extend(out.key);
            }
            if pretext {
                let shuffled = shuffled_slots[slot];
                let clip = if shuffled {
                    let perm = sample_negative_perms(cfg.group_size, cfg.n_groups(), 1, &mut self.rng)?;
                    group_shuffle(&views.anchor, &perm[0])?
                } else {
                    views.anchor.clone()
                };
                let (loss, ok) = pretext_step(
                    &self.online,
                    &clip,
                    shuffled,
                    scale * S::of(weights.pretext),
                    &mut grads,
                )?;
                lp.push(loss);
                correct += ok as usize;
                total += weights.pretext * loss;
            }
            totals.push(total);
        }

        if totals.iter().any(|t| !t.is_finite()) || !grads.all_finite() {
            let detail = indices
                .iter()
                .zip(&totals)
                .map(|(i, t)| format!("video {} loss {t}", data.samples[*i].id))
                .collect::<Vec<_>>()
                .join("; ");
            return Err(Error::NonFiniteLoss {
                step: self.step,
                detail,
            });
        }

        let lr = self.lr();
        self.optimizer.update(
            self.online.params_mut(),
            &grads,
            self.step + 1,
            lr,
            cfg.adam_beta1,
            cfg.adam_beta2,
            cfg.adam_eps,
            cfg.weight_decay,
        );
        if !self.online.params().all_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                detail: "parameters became non-finite after the update".into(),
            });
        }
        ema_update(&mut self.momentum, &self.online, cfg.ema_momentum)?;
        self.bank.enqueue(&keys)?;
        let metrics = StepMetrics {
            step: self.step,
            l_t: mean(&lt),
            l_v: mean(&lv),
            l_pretext: mean(&lp),
            l_total: mean(&totals).unwrap_or(0.0),
            lr,
            pos_logit_t: mean(&pt),
            neg_logit_t: mean(&nt),
            pos_logit_v: mean(&pv),
            neg_logit_v: mean(&nv),
            pretext_accuracy: pretext.then(|| correct as f64 / b as f64),
            bank_count: self.bank.count(),
        };
        self.step += 1;
        Ok(metrics)
    }

    /// Runs until `self.step == until`, saving `ckpt_{step}.bin` into
    /// `checkpoint_dir` every `checkpoint_every` steps and at the end.
    pub fn run(
        &mut self,
        data: &Dataset,
        until: u64,
        checkpoint_dir: Option<&Path>,
        on_step: &mut dyn FnMut(&StepMetrics),
    ) -> Result<Option<PathBuf>> {
        let mut last = None;
        while self.step < until {
            let m = self.train_step(data)?;
            on_step(&m);
            if let Some(dir) = checkpoint_dir {
                let every = self.cfg.checkpoint_every;
                if (every > 0 && self.step % every == 0) || self.step == until {
                    let path = dir.join(checkpoint_name(self.step));
                    self.save(&path)?;
                    last = Some(path);
                }
            }
        }
        Ok(last)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let tmp = path.with_extension("partial");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn checkpoint_name(step: u64) -> String {
    format!("ckpt_{step:06}.bin")
}

/// Initializes (including bank warm-up) and trains for `steps` steps.
pub fn pretrain<S: Scalar>(
    cfg: &Config,
    data: &Dataset,
    steps: u64,
    checkpoint_dir: Option<&Path>,
    on_step: &mut dyn FnMut(&StepMetrics),
) -> Result<TrainState<S>> {
    let mut state = TrainState::initialize(cfg, data)?;
    if let Some(dir) = checkpoint_dir {
        state.save(&dir.join(checkpoint_name(0)))?;
    }
    state.run(data, steps, checkpoint_dir, on_step)?;
    Ok(state)
}

// Checkpoint layout, all integers little-endian:
//   magic "SCVRLCK1" | u32 version | u8 dtype (0 f32, 1 f64) | u64 step
//   u32 len + config TOML (UTF-8)
//   u32 tensor count, then per tensor:
//     u16 len + name | u8 ndim | u32 dims[ndim] | row-major values
//     names are prefixed online/, momentum/, adam_m/, adam_v/
//   bank: u64 capacity | u64 dim | u64 count | u64 cursor | capacity*dim values
//   rng: 32-byte seed | u64 stream | u128 word position
//   u32 CRC32 (IEEE) of every preceding byte

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SCVRLCK1";
pub const CHECKPOINT_VERSION: u32 = 1;
const PREFIXES: [&str; 4] = ["online/", "momentum/", "adam_m/", "adam_v/"];

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn values<S: Scalar>(&mut self, n: usize) -> Result<Vec<S>> {
        let size = S::DTYPE.size();
        let raw = self.take(n * size)?;
        Ok(raw.chunks_exact(size).map(S::read_le).collect())
    }
}

fn write_params<S: Scalar>(out: &mut Vec<u8>, prefix: &str, params: &ParamSet<S>) {
    for (name, t) in params.iter() {
        let full = format!("{prefix}{name}");
        out.extend_from_slice(&(full.len() as u16).to_le_bytes());
        out.extend_from_slice(full.as_bytes());
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &t.data {
            v.write_le(out);
        }
    }
}

/// Header fields readable without knowing the element type.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub dtype: DType,
    pub step: u64,
    pub config: Config,
}

fn verify_crc(bytes: &[u8]) -> Result<&[u8]> {
    if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Checkpoint(format!(
            "CRC mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }
    Ok(body)
}

fn read_header(r: &mut Reader) -> Result<CheckpointHeader> {
    r.take(8)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let code = r.u8()?;
    let dtype = DType::from_code(code).ok_or_else(|| Error::Checkpoint(format!("unknown dtype code {code}")))?;
    let step = r.u64()?;
    let len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(len)?).map_err(|e| Error::Checkpoint(format!("config is not UTF-8: {e}")))?;
    let config = Config::from_toml(text, "checkpoint config")?;
    Ok(CheckpointHeader {
        version,
        dtype,
        step,
        config,
    })
}

/// Validates magic and CRC and returns the header.
pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let body = verify_crc(&bytes)?;
    read_header(&mut Reader { bytes: body, pos: 0 })
}

impl<S: Scalar> TrainState<S> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(S::DTYPE.code());
        out.extend_from_slice(&self.step.to_le_bytes());
        let cfg = self.cfg.to_toml();
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        let sets = [
            self.online.params(),
            self.momentum.params(),
            &self.optimizer.m,
            &self.optimizer.v,
        ];
        let count: usize = sets.iter().map(|p| p.len()).sum();
        out.extend_from_slice(&(count as u32).to_le_bytes());
        for (prefix, set) in PREFIXES.iter().zip(sets) {
            write_params(&mut out, prefix, set);
        }
        for v in [
            self.bank.capacity(),
            self.bank.dim(),
            self.bank.count(),
            self.bank.cursor(),
        ] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for &v in self.bank.raw() {
            v.write_le(&mut out);
        }
        let rs = self.rng.state();
        out.extend_from_slice(&rs.seed);
        out.extend_from_slice(&rs.stream.to_le_bytes());
        out.extend_from_slice(&rs.word_pos.to_le_bytes());
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let body = verify_crc(bytes)?;
        let mut r = Reader { bytes: body, pos: 0 };
        let header = read_header(&mut r)?;
        if header.dtype != S::DTYPE {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {:?} values, requested {:?}",
                header.dtype,
                S::DTYPE
            )));
        }
        let n = r.u32()? as usize;
        let mut sets: [ParamSet<S>; 4] = Default::default();
        for _ in 0..n {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|e| Error::Checkpoint(format!("tensor name is not UTF-8: {e}")))?
                .to_string();
            let ndim = r.u8()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let data = r.values::<S>(shape.iter().product())?;
            let k = PREFIXES
                .iter()
                .position(|p| name.starts_with(p))
                .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {name}")))?;
            sets[k].push(&name[PREFIXES[k].len()..], Tensor { shape, data });
        }
        let [online, momentum, m, v] = sets;
        let mcfg = ModelConfig::from_config(&header.config);
        let online = Encoder::from_params(mcfg.clone(), online)?;
        let momentum = Encoder::from_params(mcfg, momentum)?;
        let optimizer = AdamW::from_moments(online.params(), m, v)?;
        let capacity = r.u64()? as usize;
        let dim = r.u64()? as usize;
        let count = r.u64()? as usize;
        let cursor = r.u64()? as usize;
        let bank_data = r.values::<S>(capacity * dim)?;
        let bank = MemoryBank::from_parts(capacity, dim, count, cursor, bank_data)?;
        let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
        let stream = r.u64()?;
        let word_pos = r.u128()?;
        if r.pos != body.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Self {
            cfg: header.config,
            step: header.step,
            online,
            momentum,
            bank,
            optimizer,
            rng: Rng::from_state(RngState { seed, stream, word_pos }),
        })
    }
}
