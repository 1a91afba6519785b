//! Run configuration.
//!
//! A [`Config`] is stored as a flat TOML document: one `key = value` per
//! line, no tables. Unknown keys are rejected. Every key is documented on
//! the corresponding field below; omitted keys take the desk-scale default.
//!
//! ```toml
//! tau = 0.1
//! beta = inf          # uniform window sampling
//! objective = "scvrl"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingMode {
    /// Final CLS token.
    Cls,
    /// Space-time mean of the patch tokens.
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadsMode {
    Separate,
    Shared,
}

impl std::str::FromStr for PoolingMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cls" => Ok(PoolingMode::Cls),
            "avg" => Ok(PoolingMode::Avg),
            other => Err(format!("unknown pooling mode {other:?} (cls or avg)")),
        }
    }
}

impl std::str::FromStr for HeadsMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "separate" => Ok(HeadsMode::Separate),
            "shared" => Ok(HeadsMode::Shared),
            other => Err(format!("unknown heads mode {other:?} (separate or shared)")),
        }
    }
}

/// Which loss terms drive pretraining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Shuffled contrastive plus visual contrastive.
    Scvrl,
    /// Visual contrastive only.
    Cvrl,
    /// Shuffled contrastive only.
    ShuffledOnly,
    /// Binary shuffled/not-shuffled classifier plus visual contrastive.
    Pretext,
}

impl Objective {
    pub fn uses_temporal(self) -> bool {
        matches!(self, Objective::Scvrl | Objective::ShuffledOnly)
    }

    pub fn uses_visual(self) -> bool {
        !matches!(self, Objective::ShuffledOnly)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Scvrl => "scvrl",
            Objective::Cvrl => "cvrl",
            Objective::ShuffledOnly => "shuffled-only",
            Objective::Pretext => "pretext",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "scvrl" => Ok(Objective::Scvrl),
            "cvrl" => Ok(Objective::Cvrl),
            "shuffled-only" => Ok(Objective::ShuffledOnly),
            "pretext" => Ok(Objective::Pretext),
            other => Err(format!("unknown objective {other:?}")),
        }
    }
}

/// Which loss term the weight `lambda_weight` multiplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightedTerm {
    Visual,
    Temporal,
}

/// How the visual-positive clip is drawn from its video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositiveSampling {
    Targeted,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// InfoNCE temperature.
    pub tau: f64,
    /// Weight of the second loss term.
    pub lambda_weight: f64,
    /// Term multiplied by `lambda_weight`.
    pub lambda_target: WeightedTerm,
    /// Window-sampling temperature; `inf` selects uniform sampling.
    pub beta: f64,
    /// Shuffled negatives per anchor.
    pub n_temporal_negatives: usize,
    /// Memory bank capacity.
    pub bank_size: usize,
    /// Keys encoded before the first optimization step.
    pub bank_warmup_min: usize,
    /// EMA coefficient of the momentum encoder.
    pub ema_momentum: f64,
    /// Frames per shuffle group.
    pub group_size: usize,
    /// Temporal kernel of the cube projection (2 or 3).
    pub temporal_kernel: usize,
    /// Frames per clip.
    pub clip_length: usize,
    /// Frame stride inside a clip.
    pub clip_stride: usize,
    /// Spatial side of augmented clips fed to the encoder.
    pub crop_size: usize,
    /// Colour channels of the input video (1 or 3).
    pub input_channels: usize,
    pub spatial_patch: usize,
    pub spatial_stride: usize,
    pub stage_channels: Vec<usize>,
    pub stage_blocks: Vec<usize>,
    pub stage_heads: Vec<usize>,
    pub mlp_ratio: usize,
    pub head_hidden: usize,
    pub head_out: usize,
    pub pooling_mode: PoolingMode,
    pub heads_mode: HeadsMode,
    pub objective: Objective,
    pub positive_sampling: PositiveSampling,
    /// Edge pixels per frame for motion scoring; 0 derives it from resolution.
    pub motion_top_k: usize,
    pub lr_peak: f64,
    pub lr_warm: f64,
    pub lr_end: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub batch_size: usize,
    /// Steps between periodic checkpoints (0 disables them).
    pub checkpoint_every: u64,
    pub p_gray: f64,
    pub p_flip: f64,
    pub p_blur: f64,
    pub p_color: f64,
    pub color_jitter: f64,
    pub crop_scale_min: f64,
    pub crop_scale_max: f64,
    pub temporal_jitter_frames: usize,
    pub probe_epochs: usize,
    pub probe_lr: f64,
    pub probe_batch: usize,
    /// Fraction of each class held out for probe evaluation.
    pub probe_test_fraction: f64,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self::desk()
    }
}

impl Config {
    /// Desk-scale defaults: 8 x 32 x 32 x 3 clips, 4 shuffle groups.
    pub fn desk() -> Self {
        Self {
            tau: 0.1,
            lambda_weight: 1.0,
            lambda_target: WeightedTerm::Visual,
            beta: 5.0,
            n_temporal_negatives: 6,
            bank_size: 1024,
            bank_warmup_min: 64,
            ema_momentum: 0.999,
            group_size: 2,
            temporal_kernel: 2,
            clip_length: 8,
            clip_stride: 1,
            crop_size: 32,
            input_channels: 3,
            spatial_patch: 4,
            spatial_stride: 4,
            stage_channels: vec![16, 32, 64, 128],
            stage_blocks: vec![1, 1, 2, 1],
            stage_heads: vec![1, 2, 4, 8],
            mlp_ratio: 4,
            head_hidden: 64,
            head_out: 16,
            pooling_mode: PoolingMode::Cls,
            heads_mode: HeadsMode::Separate,
            objective: Objective::Scvrl,
            positive_sampling: PositiveSampling::Targeted,
            motion_top_k: 0,
            lr_peak: 1e-4,
            lr_warm: 1e-6,
            lr_end: 1e-6,
            weight_decay: 0.05,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            warmup_steps: 100,
            total_steps: 2000,
            batch_size: 8,
            checkpoint_every: 500,
            p_gray: 0.2,
            p_flip: 0.5,
            p_blur: 0.5,
            p_color: 0.8,
            color_jitter: 0.4,
            crop_scale_min: 0.5,
            crop_scale_max: 1.0,
            temporal_jitter_frames: 0,
            probe_epochs: 100,
            probe_lr: 1e-3,
            probe_batch: 64,
            probe_test_fraction: 0.25,
            seed: 0,
        }
    }

    /// Full-scale constants: 16-frame clips at 224^2, MViT-B widths.
    pub fn full_scale() -> Self {
        Self {
            n_temporal_negatives: 12,
            bank_size: 65536,
            clip_length: 16,
            clip_stride: 4,
            crop_size: 224,
            spatial_patch: 7,
            spatial_stride: 4,
            stage_channels: vec![96, 192, 384, 768],
            stage_blocks: vec![1, 2, 11, 2],
            stage_heads: vec![1, 2, 4, 8],
            head_hidden: 2048,
            head_out: 128,
            batch_size: 4,
            ..Self::desk()
        }
    }

    /// Every broken invariant, one message each. Empty means valid.
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.tau > 0.0) {
            v.push("tau must be > 0".to_string());
        }
        if !(self.beta > 0.0) {
            v.push("beta must be > 0 (use inf for uniform sampling)".to_string());
        }
        if !(0.0..=1.0).contains(&self.ema_momentum) {
            v.push("ema_momentum must be in [0, 1]".to_string());
        }
        if !self.lambda_weight.is_finite() || self.lambda_weight < 0.0 {
            v.push("lambda_weight must be finite and >= 0".to_string());
        }
        if self.group_size == 0 {
            v.push("group_size must be >= 1".to_string());
        } else if self.clip_length % self.group_size != 0 {
            v.push(format!(
                "group_size {} does not divide clip_length {}",
                self.group_size, self.clip_length
            ));
        }
        if !matches!(self.input_channels, 1 | 3) {
            v.push("input_channels must be 1 or 3".to_string());
        }
        if self.clip_length == 0 {
            v.push("clip_length must be >= 1".to_string());
        }
        if self.clip_stride == 0 {
            v.push("clip_stride must be >= 1".to_string());
        }
        if !matches!(self.temporal_kernel, 2 | 3) {
            v.push(format!(
                "temporal_kernel must be 2 or 3, got {}",
                self.temporal_kernel
            ));
        }
        if self.bank_size == 0 {
            v.push("bank_size must be >= 1".to_string());
        }
        if self.n_temporal_negatives == 0 && self.objective.uses_temporal() {
            v.push("n_temporal_negatives must be >= 1".to_string());
        }
        if self.group_size != 2 && self.group_size != 0 {
            // cube projection strides by two frames; tokens must not straddle groups
            v.push(format!(
                "group_size must equal the temporal stride 2, got {}",
                self.group_size
            ));
        }
        let n = self.stage_channels.len();
        if n == 0 {
            v.push("stage_channels must not be empty".to_string());
        }
        if self.stage_blocks.len() != n || self.stage_heads.len() != n {
            v.push("stage_channels, stage_blocks and stage_heads must have equal length".to_string());
        }
        if self.stage_channels.windows(2).any(|w| w[1] != 2 * w[0]) {
            v.push("stage_channels must double at every stage".to_string());
        }
        if self.stage_blocks.iter().any(|&b| b == 0) {
            v.push("every stage needs at least one block".to_string());
        }
        for (c, h) in self.stage_channels.iter().zip(&self.stage_heads) {
            if *h == 0 || c % h != 0 {
                v.push(format!("stage width {c} not divisible by {h} heads"));
            }
        }
        if self.spatial_patch == 0 || self.spatial_stride == 0 {
            v.push("spatial_patch and spatial_stride must be >= 1".to_string());
        } else if self.spatial_patch < self.spatial_stride {
            v.push("spatial_patch must be >= spatial_stride".to_string());
        } else if self.crop_size < self.spatial_patch {
            v.push("crop_size must be >= spatial_patch".to_string());
        }
        if self.head_hidden == 0 || self.head_out == 0 || self.mlp_ratio == 0 {
            v.push("head_hidden, head_out and mlp_ratio must be >= 1".to_string());
        }
        if self.warmup_steps >= self.total_steps {
            v.push("warmup_steps must be < total_steps".to_string());
        }
        if self.batch_size == 0 {
            v.push("batch_size must be >= 1".to_string());
        }
        for (name, p) in [
            ("p_gray", self.p_gray),
            ("p_flip", self.p_flip),
            ("p_blur", self.p_blur),
            ("p_color", self.p_color),
        ] {
            if !(0.0..=1.0).contains(&p) {
                v.push(format!("{name} must be in [0, 1]"));
            }
        }
        if !(self.color_jitter >= 0.0 && self.color_jitter < 1.0) {
            v.push("color_jitter must be in [0, 1)".to_string());
        }
        if !(self.crop_scale_min > 0.0
            && self.crop_scale_min <= self.crop_scale_max
            && self.crop_scale_max <= 1.0)
        {
            v.push("crop scale range must satisfy 0 < min <= max <= 1".to_string());
        }
        for (name, x) in [
            ("lr_peak", self.lr_peak),
            ("lr_warm", self.lr_warm),
            ("lr_end", self.lr_end),
            ("weight_decay", self.weight_decay),
        ] {
            if !(x >= 0.0 && x.is_finite()) {
                v.push(format!("{name} must be finite and >= 0"));
            }
        }
        if !(self.probe_test_fraction > 0.0 && self.probe_test_fraction < 1.0) {
            v.push("probe_test_fraction must be in (0, 1)".to_string());
        }
        if self.probe_batch == 0 {
            v.push("probe_batch must be >= 1".to_string());
        }
        v
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| toml_error(origin, text, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn n_groups(&self) -> usize {
        self.clip_length / self.group_size.max(1)
    }

    pub fn uniform_sampling(&self) -> bool {
        self.beta.is_infinite()
    }
}

pub(crate) fn toml_error(origin: &str, text: &str, e: toml::de::Error) -> Error {
    let line = e
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
        .unwrap_or(0);
    Error::Parse {
        path: origin.to_string(),
        line,
        message: e.message().to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        assert_eq!(Config::default().validate(), Vec::<String>::new());
        assert_eq!(Config::full_scale().validate(), Vec::<String>::new());
    }

    #[test]
    fn zero_tau_is_a_violation() {
        let cfg = Config {
            tau: 0.0,
            ..Config::default()
        };
        assert_eq!(cfg.validate(), vec!["tau must be > 0".to_string()]);
    }

    #[test]
    fn group_size_must_divide_clip_length() {
        let cfg = Config {
            group_size: 3,
            clip_length: 16,
            ..Config::default()
        };
        assert_eq!(16 % 3, 1);
        let v = cfg.validate();
        assert!(v.iter().any(|m| m.contains("does not divide clip_length 16")), "{v:?}");
    }

    #[test]
    fn infinite_beta_round_trips() {
        let cfg = Config {
            beta: f64::INFINITY,
            ..Config::default()
        };
        let text = cfg.to_toml();
        assert!(text.contains("beta = inf"), "{text}");
        let back = Config::from_toml(&text, "mem").unwrap();
        assert!(back.uniform_sampling());
        assert!(back.validate().is_empty());
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let err = Config::from_toml("tau = 0.2\nbogus = 1\n", "cfg.toml").unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("bogus"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn partial_file_takes_defaults() {
        let cfg = Config::from_toml("objective = \"cvrl\"\nbeta = 2.5\n", "x").unwrap();
        assert_eq!(cfg.objective, Objective::Cvrl);
        assert_eq!(cfg.beta, 2.5);
        assert_eq!(cfg.tau, 0.1);
    }

    #[test]
    fn bad_kernel_and_momentum() {
        let cfg = Config {
            temporal_kernel: 4,
            ema_momentum: 1.5,
            bank_size: 0,
            ..Config::default()
        };
        assert_eq!(cfg.validate().len(), 3);
    }

    #[test]
    fn hash_changes_with_content() {
        let a = Config::default();
        let b = Config {
            seed: 9,
            ..Config::default()
        };
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), Config::default().hash());
    }
}
