//! Procedural sprite videos with controlled label cues.
//!
//! * `Motion` datasets label each video by the direction its sprite travels.
//!   Sprites start at a uniformly random position on a torus, so every single
//!   frame has the same distribution for every class: the label is carried
//!   only by how frames follow each other.
//! * `Appearance` datasets label each video by sprite shape and randomize the
//!   direction, so any one frame suffices.
//!
//! On disk a dataset is a directory holding `manifest.json` and one raw file
//! per video (`video_00000.bin`, ...). Each raw file is the `[T, H, W, Ch]`
//! tensor as little-endian `f32`, row-major, with no header.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::toml_error;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::video::VideoTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Motion,
    Appearance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionPattern {
    Up,
    Down,
    Left,
    Right,
    UpLeft,
    UpRight,
    DownLeft,
    DownRight,
    /// Sprite never moves; a distractor class.
    Static,
}

impl MotionPattern {
    /// Unit direction in image coordinates (y grows downwards).
    pub fn direction(self) -> (f64, f64) {
        let d = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            MotionPattern::Up => (0.0, -1.0),
            MotionPattern::Down => (0.0, 1.0),
            MotionPattern::Left => (-1.0, 0.0),
            MotionPattern::Right => (1.0, 0.0),
            MotionPattern::UpLeft => (-d, -d),
            MotionPattern::UpRight => (d, -d),
            MotionPattern::DownLeft => (-d, d),
            MotionPattern::DownRight => (d, d),
            MotionPattern::Static => (0.0, 0.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MotionPattern::Up => "up",
            MotionPattern::Down => "down",
            MotionPattern::Left => "left",
            MotionPattern::Right => "right",
            MotionPattern::UpLeft => "up-left",
            MotionPattern::UpRight => "up-right",
            MotionPattern::DownLeft => "down-left",
            MotionPattern::DownRight => "down-right",
            MotionPattern::Static => "static",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpriteShape {
    Disc,
    Square,
    Triangle,
}

impl SpriteShape {
    pub const ALL: [SpriteShape; 3] = [SpriteShape::Disc, SpriteShape::Square, SpriteShape::Triangle];

    pub fn name(self) -> &'static str {
        match self {
            SpriteShape::Disc => "disc",
            SpriteShape::Square => "square",
            SpriteShape::Triangle => "triangle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n_videos: usize,
    pub video_length_frames: usize,
    pub resolution: usize,
    pub channels: usize,
    pub fps: f64,
    /// Motion classes for `motion` datasets.
    pub motion_classes: Vec<MotionPattern>,
    /// Shape classes for `appearance` datasets.
    pub shape_classes: Vec<SpriteShape>,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Sprite speed range in pixels per frame.
    pub speed_min: f64,
    pub speed_max: f64,
    /// Chance that a one-second window is motionless.
    pub p_static_window: f64,
    /// Amplitude of the background texture.
    pub texture_amplitude: f64,
    /// Per-channel range of the background color.
    pub background_range: [f64; 2],
    /// Per-channel range of the sprite color.
    pub sprite_range: [f64; 2],
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Motion,
            n_videos: 512,
            video_length_frames: 24,
            resolution: 32,
            channels: 3,
            fps: 8.0,
            motion_classes: vec![
                MotionPattern::Up,
                MotionPattern::Down,
                MotionPattern::Left,
                MotionPattern::Right,
            ],
            shape_classes: SpriteShape::ALL.to_vec(),
            radius_min: 3.0,
            radius_max: 5.0,
            speed_min: 0.75,
            speed_max: 2.0,
            p_static_window: 0.2,
            texture_amplitude: 0.15,
            background_range: [0.0, 0.35],
            sprite_range: [0.65, 1.0],
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn n_classes(&self) -> usize {
        match self.kind {
            DatasetKind::Motion => self.motion_classes.len(),
            DatasetKind::Appearance => self.shape_classes.len(),
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        match self.kind {
            DatasetKind::Motion => self.motion_classes.iter().map(|c| c.name().to_string()).collect(),
            DatasetKind::Appearance => self.shape_classes.iter().map(|c| c.name().to_string()).collect(),
        }
    }

    pub fn window_frames(&self) -> usize {
        (self.fps.round() as usize).max(1)
    }

    pub fn n_windows(&self) -> usize {
        self.video_length_frames / self.window_frames()
    }

    /// Smallest frame side that fits the largest sprite with a margin.
    pub fn minimum_resolution(&self) -> usize {
        (2.0 * self.radius_max).ceil() as usize + 4
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Dataset(m));
        if self.n_classes() < 2 {
            return fail("at least two classes required".into());
        }
        let mut seen = std::collections::HashSet::new();
        if !self.class_names().iter().all(|n| seen.insert(n.clone())) {
            return fail("duplicate class".into());
        }
        if self.channels != 1 && self.channels != 3 {
            return fail(format!("channels must be 1 or 3, got {}", self.channels));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return fail("fps must be positive".into());
        }
        if self.n_windows() == 0 {
            return fail(format!(
                "video_length_frames {} shorter than one {}-frame window",
                self.video_length_frames,
                self.window_frames()
            ));
        }
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max) {
            return fail("radius range must satisfy 0 < min <= max".into());
        }
        if !(self.speed_min >= 0.0 && self.speed_min <= self.speed_max) {
            return fail("speed range must satisfy 0 <= min <= max".into());
        }
        if !(0.0..=1.0).contains(&self.p_static_window) {
            return fail("p_static_window must be in [0, 1]".into());
        }
        if !(0.0..=0.5).contains(&self.texture_amplitude) {
            return fail("texture_amplitude must be in [0, 0.5]".into());
        }
        for (name, [lo, hi]) in [("background_range", self.background_range), ("sprite_range", self.sprite_range)] {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return fail(format!("{name} must satisfy 0 <= lo <= hi <= 1, got [{lo}, {hi}]"));
            }
        }
        let minimum = self.minimum_resolution();
        if self.resolution < minimum {
            return Err(Error::ResolutionTooSmall {
                actual: self.resolution,
                minimum,
            });
        }
        Ok(())
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| toml_error(origin, text, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec is always serializable")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub id: u64,
    pub video: VideoTensor,
    pub label: usize,
    /// True sprite speed (pixels per frame) in each one-second window.
    pub motion_ground_truth: Vec<f64>,
}

/// Everything needed to render one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoParams {
    pub frames: usize,
    pub resolution: usize,
    pub channels: usize,
    pub fps: f64,
    pub shape: SpriteShape,
    pub radius: f64,
    /// Orientation of the sprite outline in radians.
    pub rotation: f64,
    pub sprite_color: [f64; 3],
    pub background_color: [f64; 3],
    /// `(amplitude, kx, ky, phase)` sinusoid terms of the background.
    pub texture: Vec<(f64, f64, f64, f64)>,
    pub start: (f64, f64),
    /// Unit direction of travel.
    pub direction: (f64, f64),
    /// Speed in pixels per frame for each window.
    pub window_speeds: Vec<f64>,
}

fn luminance(c: [f64; 3]) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

fn wrap_delta(d: f64, period: f64) -> f64 {
    d - period * (d / period).round()
}

/// Signed distance to the sprite outline (negative inside).
fn sprite_sdf(shape: SpriteShape, radius: f64, rotation: f64, dx: f64, dy: f64) -> f64 {
    let (s, c) = rotation.sin_cos();
    let x = c * dx + s * dy;
    let y = -s * dx + c * dy;
    match shape {
        SpriteShape::Disc => (x * x + y * y).sqrt() - radius,
        SpriteShape::Square => {
            let h = radius * 0.85;
            let qx = x.abs() - h;
            let qy = y.abs() - h;
            let outside = (qx.max(0.0).powi(2) + qy.max(0.0).powi(2)).sqrt();
            outside + qx.max(qy).min(0.0)
        }
        SpriteShape::Triangle => {
            // equilateral, circumradius `radius`
            triangle_sdf(x, -y, radius * 3f64.sqrt() / 2.0, radius / 2.0)
        }
    }
}

/// Exact distance to an upward equilateral triangle centred at the origin.
fn triangle_sdf(x: f64, y: f64, half_side: f64, inradius: f64) -> f64 {
    let k = 3f64.sqrt();
    let mut px = x.abs() - half_side;
    let mut py = y + inradius;
    if px + k * py > 0.0 {
        let nx = (px - k * py) / 2.0;
        let ny = (-k * px - py) / 2.0;
        px = nx;
        py = ny;
    }
    px -= px.clamp(-2.0 * half_side, 0.0);
    -(px * px + py * py).sqrt() * py.signum()
}

/// Renders a video and returns it with its per-window ground-truth speed.
pub fn render(params: &VideoParams) -> Result<(VideoTensor, Vec<f64>)> {
    let n = params.resolution;
    let ch = params.channels;
    let window = (params.fps.round() as usize).max(1);
    let n_windows = params.frames / window;
    if params.window_speeds.len() < n_windows.max(1) {
        return Err(Error::InvalidArgument(format!(
            "need {} window speeds, got {}",
            n_windows.max(1),
            params.window_speeds.len()
        )));
    }
    let period = n as f64;

    let mut background = vec![0.0f64; n * n * ch];
    for y in 0..n {
        for x in 0..n {
            let mut tex = 0.0;
            for &(a, kx, ky, ph) in &params.texture {
                tex += a * (kx * x as f64 + ky * y as f64 + ph).sin();
            }
            for c in 0..ch {
                let base = if ch == 1 {
                    luminance(params.background_color)
                } else {
                    params.background_color[c]
                };
                background[(y * n + x) * ch + c] = (base + tex).clamp(0.0, 1.0);
            }
        }
    }
    let sprite: Vec<f64> = if ch == 1 {
        vec![luminance(params.sprite_color)]
    } else {
        params.sprite_color.to_vec()
    };

    let mut data = Vec::with_capacity(params.frames * n * n * ch);
    let (mut cx, mut cy) = params.start;
    for t in 0..params.frames {
        for y in 0..n {
            for x in 0..n {
                let dx = wrap_delta(x as f64 + 0.5 - cx, period);
                let dy = wrap_delta(y as f64 + 0.5 - cy, period);
                let d = sprite_sdf(params.shape, params.radius, params.rotation, dx, dy);
                let alpha = (0.5 - d).clamp(0.0, 1.0);
                for c in 0..ch {
                    let bg = background[(y * n + x) * ch + c];
                    data.push((bg * (1.0 - alpha) + sprite[c] * alpha) as f32);
                }
            }
        }
        let w = (t / window).min(params.window_speeds.len() - 1);
        let speed = params.window_speeds[w];
        cx = (cx + params.direction.0 * speed).rem_euclid(period);
        cy = (cy + params.direction.1 * speed).rem_euclid(period);
    }
    let video = VideoTensor::from_clamped(params.frames, n, n, ch, params.fps, data);
    let truth = params.window_speeds[..n_windows].to_vec();
    Ok((video, truth))
}

fn random_color(rng: &mut Rng, [lo, hi]: [f64; 2]) -> [f64; 3] {
    [0, 1, 2].map(|_| rng.uniform_range(lo, hi))
}

/// Draws the nuisance parameters of one video.
pub fn sample_params(spec: &DatasetSpec, label: usize, rng: &mut Rng) -> VideoParams {
    let n = spec.resolution as f64;
    let shape = match spec.kind {
        DatasetKind::Motion => SpriteShape::ALL[rng.below(SpriteShape::ALL.len())],
        DatasetKind::Appearance => spec.shape_classes[label],
    };
    let background_color = random_color(rng, spec.background_range);
    let sprite_color = random_color(rng, spec.sprite_range);
    let texture = (0..3)
        .map(|_| {
            let freq = rng.uniform_range(0.2, 0.8);
            let angle = rng.uniform_range(0.0, std::f64::consts::TAU);
            (
                spec.texture_amplitude / 3.0,
                freq * angle.cos(),
                freq * angle.sin(),
                rng.uniform_range(0.0, std::f64::consts::TAU),
            )
        })
        .collect();
    let direction = match spec.kind {
        DatasetKind::Motion => spec.motion_classes[label].direction(),
        DatasetKind::Appearance => {
            let a = rng.uniform_range(0.0, std::f64::consts::TAU);
            (a.cos(), a.sin())
        }
    };
    let window_speeds = (0..spec.n_windows())
        .map(|_| {
            let speed = rng.uniform_range(spec.speed_min, spec.speed_max);
            if rng.bernoulli(spec.p_static_window) {
                0.0
            } else {
                speed
            }
        })
        .collect();
    VideoParams {
        frames: spec.video_length_frames,
        resolution: spec.resolution,
        channels: spec.channels,
        fps: spec.fps,
        shape,
        radius: rng.uniform_range(spec.radius_min, spec.radius_max),
        rotation: rng.uniform_range(0.0, std::f64::consts::TAU),
        sprite_color,
        background_color,
        texture,
        start: (rng.uniform_range(0.0, n), rng.uniform_range(0.0, n)),
        direction,
        window_speeds,
    }
}

/// Generates sample `id` of the dataset; independent of every other sample.
pub fn generate_one(spec: &DatasetSpec, id: u64) -> Result<SyntheticSample> {
    let mut rng = Rng::derive(spec.seed, &[0x5ca1ab1e, id]);
    let label = rng.below(spec.n_classes());
    let params = sample_params(spec, label, &mut rng);
    let (video, motion_ground_truth) = render(&params)?;
    Ok(SyntheticSample {
        id,
        video,
        label,
        motion_ground_truth,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub samples: Vec<SyntheticSample>,
}

/// Generates the full dataset. Deterministic in `spec` (including its seed).
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let samples = (0..spec.n_videos as u64)
        .map(|id| generate_one(spec, id))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        spec: spec.clone(),
        samples,
    })
}

/// Sample indices of one epoch, split into batches.
pub fn epoch_batches(n: usize, batch_size: usize, shuffle: bool, rng: &mut Rng) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        rng.shuffle(&mut order);
    }
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.spec.n_classes()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// One epoch of batches of samples.
    pub fn iterate<'a>(
        &'a self,
        batch_size: usize,
        shuffle: bool,
        rng: &mut Rng,
    ) -> impl Iterator<Item = Vec<&'a SyntheticSample>> + 'a {
        epoch_batches(self.len(), batch_size, shuffle, rng)
            .into_iter()
            .map(move |b| b.into_iter().map(|i| &self.samples[i]).collect())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            spec: self.spec.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.len());
        for s in &self.samples {
            let file = format!("video_{:05}.bin", s.id);
            let mut bytes = Vec::with_capacity(s.video.data().len() * 4);
            for v in s.video.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            let path = dir.join(&file);
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            entries.push(ManifestEntry {
                id: s.id,
                label: s.label,
                file,
                shape: [
                    s.video.frames(),
                    s.video.height(),
                    s.video.width(),
                    s.video.channels(),
                ],
                motion_ground_truth: s.motion_ground_truth.clone(),
            });
        }
        let manifest = Manifest {
            format_version: MANIFEST_VERSION,
            dtype: "f32".into(),
            byte_order: "little".into(),
            layout: "T,H,W,Ch row-major".into(),
            fps: self.spec.fps,
            class_names: self.spec.class_names(),
            spec: self.spec.clone(),
            videos: entries,
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        if manifest.format_version != MANIFEST_VERSION || manifest.dtype != "f32" {
            return Err(Error::Dataset(format!(
                "unsupported manifest version {} / dtype {}",
                manifest.format_version, manifest.dtype
            )));
        }
        let n_classes = manifest.spec.n_classes();
        let mut samples = Vec::with_capacity(manifest.videos.len());
        for e in manifest.videos {
            if e.label >= n_classes {
                return Err(Error::Dataset(format!("video {} has label {} >= {n_classes}", e.id, e.label)));
            }
            let p = dir.join(&e.file);
            let bytes = fs::read(&p).map_err(|err| Error::io(&p, err))?;
            let [t, h, w, c] = e.shape;
            if bytes.len() != t * h * w * c * 4 {
                return Err(Error::Dataset(format!("{}: expected {} bytes, found {}", p.display(), t * h * w * c * 4, bytes.len())));
            }
            let data = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let video = VideoTensor::new(t, h, w, c, manifest.fps, data)?;
            samples.push(SyntheticSample {
                id: e.id,
                video,
                label: e.label,
                motion_ground_truth: e.motion_ground_truth,
            });
        }
        Ok(Dataset {
            spec: manifest.spec,
            samples,
        })
    }
}

const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    id: u64,
    label: usize,
    file: String,
    shape: [usize; 4],
    motion_ground_truth: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    dtype: String,
    byte_order: String,
    layout: String,
    fps: f64,
    class_names: Vec<String>,
    spec: DatasetSpec,
    videos: Vec<ManifestEntry>,
}

/// Global translation estimate `(vx, vy)` in pixels per frame.
///
/// Least-squares brightness-constancy fit over pixels that change between
/// frames; good enough to tell the four cardinal directions apart.
pub fn estimate_translation(video: &VideoTensor) -> (f64, f64) {
    let (h, w, ch) = (video.height(), video.width(), video.channels());
    let gray = |t: usize, y: usize, x: usize| -> f64 {
        (0..ch).map(|c| video.at(t, y, x, c) as f64).sum::<f64>() / ch as f64
    };
    let (mut sxx, mut sxy, mut syy, mut sxt, mut syt) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for t in 0..video.frames().saturating_sub(1) {
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let it = gray(t + 1, y, x) - gray(t, y, x);
                if it.abs() < 0.02 {
                    continue;
                }
                let avg = |yy: usize, xx: usize| 0.5 * (gray(t, yy, xx) + gray(t + 1, yy, xx));
                let gx = 0.5 * (avg(y, x + 1) - avg(y, x - 1));
                let gy = 0.5 * (avg(y + 1, x) - avg(y - 1, x));
                sxx += gx * gx;
                sxy += gx * gy;
                syy += gy * gy;
                sxt += gx * it;
                syt += gy * it;
            }
        }
    }
    let det = sxx * syy - sxy * sxy;
    if det.abs() < 1e-12 {
        return (0.0, 0.0);
    }
    let vx = -(syy * sxt - sxy * syt) / det;
    let vy = -(sxx * syt - sxy * sxt) / det;
    (vx, vy)
}

/// Index of the motion class whose direction best matches the video.
pub fn nearest_motion_class(video: &VideoTensor, classes: &[MotionPattern]) -> usize {
    let (vx, vy) = estimate_translation(video);
    let speed = (vx * vx + vy * vy).sqrt();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, c) in classes.iter().enumerate() {
        let (dx, dy) = c.direction();
        let score = if *c == MotionPattern::Static {
            0.25 - speed
        } else if speed > 0.0 {
            (vx * dx + vy * dy) / speed
        } else {
            -1.0
        };
        if score > best_score {
            best_score = score;
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(kind: DatasetKind) -> DatasetSpec {
        DatasetSpec {
            kind,
            n_videos: 12,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = DatasetSpec {
            motion_classes: vec![MotionPattern::Up, MotionPattern::Down],
            ..small_spec(DatasetKind::Motion)
        };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = DatasetSpec { seed: 1, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn tiny_resolution_reports_minimum() {
        let spec = DatasetSpec {
            resolution: 8,
            ..DatasetSpec::default()
        };
        match spec.validate() {
            Err(Error::ResolutionTooSmall { actual: 8, minimum }) => assert_eq!(minimum, 14),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let spec = DatasetSpec {
            motion_classes: vec![MotionPattern::Up],
            ..DatasetSpec::default()
        };
        assert!(spec.validate().is_err());
    }

    fn moving_params(direction: MotionPattern, speeds: Vec<f64>) -> VideoParams {
        VideoParams {
            frames: 8 * speeds.len(),
            resolution: 32,
            channels: 3,
            fps: 8.0,
            shape: SpriteShape::Disc,
            radius: 4.0,
            rotation: 0.0,
            sprite_color: [0.9, 0.9, 0.2],
            background_color: [0.1, 0.2, 0.3],
            texture: vec![(0.05, 0.3, 0.1, 0.0)],
            start: (16.0, 16.0),
            direction: direction.direction(),
            window_speeds: speeds,
        }
    }

    #[test]
    fn reversed_up_reads_as_down() {
        let classes = [
            MotionPattern::Up,
            MotionPattern::Down,
            MotionPattern::Left,
            MotionPattern::Right,
        ];
        for (i, c) in classes.iter().enumerate() {
            let (video, _) = render(&moving_params(*c, vec![1.5])).unwrap();
            assert_eq!(nearest_motion_class(&video, &classes), i, "{c:?}");
        }
        let (up, _) = render(&moving_params(MotionPattern::Up, vec![1.5])).unwrap();
        assert_eq!(nearest_motion_class(&up.reversed(), &classes), 1);
    }

    #[test]
    fn generated_samples_follow_their_label() {
        let spec = small_spec(DatasetKind::Motion);
        let data = generate(&DatasetSpec {
            p_static_window: 0.0,
            ..spec
        })
        .unwrap();
        for s in &data.samples {
            let c = nearest_motion_class(&s.video, &data.spec.motion_classes);
            assert_eq!(c, s.label, "sample {}", s.id);
            let r = nearest_motion_class(&s.video.reversed(), &data.spec.motion_classes);
            assert_eq!(r, s.label ^ 1, "reversed sample {}", s.id);
        }
    }

    #[test]
    fn static_window_has_zero_ground_truth() {
        let (video, truth) = render(&moving_params(MotionPattern::Right, vec![0.0, 1.25])).unwrap();
        assert_eq!(truth, vec![0.0, 1.25]);
        // frames inside the static window are identical
        assert_eq!(video.frame(0), video.frame(7));
        assert_ne!(video.frame(8), video.frame(15));
    }

    #[test]
    fn appearance_labels_are_shapes() {
        let spec = small_spec(DatasetKind::Appearance);
        let mut rng = Rng::new(1);
        for label in 0..3 {
            let p = sample_params(&spec, label, &mut rng);
            assert_eq!(p.shape, SpriteShape::ALL[label]);
        }
    }

    #[test]
    fn sdf_signs() {
        for shape in SpriteShape::ALL {
            assert!(sprite_sdf(shape, 4.0, 0.3, 0.0, 0.0) < 0.0, "{shape:?}");
            assert!(sprite_sdf(shape, 4.0, 0.3, 10.0, 0.0) > 0.0, "{shape:?}");
        }
    }

    #[test]
    fn batches_cover_epoch() {
        let mut rng = Rng::new(0);
        let b = epoch_batches(10, 4, false, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        assert_eq!(b.concat(), (0..10).collect::<Vec<_>>());
        let s1 = epoch_batches(10, 4, true, &mut Rng::new(5));
        let s2 = epoch_batches(10, 4, true, &mut Rng::new(5));
        assert_eq!(s1, s2);
        let mut all = s1.concat();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate(&DatasetSpec {
            n_videos: 3,
            ..DatasetSpec::default()
        })
        .unwrap();
        data.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back, data);
    }
}
