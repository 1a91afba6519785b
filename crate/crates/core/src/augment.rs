//! Temporally consistent spatial augmentation and frame-group shuffling.

use std::collections::HashSet;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::video::VideoTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentPolicy {
    /// Output side length; crops are resized to `crop_size x crop_size`.
    pub crop_size: usize,
    /// Range of the crop-box area as a fraction of the frame area.
    pub crop_scale: (f64, f64),
    pub p_gray: f64,
    pub p_flip: f64,
    pub p_blur: f64,
    pub p_color: f64,
    /// Jitter ratio for brightness, contrast and saturation.
    pub color_jitter: f64,
    pub temporal_jitter_frames: usize,
}

impl AugmentPolicy {
    pub fn from_config(cfg: &Config) -> Self {
        Self {
            crop_size: cfg.crop_size,
            crop_scale: (cfg.crop_scale_min, cfg.crop_scale_max),
            p_gray: cfg.p_gray,
            p_flip: cfg.p_flip,
            p_blur: cfg.p_blur,
            p_color: cfg.p_color,
            color_jitter: cfg.color_jitter,
            temporal_jitter_frames: cfg.temporal_jitter_frames,
        }
    }

    /// Full-frame crop and no photometric change.
    pub fn identity(crop_size: usize) -> Self {
        Self {
            crop_size,
            crop_scale: (1.0, 1.0),
            p_gray: 0.0,
            p_flip: 0.0,
            p_blur: 0.0,
            p_color: 0.0,
            color_jitter: 0.0,
            temporal_jitter_frames: 0,
        }
    }
}

/// One draw of every augmentation parameter; shared by all frames.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentDraw {
    /// Crop box `(y0, x0, side)` in source pixels.
    pub crop: (f64, f64, f64),
    pub flip: bool,
    /// `(brightness, contrast, saturation)` factors when color jitter fires.
    pub color: Option<(f64, f64, f64)>,
    pub gray: bool,
    /// Gaussian sigma when blur fires.
    pub blur_sigma: Option<f64>,
}

impl AugmentDraw {
    pub fn sample(policy: &AugmentPolicy, height: usize, width: usize, rng: &mut Rng) -> Self {
        let scale = rng.uniform_range(policy.crop_scale.0, policy.crop_scale.1);
        let max_side = height.min(width) as f64;
        let side = (scale * (height * width) as f64).sqrt().min(max_side);
        let y0 = rng.uniform() * (height as f64 - side);
        let x0 = rng.uniform() * (width as f64 - side);
        let flip = rng.bernoulli(policy.p_flip);
        let j = policy.color_jitter;
        let fire_color = rng.bernoulli(policy.p_color);
        let factors = (
            rng.uniform_range(1.0 - j, 1.0 + j),
            rng.uniform_range(1.0 - j, 1.0 + j),
            rng.uniform_range(1.0 - j, 1.0 + j),
        );
        let gray = rng.bernoulli(policy.p_gray);
        let fire_blur = rng.bernoulli(policy.p_blur);
        let sigma = rng.uniform_range(0.1, 2.0);
        Self {
            crop: (y0, x0, side),
            flip,
            color: fire_color.then_some(factors),
            gray,
            blur_sigma: fire_blur.then_some(sigma),
        }
    }
}

fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let mut size = (4.0 * sigma).ceil() as usize;
    if size % 2 == 0 {
        size += 1;
    }
    let half = (size / 2) as isize;
    let w: Vec<f64> = (-half..=half)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| (x / z) as f32).collect()
}

fn blur_frame(frame: &mut [f32], h: usize, w: usize, ch: usize, kernel: &[f32]) {
    let half = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0f32; frame.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut s = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    let xx = (x as isize + k as isize - half).clamp(0, w as isize - 1) as usize;
                    s += kv * frame[(y * w + xx) * ch + c];
                }
                tmp[(y * w + x) * ch + c] = s;
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut s = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    let yy = (y as isize + k as isize - half).clamp(0, h as isize - 1) as usize;
                    s += kv * tmp[(yy * w + x) * ch + c];
                }
                frame[(y * w + x) * ch + c] = s;
            }
        }
    }
}

/// Applies a given draw to every frame of `clip`.
pub fn apply_draw(clip: &VideoTensor, crop_size: usize, draw: &AugmentDraw) -> Result<VideoTensor> {
    let (t_len, h, w, ch) = (clip.frames(), clip.height(), clip.width(), clip.channels());
    if crop_size > h || crop_size > w || crop_size == 0 {
        return Err(Error::CropTooLarge {
            crop: crop_size,
            height: h,
            width: w,
        });
    }
    let n = crop_size;
    let (y0, x0, side) = draw.crop;
    let step = side / n as f64;
    // bilinear source coordinates, shared by all frames
    let coord = |i: usize, origin: f64, limit: usize| -> (usize, usize, f32) {
        let s = (origin + (i as f64 + 0.5) * step - 0.5).clamp(0.0, (limit - 1) as f64);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(limit - 1);
        (lo, hi, (s - lo as f64) as f32)
    };
    let ys: Vec<_> = (0..n).map(|i| coord(i, y0, h)).collect();
    let xs: Vec<_> = (0..n)
        .map(|i| coord(if draw.flip { n - 1 - i } else { i }, x0, w))
        .collect();

    let mut out = vec![0.0f32; t_len * n * n * ch];
    for t in 0..t_len {
        let src = clip.frame(t);
        let dst = &mut out[t * n * n * ch..(t + 1) * n * n * ch];
        for (oy, &(ylo, yhi, fy)) in ys.iter().enumerate() {
            for (ox, &(xlo, xhi, fx)) in xs.iter().enumerate() {
                for c in 0..ch {
                    let p = |yy: usize, xx: usize| src[(yy * w + xx) * ch + c];
                    let top = if fx == 0.0 { p(ylo, xlo) } else { p(ylo, xlo) * (1.0 - fx) + p(ylo, xhi) * fx };
                    let v = if fy == 0.0 {
                        top
                    } else {
                        let bot = if fx == 0.0 { p(yhi, xlo) } else { p(yhi, xlo) * (1.0 - fx) + p(yhi, xhi) * fx };
                        top * (1.0 - fy) + bot * fy
                    };
                    dst[(oy * n + ox) * ch + c] = v;
                }
            }
        }
    }

    if let Some((bright, contrast, sat)) = draw.color {
        let (b, c, s) = (bright as f32, contrast as f32, sat as f32);
        for v in out.iter_mut() {
            *v = (*v * b).clamp(0.0, 1.0);
        }
        // contrast pivots on the clip-wide mean so all frames move together
        let mean = if ch == 3 {
            out.chunks_exact(3).map(|p| luma(p[0], p[1], p[2]) as f64).sum::<f64>() / (out.len() / 3) as f64
        } else {
            out.iter().map(|&v| v as f64).sum::<f64>() / out.len() as f64
        } as f32;
        for v in out.iter_mut() {
            *v = (mean + c * (*v - mean)).clamp(0.0, 1.0);
        }
        if ch == 3 {
            for p in out.chunks_exact_mut(3) {
                let g = luma(p[0], p[1], p[2]);
                for v in p.iter_mut() {
                    *v = (g + s * (*v - g)).clamp(0.0, 1.0);
                }
            }
        }
    }
    if draw.gray && ch == 3 {
        for p in out.chunks_exact_mut(3) {
            let g = luma(p[0], p[1], p[2]);
            p.fill(g);
        }
    }
    if let Some(sigma) = draw.blur_sigma {
        let kernel = gaussian_kernel(sigma);
        for t in 0..t_len {
            blur_frame(&mut out[t * n * n * ch..(t + 1) * n * n * ch], n, n, ch, &kernel);
        }
    }
    Ok(VideoTensor::from_clamped(t_len, n, n, ch, clip.fps(), out))
}

/// Draws one set of augmentation parameters and applies it to every frame.
pub fn apply_policy(clip: &VideoTensor, policy: &AugmentPolicy, rng: &mut Rng) -> Result<VideoTensor> {
    if policy.crop_size > clip.height() || policy.crop_size > clip.width() {
        return Err(Error::CropTooLarge {
            crop: policy.crop_size,
            height: clip.height(),
            width: clip.width(),
        });
    }
    let draw = AugmentDraw::sample(policy, clip.height(), clip.width(), rng);
    apply_draw(clip, policy.crop_size, &draw)
}

/// Start frame shifted by up to `jitter` frames, clamped to `[0, max_start]`.
pub fn jittered_start(base: usize, jitter: usize, max_start: usize, rng: &mut Rng) -> usize {
    let offset = if jitter == 0 {
        0
    } else {
        rng.int_inclusive(-(jitter as i64), jitter as i64)
    };
    (base as i64 + offset).clamp(0, max_start as i64) as usize
}

/// Reordering of consecutive frame groups.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GroupPermutation {
    group_size: usize,
    order: Vec<usize>,
}

impl GroupPermutation {
    pub fn new(group_size: usize, order: Vec<usize>) -> Result<Self> {
        if group_size == 0 {
            return Err(Error::InvalidArgument("group size must be >= 1".into()));
        }
        let mut seen = vec![false; order.len()];
        for &o in &order {
            if o >= order.len() || std::mem::replace(&mut seen[o], true) {
                return Err(Error::InvalidArgument(format!("{order:?} is not a permutation")));
            }
        }
        Ok(Self { group_size, order })
    }

    pub fn identity(group_size: usize, n_groups: usize) -> Self {
        Self {
            group_size,
            order: (0..n_groups).collect(),
        }
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn n_groups(&self) -> usize {
        self.order.len()
    }

    pub fn is_identity(&self) -> bool {
        self.order.iter().enumerate().all(|(i, &o)| i == o)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.order.len()];
        for (j, &o) in self.order.iter().enumerate() {
            inv[o] = j;
        }
        Self {
            group_size: self.group_size,
            order: inv,
        }
    }

    /// Source frame index for every output frame.
    pub fn frame_order(&self) -> Vec<usize> {
        self.order
            .iter()
            .flat_map(|&g| g * self.group_size..(g + 1) * self.group_size)
            .collect()
    }
}

/// Output group `j` is input group `perm.order[j]`.
pub fn group_shuffle(clip: &VideoTensor, perm: &GroupPermutation) -> Result<VideoTensor> {
    let t = clip.frames();
    if t % perm.group_size != 0 {
        return Err(Error::GroupDivisibility {
            group: perm.group_size,
            frames: t,
        });
    }
    if t / perm.group_size != perm.order.len() {
        return Err(Error::shape("group permutation", t / perm.group_size, perm.order.len()));
    }
    Ok(clip.reorder(&perm.frame_order()))
}

fn factorial(n: usize) -> u128 {
    (1..=n as u128).try_fold(1u128, |acc, k| acc.checked_mul(k)).unwrap_or(u128::MAX)
}

/// `n` distinct non-identity permutations of `n_groups` groups, uniformly
/// without replacement.
pub fn sample_negative_perms(
    group_size: usize,
    n_groups: usize,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<GroupPermutation>> {
    let available = factorial(n_groups).saturating_sub(1);
    if n as u128 > available {
        return Err(Error::TooManyPermutations {
            requested: n,
            available,
        });
    }
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut order: Vec<usize> = (0..n_groups).collect();
        rng.shuffle(&mut order);
        let perm = GroupPermutation { group_size, order };
        if perm.is_identity() || !seen.insert(perm.order.clone()) {
            continue;
        }
        out.push(perm);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_clip(t: usize, n: usize, ch: usize, seed: u64) -> VideoTensor {
        let mut rng = Rng::new(seed);
        let data = (0..t * n * n * ch).map(|_| rng.uniform() as f32).collect();
        VideoTensor::new(t, n, n, ch, 8.0, data).unwrap()
    }

    fn numbered_clip(t: usize) -> VideoTensor {
        let data = (0..t).map(|i| i as f32 / t as f32).collect();
        VideoTensor::new(t, 1, 1, 1, 8.0, data).unwrap()
    }

    #[test]
    fn identity_policy_is_exact() {
        let clip = random_clip(4, 8, 3, 1);
        let out = apply_policy(&clip, &AugmentPolicy::identity(8), &mut Rng::new(0)).unwrap();
        assert_eq!(out, clip);
    }

    #[test]
    fn grayscale_equalizes_channels() {
        let clip = random_clip(2, 8, 3, 2);
        let policy = AugmentPolicy {
            p_gray: 1.0,
            ..AugmentPolicy::identity(6)
        };
        let out = apply_policy(&clip, &policy, &mut Rng::new(3)).unwrap();
        assert_eq!((out.height(), out.frames(), out.channels()), (6, 2, 3));
        for p in out.data().chunks_exact(3) {
            assert_eq!(p[0], p[1]);
            assert_eq!(p[1], p[2]);
        }
    }

    #[test]
    fn identical_forks_give_identical_outputs() {
        let clip = random_clip(4, 12, 3, 4);
        let policy = AugmentPolicy::from_config(&Config {
            crop_size: 10,
            ..Config::default()
        });
        let mut parent = Rng::new(9);
        let mut a = parent.clone().fork();
        let mut b = parent.fork();
        assert_eq!(
            apply_policy(&clip, &policy, &mut a).unwrap(),
            apply_policy(&clip, &policy, &mut b).unwrap()
        );
    }

    #[test]
    fn oversized_crop_is_an_error() {
        let clip = random_clip(2, 8, 1, 0);
        assert!(matches!(
            apply_policy(&clip, &AugmentPolicy::identity(9), &mut Rng::new(0)),
            Err(Error::CropTooLarge { .. })
        ));
    }

    #[test]
    fn full_policy_preserves_time_and_channels() {
        let clip = random_clip(8, 32, 3, 5);
        let policy = AugmentPolicy::from_config(&Config::default());
        let mut rng = Rng::new(1);
        for _ in 0..20 {
            let out = apply_policy(&clip, &policy, &mut rng).unwrap();
            assert_eq!((out.frames(), out.height(), out.width(), out.channels()), (8, 32, 32, 3));
            assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn flip_mirrors_columns() {
        let clip = random_clip(1, 4, 1, 6);
        let draw = AugmentDraw {
            crop: (0.0, 0.0, 4.0),
            flip: true,
            color: None,
            gray: false,
            blur_sigma: None,
        };
        let out = apply_draw(&clip, 4, &draw).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(out.at(0, y, x, 0), clip.at(0, y, 3 - x, 0));
            }
        }
    }

    #[test]
    fn blur_kernel_is_normalized_and_odd() {
        for sigma in [0.1, 0.7, 1.3, 2.0] {
            let k = gaussian_kernel(sigma);
            assert_eq!(k.len() % 2, 1);
            assert!(k.len() as f64 >= 4.0 * sigma);
            assert!((k.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn shuffle_definition() {
        let clip = numbered_clip(4);
        let perm = GroupPermutation::new(2, vec![1, 0]).unwrap();
        let out = group_shuffle(&clip, &perm).unwrap();
        assert_eq!(out, clip.reorder(&[2, 3, 0, 1]));
        let id = GroupPermutation::identity(2, 2);
        assert_eq!(group_shuffle(&clip, &id).unwrap(), clip);
    }

    #[test]
    fn shuffle_rejects_bad_group() {
        let clip = numbered_clip(5);
        let perm = GroupPermutation::new(2, vec![1, 0]).unwrap();
        assert!(matches!(group_shuffle(&clip, &perm), Err(Error::GroupDivisibility { .. })));
        assert!(GroupPermutation::new(2, vec![0, 0]).is_err());
    }

    #[test]
    fn perm_then_inverse_is_identity() {
        let clip = random_clip(8, 4, 3, 7);
        let mut rng = Rng::new(11);
        for _ in 0..50 {
            let mut order: Vec<usize> = (0..4).collect();
            rng.shuffle(&mut order);
            let perm = GroupPermutation::new(2, order).unwrap();
            let back = group_shuffle(&group_shuffle(&clip, &perm).unwrap(), &perm.inverse()).unwrap();
            assert_eq!(back, clip);
        }
    }

    #[test]
    fn negative_perms_of_two_groups() {
        let p = sample_negative_perms(2, 2, 1, &mut Rng::new(0)).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].order(), &[1, 0]);
    }

    #[test]
    fn negative_perms_enumeration_bounds() {
        let mut rng = Rng::new(0);
        let p = sample_negative_perms(2, 4, 12, &mut rng).unwrap();
        let distinct: HashSet<_> = p.iter().map(|x| x.order().to_vec()).collect();
        assert_eq!(distinct.len(), 12);
        assert!(p.iter().all(|x| !x.is_identity()));
        let all = sample_negative_perms(2, 4, 23, &mut rng).unwrap();
        assert_eq!(all.len(), 23);
        match sample_negative_perms(2, 4, 24, &mut rng) {
            Err(Error::TooManyPermutations { requested: 24, available: 23 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn jitter_stays_in_range() {
        let mut rng = Rng::new(0);
        for _ in 0..200 {
            let s = jittered_start(2, 3, 4, &mut rng);
            assert!(s <= 4);
        }
        assert_eq!(jittered_start(5, 0, 10, &mut rng), 5);
    }
}
