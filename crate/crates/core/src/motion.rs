//! Motion-strength profiling and probabilistic targeted window sampling.
//!
//! A video is scored per one-second window: frame differences stand in for
//! flow magnitude, a Sobel filter turns them into motion edges, each frame
//! is scored by the median of its `top_k` strongest edge pixels, and a
//! window's amplitude is the median frame score inside it. Window
//! probabilities are `softmax(m / beta)`.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::video::VideoTensor;

/// Per-pixel motion magnitudes `[T - 1, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionField {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl MotionField {
    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[t * n..(t + 1) * n]
    }
}

/// Channel-mean absolute difference between consecutive frames.
pub fn motion_magnitude_field(video: &VideoTensor) -> Result<MotionField> {
    if video.frames() < 2 {
        return Err(Error::NeedTwoFrames);
    }
    let (h, w, ch) = (video.height(), video.width(), video.channels());
    let mut data = Vec::with_capacity((video.frames() - 1) * h * w);
    for t in 0..video.frames() - 1 {
        let a = video.frame(t);
        let b = video.frame(t + 1);
        for p in 0..h * w {
            let mut s = 0.0f64;
            for c in 0..ch {
                s += (b[p * ch + c] as f64 - a[p * ch + c] as f64).abs();
            }
            data.push(s / ch as f64);
        }
    }
    Ok(MotionField {
        frames: video.frames() - 1,
        height: h,
        width: w,
        data,
    })
}

/// Sobel gradient magnitude with replicated borders.
pub fn edge_map(field: &[f64], height: usize, width: usize) -> Result<Vec<f64>> {
    if height < 3 || width < 3 {
        return Err(Error::FieldTooSmall {
            h: height,
            w: width,
        });
    }
    if field.len() != height * width {
        return Err(Error::shape("edge_map field", height * width, field.len()));
    }
    let at = |y: isize, x: isize| -> f64 {
        let yy = y.clamp(0, height as isize - 1) as usize;
        let xx = x.clamp(0, width as isize - 1) as usize;
        field[yy * width + xx]
    };
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height as isize {
        for x in 0..width as isize {
            let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    Ok(out)
}

/// Median; the mean of the two central values for even counts.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Values of the `k` largest entries; ties go to the lower pixel index.
pub fn top_k_values(values: &[f64], k: usize) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.into_iter().map(|i| values[i]).collect()
}

/// Edge pixels per frame: 4000 at 224 x 224, scaled by area.
pub fn default_top_k(height: usize, width: usize) -> usize {
    ((4000.0 * (height * width) as f64 / (224.0 * 224.0)).round() as usize).max(1)
}

/// Softmax of `m / beta`; `beta = inf` gives the uniform distribution.
pub fn window_probabilities(amplitudes: &[f64], beta: f64) -> Vec<f64> {
    let n = amplitudes.len();
    if beta.is_infinite() {
        return vec![1.0 / n as f64; n];
    }
    // centre before scaling so a shift that is exact in the inputs cancels exactly
    let max = amplitudes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = amplitudes.iter().map(|m| ((m - max) / beta).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionProfile {
    /// Motion amplitude per one-second window.
    pub amplitudes: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub beta_used: f64,
    pub top_k_used: usize,
    pub warnings: Vec<String>,
}

impl MotionProfile {
    pub fn n_windows(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn uniform(n_windows: usize) -> Self {
        Self {
            amplitudes: vec![0.0; n_windows],
            probabilities: vec![1.0 / n_windows as f64; n_windows],
            beta_used: f64::INFINITY,
            top_k_used: 0,
            warnings: Vec::new(),
        }
    }

    pub fn from_amplitudes(amplitudes: Vec<f64>, beta: f64) -> Self {
        let probabilities = window_probabilities(&amplitudes, beta);
        Self {
            amplitudes,
            probabilities,
            beta_used: beta,
            top_k_used: 0,
            warnings: Vec::new(),
        }
    }

    /// Median window amplitude, used as a per-video motion score.
    pub fn motion_score(&self) -> f64 {
        median(&self.amplitudes)
    }
}

/// Scores every full window of `video`.
pub fn profile(video: &VideoTensor, top_k: usize, beta: f64) -> Result<MotionProfile> {
    let window = video.window_frames();
    let n_windows = video.n_windows(window);
    if n_windows == 0 {
        return Err(Error::NoFullWindow {
            frames: video.frames(),
            window,
        });
    }
    if top_k == 0 {
        return Err(Error::InvalidArgument("top_k must be >= 1".into()));
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be > 0, got {beta}")));
    }
    let field = motion_magnitude_field(video)?;
    let (h, w) = (field.height, field.width);
    let mut warnings = Vec::new();
    let k = if top_k > h * w {
        warnings.push(format!("top_k {top_k} exceeds {} pixels; clamped", h * w));
        h * w
    } else {
        top_k
    };
    let frame_scores = (0..field.frames)
        .map(|t| {
            let edges = edge_map(field.frame(t), h, w)?;
            Ok(median(&top_k_values(&edges, k)))
        })
        .collect::<Result<Vec<f64>>>()?;
    let amplitudes = (0..n_windows)
        .map(|i| {
            // differences whose two frames both fall inside window i
            let lo = i * window;
            let hi = ((i + 1) * window - 1).min(field.frames);
            if lo < hi {
                median(&frame_scores[lo..hi])
            } else {
                frame_scores[lo.min(field.frames - 1)]
            }
        })
        .collect::<Vec<_>>();
    let probabilities = window_probabilities(&amplitudes, beta);
    Ok(MotionProfile {
        amplitudes,
        probabilities,
        beta_used: beta,
        top_k_used: k,
        warnings,
    })
}

/// Draws a window index with probability `p_i`.
pub fn sample_window(profile: &MotionProfile, rng: &mut Rng) -> usize {
    let n = profile.probabilities.len();
    if n <= 1 {
        return 0;
    }
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, p) in profile.probabilities.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    n - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn video_from_frames(frames: &[Vec<f32>], h: usize, w: usize, fps: f64) -> VideoTensor {
        VideoTensor::new(frames.len(), h, w, 1, fps, frames.concat()).unwrap()
    }

    #[test]
    fn static_video_has_zero_field() {
        let v = VideoTensor::new(3, 4, 4, 3, 8.0, vec![0.3; 3 * 48]).unwrap();
        let f = motion_magnitude_field(&v).unwrap();
        assert_eq!(f.frames, 2);
        assert!(f.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_pixel_flip() {
        let mut a = vec![0.0f32; 9];
        let mut b = a.clone();
        b[4] = 1.0;
        a[0] = 0.0;
        let v = video_from_frames(&[a, b], 3, 3, 8.0);
        let f = motion_magnitude_field(&v).unwrap();
        let mut expected = vec![0.0; 9];
        expected[4] = 1.0;
        assert_eq!(f.data, expected);
    }

    #[test]
    fn ramp_differences() {
        let v = video_from_frames(&[vec![0.0; 4], vec![0.25; 4], vec![0.75; 4]], 2, 2, 8.0);
        let f = motion_magnitude_field(&v).unwrap();
        assert_eq!(f.frame(0), &[0.25; 4]);
        assert_eq!(f.frame(1), &[0.5; 4]);
    }

    #[test]
    fn one_frame_is_an_error() {
        let v = VideoTensor::zeros(1, 4, 4, 1, 8.0);
        assert!(matches!(motion_magnitude_field(&v), Err(Error::NeedTwoFrames)));
    }

    #[test]
    fn sobel_constant_and_step() {
        assert!(edge_map(&[0.7; 25], 5, 5).unwrap().iter().all(|&x| x == 0.0));
        // columns 0..2 are 0, columns 2..5 are 1
        let field: Vec<f64> = (0..25).map(|i| if i % 5 >= 2 { 1.0 } else { 0.0 }).collect();
        let e = edge_map(&field, 5, 5).unwrap();
        for y in 0..5 {
            assert_eq!(e[y * 5 + 1], 4.0);
            assert_eq!(e[y * 5 + 2], 4.0);
            assert_eq!(e[y * 5], 0.0);
            assert_eq!(e[y * 5 + 4], 0.0);
        }
        assert!(matches!(edge_map(&[0.0; 4], 2, 2), Err(Error::FieldTooSmall { .. })));
    }

    #[test]
    fn sobel_commutes_with_rotation() {
        let n = 6;
        let field: Vec<f64> = (0..n * n).map(|i| ((i * 7919) % 13) as f64 / 13.0).collect();
        // rotate 90 degrees clockwise: out[y][x] = in[n-1-x][y]
        let rot = |f: &[f64]| -> Vec<f64> {
            (0..n * n)
                .map(|i| {
                    let (y, x) = (i / n, i % n);
                    f[(n - 1 - x) * n + y]
                })
                .collect()
        };
        let a = rot(&edge_map(&field, n, n).unwrap());
        let b = edge_map(&rot(&field), n, n).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_oracle_values() {
        let p = window_probabilities(&[1.0, 2.0, 3.0], 5.0);
        let z = 0.2f64.exp() + 0.4f64.exp() + 0.6f64.exp();
        let oracle = [0.2f64.exp() / z, 0.4f64.exp() / z, 0.6f64.exp() / z];
        for (a, b) in p.iter().zip(oracle) {
            assert!((a - b).abs() < 1e-15);
        }
        for (a, b) in p.iter().zip([0.2693, 0.3290, 0.4017]) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
        assert_eq!(window_probabilities(&[1.0, 5.0], f64::INFINITY), vec![0.5, 0.5]);
    }

    #[test]
    fn static_video_profile_is_uniform() {
        let v = VideoTensor::new(16, 4, 4, 1, 8.0, vec![0.5; 256]).unwrap();
        let p = profile(&v, 3, 5.0).unwrap();
        assert_eq!(p.amplitudes, vec![0.0, 0.0]);
        assert_eq!(p.probabilities, vec![0.5, 0.5]);
    }

    #[test]
    fn moving_window_is_preferred() {
        let (h, w) = (6, 6);
        let mut frames = vec![vec![0.0f32; h * w]; 8];
        for t in 0..8 {
            let mut f = vec![0.0f32; h * w];
            f[(t % 6) * w + 2] = 1.0;
            frames.push(f);
        }
        let v = video_from_frames(&frames, h, w, 8.0);
        let p = profile(&v, 4, 5.0).unwrap();
        assert_eq!(p.amplitudes[0], 0.0);
        assert!(p.amplitudes[1] > 0.0);
        assert!(p.probabilities[1] > p.probabilities[0]);
    }

    #[test]
    fn oversized_top_k_is_clamped_with_warning() {
        let v = VideoTensor::zeros(8, 4, 4, 1, 8.0);
        let p = profile(&v, 1000, 5.0).unwrap();
        assert_eq!(p.top_k_used, 16);
        assert_eq!(p.warnings.len(), 1);
    }

    #[test]
    fn short_video_errors() {
        let v = VideoTensor::zeros(4, 4, 4, 1, 8.0);
        assert!(matches!(profile(&v, 1, 5.0), Err(Error::NoFullWindow { .. })));
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn default_top_k_scales_with_area() {
        assert_eq!(default_top_k(224, 224), 4000);
        assert_eq!(default_top_k(32, 32), 82);
        assert_eq!(default_top_k(2, 2), 1);
    }

    #[test]
    fn single_window_always_zero() {
        let p = MotionProfile::from_amplitudes(vec![3.0], 5.0);
        let mut rng = Rng::new(0);
        assert!((0..100).all(|_| sample_window(&p, &mut rng) == 0));
    }
}
