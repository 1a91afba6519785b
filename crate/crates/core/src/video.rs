//! Raw clips and clip addressing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frames stored row-major as `[T, H, W, Ch]`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor {
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    fps: f64,
    data: Vec<f32>,
}

impl VideoTensor {
    pub fn new(
        frames: usize,
        height: usize,
        width: usize,
        channels: usize,
        fps: f64,
        data: Vec<f32>,
    ) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidVideo(format!(
                "empty geometry {frames}x{height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidVideo(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::InvalidVideo(format!("fps must be positive, got {fps}")));
        }
        let expected = frames * height * width * channels;
        if data.len() != expected {
            return Err(Error::shape("video data", expected, data.len()));
        }
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidVideo(format!(
                "value {} at element {i} outside [0, 1]",
                data[i]
            )));
        }
        Ok(Self {
            frames,
            height,
            width,
            channels,
            fps,
            data,
        })
    }

    pub fn zeros(frames: usize, height: usize, width: usize, channels: usize, fps: f64) -> Self {
        Self::new(
            frames,
            height,
            width,
            channels,
            fps,
            vec![0.0; frames * height * width * channels],
        )
        .expect("valid geometry")
    }

    /// Builds from data already known to satisfy the invariants, clamping
    /// tiny excursions produced by interpolation.
    pub(crate) fn from_clamped(
        frames: usize,
        height: usize,
        width: usize,
        channels: usize,
        fps: f64,
        mut data: Vec<f32>,
    ) -> Self {
        debug_assert_eq!(data.len(), frames * height * width * channels);
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Self {
            frames,
            height,
            width,
            channels,
            fps,
            data,
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f32] {
        let n = self.frame_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    #[inline]
    pub fn at(&self, t: usize, y: usize, x: usize, c: usize) -> f32 {
        self.data[((t * self.height + y) * self.width + x) * self.channels + c]
    }

    /// Writes a value, clamped to `[0, 1]`.
    pub fn set(&mut self, t: usize, y: usize, x: usize, c: usize, v: f32) {
        let i = ((t * self.height + y) * self.width + x) * self.channels + c;
        self.data[i] = v.clamp(0.0, 1.0);
    }

    /// Frames `start, start + stride, ...` (`length` of them).
    pub fn subclip(&self, start: usize, length: usize, stride: usize) -> Result<Self> {
        if length == 0 || stride == 0 {
            return Err(Error::InvalidArgument("clip length and stride must be >= 1".into()));
        }
        let last = start + (length - 1) * stride;
        if last >= self.frames {
            return Err(Error::InvalidArgument(format!(
                "clip ending at frame {last} exceeds video of {} frames",
                self.frames
            )));
        }
        let n = self.frame_len();
        let mut data = Vec::with_capacity(length * n);
        for i in 0..length {
            data.extend_from_slice(self.frame(start + i * stride));
        }
        Ok(Self {
            frames: length,
            data,
            ..*self
        })
    }

    /// Same frames in reverse temporal order.
    pub fn reversed(&self) -> Self {
        let n = self.frame_len();
        let mut data = Vec::with_capacity(self.data.len());
        for t in (0..self.frames).rev() {
            data.extend_from_slice(&self.data[t * n..(t + 1) * n]);
        }
        Self { data, ..*self }
    }

    /// Frames regrouped by an arbitrary source-index list.
    pub fn reorder(&self, order: &[usize]) -> Self {
        let n = self.frame_len();
        let mut data = Vec::with_capacity(order.len() * n);
        for &t in order {
            data.extend_from_slice(self.frame(t));
        }
        Self {
            frames: order.len(),
            data,
            ..*self
        }
    }

    /// Number of complete windows of `window` frames.
    pub fn n_windows(&self, window: usize) -> usize {
        if window == 0 {
            0
        } else {
            self.frames / window
        }
    }

    /// Frames per one-second window (at least one).
    pub fn window_frames(&self) -> usize {
        (self.fps.round() as usize).max(1)
    }
}

/// Location of a clip inside a source video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub video_id: u64,
    pub start_frame: usize,
    pub length: usize,
    pub stride: usize,
}

impl ClipSpec {
    pub fn new(video_id: u64, start_frame: usize) -> Self {
        Self {
            video_id,
            start_frame,
            length: 16,
            stride: 4,
        }
    }

    /// Frames covered from first to last sampled frame.
    pub fn span(&self) -> usize {
        (self.length.max(1) - 1) * self.stride + 1
    }

    pub fn fits(&self, source_frames: usize) -> bool {
        self.length >= 1 && self.start_frame + self.span() <= source_frames
    }

    pub fn extract(&self, video: &VideoTensor) -> Result<VideoTensor> {
        if !self.fits(video.frames()) {
            return Err(Error::InvalidArgument(format!(
                "clip {self:?} does not fit a video of {} frames",
                video.frames()
            )));
        }
        video.subclip(self.start_frame, self.length, self.stride)
    }
}
