//! Video decoding, temporal sampling and frame preprocessing.
//!
//! A clip is sampled at equal source-time intervals of `1 / target_fps`
//! seconds starting at `t = 0`, up to `max_duration_s` seconds and
//! `max_frames` frames. Each target instant takes the source frame with the
//! nearest timestamp, so variable-frame-rate sources are handled by time,
//! not by index. Sources shorter than the budget yield all their frames.
//!
//! Preprocessing is a symmetric center crop that removes 10% of the longer
//! dimension (the shorter one is untouched), a bilinear resize to 224x224,
//! and a JPEG round trip at quality 95.

pub mod avi;
mod ffmpeg;
mod source;

use std::io::Cursor;
use std::path::Path;

use image::codecs::jpeg::JpegEncoder;
use image::imageops::FilterType;
use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{D3Error, Result};

pub use source::{detect_source, select_indices, SourceKind};

pub const FRAME_SIZE: u32 = 224;
pub const CROP_FRACTION: f64 = 0.1;
pub const PREPROCESS_JPEG_QUALITY: u8 = 95;

/// Name of the optional sidecar in a frame directory carrying `{"fps": ...}`.
pub const FRAME_DIR_META: &str = "frames.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingPolicy {
    pub target_fps: f64,
    pub max_duration_s: f64,
    pub max_frames: usize,
    /// Frame rate assumed for frame directories without a sidecar.
    /// Defaults to `target_fps`, i.e. every file is one sampling step.
    pub frame_dir_fps: Option<f64>,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        Self::new(8.0, 2.0)
    }
}

impl SamplingPolicy {
    pub fn new(target_fps: f64, max_duration_s: f64) -> Self {
        Self {
            target_fps,
            max_duration_s,
            max_frames: (target_fps * max_duration_s).floor() as usize,
            frame_dir_fps: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(D3Error::ConfigError(format!("{name} must be positive, got {v}")))
            }
        };
        positive("target_fps", self.target_fps)?;
        positive("max_duration_s", self.max_duration_s)?;
        if let Some(fps) = self.frame_dir_fps {
            positive("frame_dir_fps", fps)?;
        }
        if self.max_frames == 0 {
            return Err(D3Error::ConfigError("max_frames must be at least 1".into()));
        }
        Ok(())
    }
}

/// Sampled frames of one clip, in temporal order.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<RgbImage>,
    source_fps: f64,
    sample_dt: f64,
    source_indices: Option<Vec<usize>>,
}

impl FrameSequence {
    pub fn new(frames: Vec<RgbImage>, source_fps: f64) -> Result<Self> {
        if frames.is_empty() {
            return Err(D3Error::TooFewFrames { got: 0, min: 1 });
        }
        Ok(Self {
            frames,
            source_fps,
            sample_dt: 1.0,
            source_indices: None,
        })
    }

    fn with_indices(mut self, indices: Vec<usize>) -> Self {
        self.source_indices = Some(indices);
        self
    }

    pub fn frames(&self) -> &[RgbImage] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<RgbImage> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn source_fps(&self) -> f64 {
        self.source_fps
    }

    /// Sampling interval in frame units; always 1.
    pub fn sample_dt(&self) -> f64 {
        self.sample_dt
    }

    /// Source frame index of every sampled frame, when the decoder knows it.
    pub fn source_indices(&self) -> Option<&[usize]> {
        self.source_indices.as_deref()
    }

    /// Same timing metadata, new pixels (one output per input frame).
    pub fn map_frames<F>(&self, f: F) -> Result<Self>
    where
        F: FnMut(&RgbImage) -> Result<RgbImage>,
    {
        let frames = self.frames.iter().map(f).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            frames,
            ..self.clone_meta()
        })
    }

    fn clone_meta(&self) -> Self {
        Self {
            frames: Vec::new(),
            source_fps: self.source_fps,
            sample_dt: self.sample_dt,
            source_indices: self.source_indices.clone(),
        }
    }
}

/// Decodes `source` (a video file or a directory of numbered frames) and
/// samples it according to `policy`.
pub fn sample_frames(source: &Path, policy: &SamplingPolicy) -> Result<FrameSequence> {
    policy.validate()?;
    let kind = detect_source(source)?;
    let (frames, fps, indices) = match kind {
        SourceKind::FrameDir => source::sample_frame_dir(source, policy)?,
        SourceKind::Gif => source::sample_gif(source, policy)?,
        SourceKind::Avi => match avi::sample_avi(source, policy) {
            Err(D3Error::DecodeError { reason, .. }) if reason.starts_with(avi::UNSUPPORTED_CODEC) => {
                log::debug!("{}: {reason}; trying ffmpeg", source.display());
                ffmpeg::sample(source, policy)?
            }
            other => other?,
        },
        SourceKind::Other => ffmpeg::sample(source, policy)?,
    };
    if frames.is_empty() {
        return Err(D3Error::EmptySource(source.to_path_buf()));
    }
    let seq = FrameSequence::new(frames, fps)?;
    Ok(match indices {
        Some(i) => seq.with_indices(i),
        None => seq,
    })
}

/// Center crop of the longer dimension by `CROP_FRACTION`. Square frames
/// lose width.
pub fn center_crop(img: &RgbImage) -> Result<RgbImage> {
    let (w, h) = img.dimensions();
    let long = w.max(h);
    let removed = (f64::from(long) * CROP_FRACTION).floor() as u32;
    let (x, y, cw, ch) = if w >= h {
        (removed / 2, 0, w - removed, h)
    } else {
        (0, removed / 2, w, h - removed)
    };
    if cw < 2 || ch < 2 {
        return Err(D3Error::FrameTooSmall {
            width: cw,
            height: ch,
        });
    }
    Ok(image::imageops::crop_imm(img, x, y, cw, ch).to_image())
}

pub fn jpeg_roundtrip(img: &RgbImage, quality: u8) -> Result<RgbImage> {
    if !(1..=100).contains(&quality) {
        return Err(D3Error::ConfigError(format!("JPEG quality must be in 1..=100, got {quality}")));
    }
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality).encode_image(img)?;
    Ok(image::load_from_memory_with_format(&buf, ImageFormat::Jpeg)?.to_rgb8())
}

pub fn preprocess_frame(img: &RgbImage) -> Result<RgbImage> {
    let cropped = center_crop(img)?;
    let resized = image::imageops::resize(&cropped, FRAME_SIZE, FRAME_SIZE, FilterType::Triangle);
    jpeg_roundtrip(&resized, PREPROCESS_JPEG_QUALITY)
}

pub fn preprocess(seq: &FrameSequence) -> Result<FrameSequence> {
    seq.map_frames(preprocess_frame)
}

pub(crate) fn decode_image_bytes(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    image::ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| D3Error::io(path, e))?
        .decode()
        .map(|d| d.to_rgb8())
        .map_err(|e| D3Error::DecodeError {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}
