use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use image::codecs::gif::GifDecoder;
use image::{AnimationDecoder, DynamicImage, RgbImage};
use serde::Deserialize;

use super::{SamplingPolicy, FRAME_DIR_META};
use crate::error::{D3Error, Result};

/// Slack for comparing timestamps that are mathematically equal.
const TIME_EPS: f64 = 1e-9;
/// Browsers render zero-delay GIF frames at 100 ms.
const GIF_ZERO_DELAY_S: f64 = 0.1;

pub(super) type Sampled = (Vec<RgbImage>, f64, Option<Vec<usize>>);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    FrameDir,
    Gif,
    Avi,
    /// Anything else is handed to ffmpeg.
    Other,
}

pub fn detect_source(path: &Path) -> Result<SourceKind> {
    if path.is_dir() {
        return Ok(SourceKind::FrameDir);
    }
    if !path.exists() {
        return Err(D3Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        ));
    }
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    Ok(match ext.as_deref() {
        Some("gif") => SourceKind::Gif,
        Some("avi") => SourceKind::Avi,
        _ => SourceKind::Other,
    })
}

fn nearest(timestamps: &[f64], t: f64) -> usize {
    let i = timestamps.partition_point(|&x| x < t);
    if i == timestamps.len() {
        return i - 1;
    }
    // Exact ties go to the later frame, like rounding k * fps / target half up.
    if i > 0 && t - timestamps[i - 1] < timestamps[i] - t - TIME_EPS {
        i - 1
    } else {
        i
    }
}

/// Picks source frames for the sampling instants `k / target_fps`.
///
/// `timestamps` must be sorted; `end` is the source duration. Instants at or
/// past `end` or `max_duration_s` are dropped, and a source frame is never
/// selected twice in a row.
pub fn select_indices(timestamps: &[f64], end: f64, policy: &SamplingPolicy) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    if timestamps.is_empty() {
        return out;
    }
    for k in 0..policy.max_frames {
        let t = k as f64 / policy.target_fps;
        if t >= policy.max_duration_s - TIME_EPS || t >= end - TIME_EPS {
            break;
        }
        let idx = nearest(timestamps, t);
        if out.last() != Some(&idx) {
            out.push(idx);
        }
    }
    out
}

fn uniform_timestamps(n: usize, fps: f64) -> Vec<f64> {
    (0..n).map(|i| i as f64 / fps).collect()
}

/// Sort key for numbered frame files: the last run of digits, then the name.
fn frame_number(path: &Path) -> (u64, String) {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stem = path
        .file_stem()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let digits: String = stem
        .chars()
        .rev()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(char::is_ascii_digit)
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    (digits.parse().unwrap_or(u64::MAX), name)
}

pub(super) fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| D3Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| D3Error::io(dir, e))?.path();
        let is_frame = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"));
        if is_frame && path.is_file() {
            files.push(path);
        }
    }
    files.sort_by_cached_key(|p| frame_number(p));
    Ok(files)
}

#[derive(Deserialize)]
struct FrameDirMeta {
    fps: f64,
}

fn frame_dir_fps(dir: &Path, policy: &SamplingPolicy) -> Result<f64> {
    let meta = dir.join(FRAME_DIR_META);
    if meta.is_file() {
        let text = std::fs::read_to_string(&meta).map_err(|e| D3Error::io(&meta, e))?;
        let parsed: FrameDirMeta = serde_json::from_str(&text)?;
        if parsed.fps > 0.0 && parsed.fps.is_finite() {
            return Ok(parsed.fps);
        }
        return Err(D3Error::DecodeError {
            path: meta,
            reason: format!("fps must be positive, got {}", parsed.fps),
        });
    }
    Ok(policy.frame_dir_fps.unwrap_or(policy.target_fps))
}

pub(super) fn sample_frame_dir(dir: &Path, policy: &SamplingPolicy) -> Result<Sampled> {
    let files = list_frame_files(dir)?;
    if files.is_empty() {
        return Err(D3Error::EmptySource(dir.to_path_buf()));
    }
    let fps = frame_dir_fps(dir, policy)?;
    let ts = uniform_timestamps(files.len(), fps);
    let indices = select_indices(&ts, files.len() as f64 / fps, policy);
    let frames = indices
        .iter()
        .map(|&i| {
            let bytes = std::fs::read(&files[i]).map_err(|e| D3Error::io(&files[i], e))?;
            super::decode_image_bytes(&bytes, &files[i])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((frames, fps, Some(indices)))
}

pub(super) fn sample_gif(path: &Path, policy: &SamplingPolicy) -> Result<Sampled> {
    let decode_err = |e: image::ImageError| D3Error::DecodeError {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let file = File::open(path).map_err(|e| D3Error::io(path, e))?;
    let decoder = GifDecoder::new(BufReader::new(file)).map_err(decode_err)?;
    let mut frames = Vec::new();
    let mut ts = Vec::new();
    let mut clock = 0.0;
    for frame in decoder.into_frames() {
        let frame = frame.map_err(decode_err)?;
        let (num, den) = frame.delay().numer_denom_ms();
        let mut delay = f64::from(num) / f64::from(den.max(1)) / 1000.0;
        if delay <= 0.0 {
            delay = GIF_ZERO_DELAY_S;
        }
        ts.push(clock);
        clock += delay;
        frames.push(DynamicImage::ImageRgba8(frame.into_buffer()).to_rgb8());
        if clock >= policy.max_duration_s {
            break;
        }
    }
    if frames.is_empty() {
        return Err(D3Error::EmptySource(path.to_path_buf()));
    }
    let indices = select_indices(&ts, clock, policy);
    let fps = ts.len() as f64 / clock;
    let picked = indices.iter().map(|&i| frames[i].clone()).collect();
    Ok((picked, fps, Some(indices)))
}
