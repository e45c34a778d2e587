//! Fallback decoder for containers and codecs without a built-in reader.
//! Requires `ffmpeg` and `ffprobe` on `PATH`; ffmpeg's `fps` filter performs
//! the timestamp-based sampling.

use std::path::Path;
use std::process::{Command, Stdio};

use image::RgbImage;

use super::source::Sampled;
use super::SamplingPolicy;
use crate::error::{D3Error, Result};

fn decode_err(path: &Path, reason: impl Into<String>) -> D3Error {
    D3Error::DecodeError {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn run(path: &Path, cmd: &mut Command) -> Result<Vec<u8>> {
    let program = cmd.get_program().to_string_lossy().into_owned();
    let out = cmd
        .stdin(Stdio::null())
        .output()
        .map_err(|e| decode_err(path, format!("cannot run {program} ({e}); install ffmpeg or use a frame directory")))?;
    if !out.status.success() {
        return Err(decode_err(
            path,
            format!("{program} failed: {}", String::from_utf8_lossy(&out.stderr).trim()),
        ));
    }
    Ok(out.stdout)
}

fn probe(path: &Path) -> Result<(u32, u32, f64)> {
    let out = run(
        path,
        Command::new("ffprobe")
            .args(["-v", "error", "-select_streams", "v:0", "-show_entries"])
            .args(["stream=width,height,avg_frame_rate", "-of", "csv=p=0:s=,"])
            .arg(path),
    )?;
    let text = String::from_utf8_lossy(&out);
    let fields: Vec<&str> = text.trim().split(',').collect();
    let parse = |s: &str| s.trim().parse::<u32>().ok();
    let (Some(w), Some(h)) = (
        fields.first().and_then(|s| parse(s)),
        fields.get(1).and_then(|s| parse(s)),
    ) else {
        return Err(decode_err(path, format!("unexpected ffprobe output {text:?}")));
    };
    let fps = fields
        .get(2)
        .and_then(|r| {
            let (n, d) = r.split_once('/')?;
            let (n, d) = (n.trim().parse::<f64>().ok()?, d.trim().parse::<f64>().ok()?);
            (d > 0.0).then_some(n / d)
        })
        .unwrap_or(0.0);
    Ok((w, h, fps))
}

pub(super) fn sample(path: &Path, policy: &SamplingPolicy) -> Result<Sampled> {
    let (w, h, fps) = probe(path)?;
    let raw = run(
        path,
        Command::new("ffmpeg")
            .args(["-v", "error", "-nostdin", "-noautorotate", "-i"])
            .arg(path)
            .args(["-t", &policy.max_duration_s.to_string()])
            .args(["-vf", &format!("fps={}:start_time=0:round=near", policy.target_fps)])
            .args(["-frames:v", &policy.max_frames.to_string()])
            .args(["-f", "rawvideo", "-pix_fmt", "rgb24", "pipe:1"]),
    )?;
    let frame_len = (w as usize) * (h as usize) * 3;
    if frame_len == 0 {
        return Err(decode_err(path, "zero-sized video stream"));
    }
    let frames: Vec<RgbImage> = raw
        .chunks_exact(frame_len)
        .filter_map(|c| RgbImage::from_raw(w, h, c.to_vec()))
        .collect();
    if frames.is_empty() {
        return Err(D3Error::EmptySource(path.to_path_buf()));
    }
    Ok((frames, fps, None))
}
