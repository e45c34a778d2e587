//! Post-processing perturbations and the robustness sweep.
//!
//! Perturbations are applied to each frame after preprocessing and before
//! encoding. Gaussian blur uses a truncated kernel of radius `ceil(3 sigma)`,
//! renormalized, applied separably with reflect-101 borders; JPEG
//! compression is an encode/decode round trip at the given quality.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{D3Error, Result};
use crate::frames::jpeg_roundtrip;
use crate::harness::pipeline::{self, EntryOutcome};
use crate::harness::{ManifestEntry, RunConfig};
use crate::metrics::{evaluate_subsets, EvalReport, RealPool};

pub const BLUR_SIGMAS: [f64; 5] = [0.0, 1.0, 2.0, 3.0, 4.0];
pub const JPEG_QUALITIES: [u8; 5] = [100, 90, 80, 70, 60];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Perturbation {
    #[default]
    Identity,
    GaussianBlur {
        sigma: f64,
    },
    JpegCompress {
        quality: u8,
    },
}

impl Perturbation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Perturbation::Identity => Ok(()),
            Perturbation::GaussianBlur { sigma } if sigma >= 0.0 && sigma.is_finite() => Ok(()),
            Perturbation::GaussianBlur { sigma } => Err(D3Error::ConfigError(format!(
                "blur sigma must be non-negative, got {sigma}"
            ))),
            Perturbation::JpegCompress { quality } if (1..=100).contains(&quality) => Ok(()),
            Perturbation::JpegCompress { quality } => Err(D3Error::ConfigError(format!(
                "JPEG quality must be in 1..=100, got {quality}"
            ))),
        }
    }
}

impl fmt::Display for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Perturbation::Identity => write!(f, "identity"),
            Perturbation::GaussianBlur { sigma } => write!(f, "blur_sigma={sigma}"),
            Perturbation::JpegCompress { quality } => write!(f, "jpeg_q={quality}"),
        }
    }
}

/// Blur levels followed by JPEG levels.
pub fn grid(blur_sigmas: &[f64], jpeg_qualities: &[u8]) -> Vec<Perturbation> {
    blur_sigmas
        .iter()
        .map(|&sigma| Perturbation::GaussianBlur { sigma })
        .chain(jpeg_qualities.iter().map(|&quality| Perturbation::JpegCompress { quality }))
        .collect()
}

/// The ten-point grid: five blur levels and five JPEG qualities.
pub fn default_grid() -> Vec<Perturbation> {
    grid(&BLUR_SIGMAS, &JPEG_QUALITIES)
}

pub fn apply(frame: &RgbImage, p: &Perturbation) -> Result<RgbImage> {
    p.validate()?;
    match *p {
        Perturbation::Identity => Ok(frame.clone()),
        Perturbation::GaussianBlur { sigma } => Ok(gaussian_blur(frame, sigma)),
        Perturbation::JpegCompress { quality } => jpeg_roundtrip(frame, quality),
    }
}

/// Normalized weights for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as i64;
    let w: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Reflect-101 border: `dcb|abcd|cba`.
pub fn reflect(mut i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

pub fn gaussian_blur(frame: &RgbImage, sigma: f64) -> RgbImage {
    if sigma <= 0.0 {
        return frame.clone();
    }
    let (w, h) = (frame.width() as usize, frame.height() as usize);
    let pass = blur_rows(&to_f64(frame), w, h, &gaussian_kernel(sigma));
    let both = blur_cols(&pass, w, h, &gaussian_kernel(sigma));
    quantize(&both, frame.width(), frame.height())
}

pub(crate) fn to_f64(frame: &RgbImage) -> Vec<f64> {
    frame.as_raw().iter().map(|&v| f64::from(v)).collect()
}

pub(crate) fn quantize(data: &[f64], w: u32, h: u32) -> RgbImage {
    let raw = data.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    RgbImage::from_raw(w, h, raw).expect("buffer matches dimensions")
}

pub(crate) fn blur_rows(src: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        let row = &src[y * w * 3..(y + 1) * w * 3];
        for x in 0..w {
            let mut acc = [0.0; 3];
            for (k, wt) in kernel.iter().enumerate() {
                let sx = reflect(x as i64 + k as i64 - r, w);
                for c in 0..3 {
                    acc[c] += wt * row[sx * 3 + c];
                }
            }
            out[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&acc);
        }
    }
    out
}

pub(crate) fn blur_cols(src: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for (k, wt) in kernel.iter().enumerate() {
            let sy = reflect(y as i64 + k as i64 - r, h);
            let (dst, s) = (&mut out[y * w * 3..(y + 1) * w * 3], &src[sy * w * 3..(sy + 1) * w * 3]);
            for (d, v) in dst.iter_mut().zip(s) {
                *d += wt * v;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub perturbation: Perturbation,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
    /// Videos that failed or were skipped at this grid point.
    pub failed: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    /// Unperturbed reference run.
    pub baseline: SweepPoint,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// `mAP(point) - mAP(identity)` for every grid point with a report.
    pub fn degradation(&self) -> Vec<(Perturbation, Option<f64>)> {
        let base = self.baseline.report.as_ref().map(|r| r.map);
        self.points
            .iter()
            .map(|p| {
                let delta = match (base, &p.report) {
                    (Some(b), Some(r)) => Some(r.map - b),
                    _ => None,
                };
                (p.perturbation, delta)
            })
            .collect()
    }

    pub fn point(&self, p: &Perturbation) -> Option<&SweepPoint> {
        if *p == Perturbation::Identity {
            return Some(&self.baseline);
        }
        self.points.iter().find(|q| q.perturbation == *p)
    }
}

/// Runs the full pipeline once per grid point (plus an identity baseline).
/// Each video is decoded and preprocessed once; grid points that fail to
/// evaluate are reported without aborting the others.
pub fn sweep(
    entries: &[ManifestEntry],
    cfg: &RunConfig,
    grid: &[Perturbation],
    pool: &RealPool,
) -> Result<SweepResult> {
    cfg.validate()?;
    for p in grid {
        p.validate()?;
    }
    let mut all = vec![Perturbation::Identity];
    all.extend(grid.iter().filter(|p| **p != Perturbation::Identity));
    let per_point = pipeline::run_grid(entries, cfg, &all)?;
    let digest = cfg.digest()?;

    let mut points: Vec<SweepPoint> = per_point
        .into_iter()
        .zip(&all)
        .map(|(outcomes, p)| {
            let mut records = Vec::new();
            let (mut failed, mut skipped) = (0, 0);
            for o in outcomes {
                match o {
                    EntryOutcome::Scored { record, .. } => records.push(record),
                    EntryOutcome::Skipped(_) => skipped += 1,
                    EntryOutcome::Failed(_) => failed += 1,
                }
            }
            let (report, error) = match evaluate_subsets(&records, pool) {
                Ok(mut r) => {
                    r.config_digest.clone_from(&digest);
                    (Some(r), None)
                }
                Err(e) => (None, Some(e.to_string())),
            };
            SweepPoint {
                perturbation: *p,
                report,
                error,
                failed,
                skipped,
            }
        })
        .collect();
    let baseline = points.remove(0);
    let points = grid
        .iter()
        .map(|p| {
            if *p == Perturbation::Identity {
                baseline.clone()
            } else {
                points
                    .iter()
                    .find(|q| q.perturbation == *p)
                    .cloned()
                    .expect("every grid point was run")
            }
        })
        .collect();
    Ok(SweepResult { baseline, points })
}

/// One row per grid point (identity first): per-subset AP columns, mAP,
/// mean AUROC and the mAP change against identity.
pub fn write_sweep_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let subsets: BTreeSet<String> = std::iter::once(&result.baseline)
        .chain(&result.points)
        .filter_map(|p| p.report.as_ref())
        .flat_map(|r| r.per_subset.keys().cloned())
        .collect();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["perturbation".to_string(), "kind".into(), "param".into()];
    header.extend(subsets.iter().map(|s| format!("ap_{s}")));
    header.extend(["mAP", "mean_auroc", "delta_mAP", "failed", "skipped", "error"].map(String::from));
    w.write_record(&header)?;

    let base = result.baseline.report.as_ref().map(|r| r.map);
    for p in std::iter::once(&result.baseline).chain(&result.points) {
        let (kind, param) = match p.perturbation {
            Perturbation::Identity => ("identity", String::new()),
            Perturbation::GaussianBlur { sigma } => ("gaussian_blur", sigma.to_string()),
            Perturbation::JpegCompress { quality } => ("jpeg", quality.to_string()),
        };
        let mut row = vec![p.perturbation.to_string(), kind.into(), param];
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for s in &subsets {
            row.push(fmt(p.report.as_ref().and_then(|r| r.per_subset.get(s)).map(|m| m.ap)));
        }
        let map = p.report.as_ref().map(|r| r.map);
        row.push(fmt(map));
        row.push(fmt(p.report.as_ref().map(|r| r.mean_auroc)));
        row.push(fmt(map.zip(base).map(|(m, b)| m - b)));
        row.push(p.failed.to_string());
        row.push(p.skipped.to_string());
        row.push(p.error.clone().unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| D3Error::io(path, e))
}
