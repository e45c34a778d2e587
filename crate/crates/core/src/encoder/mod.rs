//! Per-frame visual encoders.
//!
//! Frames are encoded independently, one vector per frame, in order. Two
//! deterministic toy encoders need no weights; the external runner loads an
//! ONNX image model with input `[1, 3, 224, 224]` and reads one pooled
//! output vector per frame.

#[cfg(feature = "onnx")]
mod onnx;
mod toy;

use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{D3Error, Result};
use crate::features::EmbeddingSeries;
use crate::frames::FrameSequence;
use crate::par;

pub use toy::{luminance_grid, LuminanceGrid, RandomProjection, GRID_CELLS, GRID_DIM};

/// CLIP image normalization, the usual choice for the recommended backbones.
pub const CLIP_MEAN: [f64; 3] = [0.481_454_66, 0.457_827_5, 0.408_210_73];
pub const CLIP_STD: [f64; 3] = [0.268_629_54, 0.261_302_58, 0.275_777_11];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    ExternalModel,
    #[default]
    LuminanceGrid,
    RandomProjection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub model_path: Option<PathBuf>,
    /// Name of the model output holding the frame vector; defaults to the
    /// model's first output.
    pub output_name: Option<String>,
    pub input_mean: [f64; 3],
    pub input_std: [f64; 3],
    pub output_dim: usize,
    pub seed: Option<u64>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::LuminanceGrid,
            model_path: None,
            output_name: None,
            input_mean: CLIP_MEAN,
            input_std: CLIP_STD,
            output_dim: GRID_DIM,
            seed: None,
        }
    }
}

impl EncoderConfig {
    pub fn luminance_grid() -> Self {
        Self::default()
    }

    pub fn random_projection(output_dim: usize, seed: u64) -> Self {
        Self {
            kind: EncoderKind::RandomProjection,
            output_dim,
            seed: Some(seed),
            ..Self::default()
        }
    }

    pub fn external(model_path: impl Into<PathBuf>, output_dim: usize) -> Self {
        Self {
            kind: EncoderKind::ExternalModel,
            model_path: Some(model_path.into()),
            output_dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(D3Error::ConfigError(m));
        if self.output_dim == 0 {
            return bad("encoder output_dim must be at least 1".into());
        }
        if let Some(s) = self.input_std.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return bad(format!("encoder input_std components must be positive, got {s}"));
        }
        if self.input_mean.iter().any(|m| !m.is_finite()) {
            return bad("encoder input_mean must be finite".into());
        }
        match self.kind {
            EncoderKind::ExternalModel => {
                if self.model_path.is_none() {
                    return bad("external_model encoder requires model_path".into());
                }
                if self.seed.is_some() {
                    return bad("seed applies to random_projection only".into());
                }
            }
            EncoderKind::LuminanceGrid | EncoderKind::RandomProjection => {
                if self.model_path.is_some() || self.output_name.is_some() {
                    return bad(format!("{:?} encoder does not take a model", self.kind));
                }
                if self.kind == EncoderKind::LuminanceGrid {
                    if self.output_dim != GRID_DIM {
                        return bad(format!("luminance_grid output_dim is fixed at {GRID_DIM}"));
                    }
                    if self.seed.is_some() {
                        return bad("seed applies to random_projection only".into());
                    }
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the model file, for external models.
    pub fn model_sha256(&self) -> Result<Option<String>> {
        match (&self.kind, &self.model_path) {
            (EncoderKind::ExternalModel, Some(p)) => Ok(Some(sha256_file(p)?)),
            _ => Ok(None),
        }
    }
}

pub(crate) fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| D3Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub trait FrameEncoder: Send + Sync {
    fn output_dim(&self) -> usize;
    fn encode_frame(&self, frame: &RgbImage) -> Result<Vec<f64>>;
}

/// A ready-to-run encoder built from an [`EncoderConfig`].
pub struct Encoder {
    inner: Box<dyn FrameEncoder>,
}

impl std::fmt::Debug for Encoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Encoder")
            .field("output_dim", &self.inner.output_dim())
            .finish()
    }
}

impl Encoder {
    pub fn from_config(cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let inner: Box<dyn FrameEncoder> = match cfg.kind {
            EncoderKind::LuminanceGrid => Box::new(LuminanceGrid),
            EncoderKind::RandomProjection => {
                Box::new(RandomProjection::new(cfg.output_dim, cfg.seed.unwrap_or(0)))
            }
            EncoderKind::ExternalModel => external(cfg)?,
        };
        Ok(Self { inner })
    }

    pub fn from_frame_encoder(inner: Box<dyn FrameEncoder>) -> Self {
        Self { inner }
    }

    pub fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    pub fn encode(&self, seq: &FrameSequence) -> Result<EmbeddingSeries> {
        let dim = self.inner.output_dim();
        let mut flat = Vec::with_capacity(seq.len() * dim);
        for (k, frame) in seq.frames().iter().enumerate() {
            let v = self.inner.encode_frame(frame)?;
            if v.len() != dim {
                return Err(D3Error::ModelError(format!(
                    "frame {k}: encoder returned {} values, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(D3Error::EncoderNumericError { frame: k });
            }
            flat.extend(v);
        }
        EmbeddingSeries::from_flat(flat, seq.len(), dim, seq.sample_dt())
    }
}

#[cfg(feature = "onnx")]
fn external(cfg: &EncoderConfig) -> Result<Box<dyn FrameEncoder>> {
    Ok(Box::new(onnx::OnnxEncoder::load(cfg)?))
}

#[cfg(not(feature = "onnx"))]
fn external(_cfg: &EncoderConfig) -> Result<Box<dyn FrameEncoder>> {
    Err(D3Error::ModelError(
        "external models need the `onnx` feature of d3-core".into(),
    ))
}

pub fn encode(seq: &FrameSequence, cfg: &EncoderConfig) -> Result<EmbeddingSeries> {
    Encoder::from_config(cfg)?.encode(seq)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorPolicy {
    /// Return the first per-item error (in input order).
    #[default]
    FailFast,
    /// Keep going and report each item's outcome.
    Collect,
}

/// Encodes several clips with one shared encoder. The outer `Err` is a
/// configuration error, or the first item error under
/// [`ErrorPolicy::FailFast`].
pub fn encode_batch(
    seqs: &[FrameSequence],
    cfg: &EncoderConfig,
    policy: ErrorPolicy,
    workers: usize,
) -> Result<Vec<Result<EmbeddingSeries>>> {
    let encoder = Encoder::from_config(cfg)?;
    let out = par::map_ordered(seqs, workers, |s| encoder.encode(s));
    match policy {
        ErrorPolicy::Collect => Ok(out),
        ErrorPolicy::FailFast => {
            let mut ok = Vec::with_capacity(out.len());
            for r in out {
                ok.push(Ok(r?));
            }
            Ok(ok)
        }
    }
}
