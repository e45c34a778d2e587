//! The numeric feature chain: per-frame embeddings (zero order) become
//! inter-frame distances (first order), their differences (second order),
//! and finally a volatility score.
//!
//! Everything here runs in `f64`. Encoder outputs are widened on ingestion
//! because the second-order values are differences of nearly equal numbers.
//!
//! Scores are ranked, never thresholded. A uniform sampling interval `dt`
//! rescales every score of a batch by the same positive factor, so rankings
//! and the metrics derived from them do not depend on it.

use serde::{Deserialize, Serialize};

use crate::error::{D3Error, Result};
use crate::par;

/// Frames needed for a second-order score: the sample deviation of the
/// `T - 2` second-order values needs at least two of them.
pub const MIN_FRAMES_SECOND_ORDER: usize = 4;
/// Frames needed for the first-order ablation score.
pub const MIN_FRAMES_FIRST_ORDER: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DistanceKind {
    #[default]
    L2,
    /// Cosine *similarity* between adjacent frames, divided by `dt`.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FeatureOrder {
    First,
    #[default]
    Second,
}

impl FeatureOrder {
    pub fn min_frames(self) -> usize {
        match self {
            FeatureOrder::First => MIN_FRAMES_FIRST_ORDER,
            FeatureOrder::Second => MIN_FRAMES_SECOND_ORDER,
        }
    }
}

/// Per-frame embedding vectors of one clip, stored row-major (`T x N`).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSeries {
    data: Vec<f64>,
    frames: usize,
    dim: usize,
    dt: f64,
}

impl EmbeddingSeries {
    pub fn new(vectors: Vec<Vec<f64>>, dt: f64) -> Result<Self> {
        let frames = vectors.len();
        let dim = vectors.first().map_or(0, Vec::len);
        if let Some((k, v)) = vectors.iter().enumerate().find(|(_, v)| v.len() != dim) {
            return Err(D3Error::ShapeError(format!(
                "frame {k} has dimension {}, frame 0 has {dim}",
                v.len()
            )));
        }
        let data = vectors.into_iter().flatten().collect();
        Self::from_flat(data, frames, dim, dt)
    }

    pub fn from_flat(data: Vec<f64>, frames: usize, dim: usize, dt: f64) -> Result<Self> {
        if frames == 0 {
            return Err(D3Error::TooFewFrames { got: 0, min: 1 });
        }
        if dim == 0 {
            return Err(D3Error::ShapeError("embedding dimension must be at least 1".into()));
        }
        if data.len() != frames * dim {
            return Err(D3Error::ShapeError(format!(
                "{} values cannot form {frames} frames of dimension {dim}",
                data.len()
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(D3Error::ConfigError(format!("dt must be positive and finite, got {dt}")));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(D3Error::NonFinite {
                frame: i / dim,
                component: i % dim,
            });
        }
        Ok(Self {
            data,
            frames,
            dim,
            dt,
        })
    }

    /// Widens single-precision encoder output.
    pub fn from_f32(vectors: &[Vec<f32>], dt: f64) -> Result<Self> {
        Self::new(
            vectors
                .iter()
                .map(|v| v.iter().map(|&x| f64::from(x)).collect())
                .collect(),
            dt,
        )
    }

    pub fn len(&self) -> usize {
        self.frames
    }

    pub fn is_empty(&self) -> bool {
        self.frames == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn frame(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn with_dt(mut self, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(D3Error::ConfigError(format!("dt must be positive and finite, got {dt}")));
        }
        self.dt = dt;
        Ok(self)
    }

    /// Euclidean norm of every frame vector.
    pub fn norms(&self) -> Vec<f64> {
        self.iter().map(norm).collect()
    }
}

/// A first- or second-order feature sequence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalarSeries {
    pub values: Vec<f64>,
    pub order: FeatureOrder,
    pub distance: DistanceKind,
    pub dt: f64,
}

impl ScalarSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of frames the series was derived from.
    pub fn source_frames(&self) -> usize {
        match self.order {
            FeatureOrder::First => self.values.len() + 1,
            FeatureOrder::Second => self.values.len() + 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub sigma: f64,
    /// `-sigma`: generated clips are flat, so they must rank high.
    pub fake_score: f64,
    pub feature_order: FeatureOrder,
    pub distance_kind: DistanceKind,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn require_frames(got: usize, min: usize) -> Result<()> {
    if got < min {
        Err(D3Error::TooFewFrames { got, min })
    } else {
        Ok(())
    }
}

pub fn first_order_l2(f0: &EmbeddingSeries) -> Result<ScalarSeries> {
    require_frames(f0.len(), 2)?;
    let values = f0
        .iter()
        .zip(f0.iter().skip(1))
        .map(|(a, b)| {
            let sq: f64 = a.iter().zip(b).map(|(x, y)| (y - x) * (y - x)).sum();
            sq.sqrt() / f0.dt
        })
        .collect();
    Ok(ScalarSeries {
        values,
        order: FeatureOrder::First,
        distance: DistanceKind::L2,
        dt: f0.dt,
    })
}

/// Cosine similarity of adjacent frames over `dt`. This is similarity, not
/// `1 - similarity`; adjacent frames therefore sit near `1 / dt`.
pub fn first_order_cosine(f0: &EmbeddingSeries) -> Result<ScalarSeries> {
    require_frames(f0.len(), 2)?;
    let norms = f0.norms();
    if let Some(index) = norms.iter().position(|&n| n == 0.0) {
        return Err(D3Error::DegenerateVector { index });
    }
    let values = f0
        .iter()
        .zip(f0.iter().skip(1))
        .zip(norms.windows(2))
        .map(|((a, b), n)| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            dot / (n[0] * n[1]) / f0.dt
        })
        .collect();
    Ok(ScalarSeries {
        values,
        order: FeatureOrder::First,
        distance: DistanceKind::Cosine,
        dt: f0.dt,
    })
}

pub fn first_order(f0: &EmbeddingSeries, distance: DistanceKind) -> Result<ScalarSeries> {
    match distance {
        DistanceKind::L2 => first_order_l2(f0),
        DistanceKind::Cosine => first_order_cosine(f0),
    }
}

/// Backward difference of a first-order series, i.e. the three-point
/// central second difference of the underlying signal.
pub fn second_order_diff(f1: &ScalarSeries) -> Result<ScalarSeries> {
    if f1.order != FeatureOrder::First {
        return Err(D3Error::ShapeError(
            "second-order difference expects a first-order series".into(),
        ));
    }
    require_frames(f1.source_frames(), MIN_FRAMES_FIRST_ORDER)?;
    let values = f1.values.windows(2).map(|w| (w[1] - w[0]) / f1.dt).collect();
    Ok(ScalarSeries {
        values,
        order: FeatureOrder::Second,
        distance: f1.distance,
        dt: f1.dt,
    })
}

/// Sample standard deviation (Bessel denominator `M - 1`) of a feature
/// series. For a second-order series of a `T`-frame clip, `M - 1 = T - 3`.
pub fn sigma_score(series: &ScalarSeries) -> Result<DetectionScore> {
    let m = series.len();
    if m < 2 {
        return Err(D3Error::TooFewFrames {
            got: series.source_frames(),
            min: series.order.min_frames(),
        });
    }
    let sigma = sample_std(&series.values);
    Ok(DetectionScore {
        sigma,
        fake_score: -sigma,
        feature_order: series.order,
        distance_kind: series.distance,
    })
}

fn sample_std(values: &[f64]) -> f64 {
    // A constant series must give exactly zero; the rounded mean of equal
    // values need not equal them.
    if values.windows(2).all(|w| w[0] == w[1]) {
        return 0.0;
    }
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let ss: f64 = values.iter().map(|x| (x - mean) * (x - mean)).sum();
    (ss / (m - 1.0)).sqrt()
}

/// Full chain: distances, optional second difference, deviation.
pub fn d3_score(
    f0: &EmbeddingSeries,
    distance: DistanceKind,
    order: FeatureOrder,
) -> Result<DetectionScore> {
    require_frames(f0.len(), order.min_frames())?;
    let f1 = first_order(f0, distance)?;
    match order {
        FeatureOrder::First => sigma_score(&f1),
        FeatureOrder::Second => sigma_score(&second_order_diff(&f1)?),
    }
}

/// Scores a batch of clips; output order matches input order. With the
/// `parallel` feature and `workers > 1` the clips are scored on a rayon pool.
pub fn score_batch(
    batch: &[EmbeddingSeries],
    distance: DistanceKind,
    order: FeatureOrder,
    workers: usize,
) -> Vec<Result<DetectionScore>> {
    par::map_ordered(batch, workers, |f0| d3_score(f0, distance, order))
}
