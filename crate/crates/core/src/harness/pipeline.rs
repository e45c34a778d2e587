//! Per-video detection: sample, preprocess, perturb, encode, score.

use std::ops::AddAssign;
use std::time::Instant;

use serde::Serialize;

use super::{ManifestEntry, RunConfig};
use crate::encoder::Encoder;
use crate::error::{D3Error, Result};
use crate::features::{d3_score, first_order, second_order_diff, EmbeddingSeries};
use crate::frames::{preprocess, sample_frames, FrameSequence};
use crate::par;
use crate::record::DetectionRecord;
use crate::robustness::{apply, Perturbation};

/// Seconds spent in each stage, summed over videos.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub sample_s: f64,
    pub preprocess_s: f64,
    pub perturb_s: f64,
    pub encode_s: f64,
    pub score_s: f64,
}

impl AddAssign for StageTimings {
    fn add_assign(&mut self, o: Self) {
        self.sample_s += o.sample_s;
        self.preprocess_s += o.preprocess_s;
        self.perturb_s += o.perturb_s;
        self.encode_s += o.encode_s;
        self.score_s += o.score_s;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedEntry {
    pub id: String,
    pub frames: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntryFailure {
    pub id: String,
    pub error: String,
}

/// Intermediate series of one clip: embedding norms, first-order
/// distances and (with at least three frames) their second difference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VideoSeries {
    pub id: String,
    pub frames: usize,
    pub f0_norm: Vec<f64>,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum EntryOutcome {
    Scored {
        record: DetectionRecord,
        series: VideoSeries,
        timings: StageTimings,
    },
    Skipped(SkippedEntry),
    Failed(EntryFailure),
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct DetectionRun {
    pub records: Vec<DetectionRecord>,
    pub skipped: Vec<SkippedEntry>,
    pub failures: Vec<EntryFailure>,
    #[serde(skip)]
    pub series: Vec<VideoSeries>,
    pub timings: StageTimings,
    pub wall_s: f64,
}

impl DetectionRun {
    fn from_outcomes(outcomes: Vec<EntryOutcome>, wall_s: f64) -> Self {
        let mut run = DetectionRun {
            wall_s,
            ..Self::default()
        };
        for o in outcomes {
            match o {
                EntryOutcome::Scored { record, series, timings } => {
                    run.records.push(record);
                    run.series.push(series);
                    run.timings += timings;
                }
                EntryOutcome::Skipped(s) => run.skipped.push(s),
                EntryOutcome::Failed(f) => run.failures.push(f),
            }
        }
        run
    }

    pub fn videos_per_second(&self) -> f64 {
        if self.wall_s > 0.0 {
            self.records.len() as f64 / self.wall_s
        } else {
            0.0
        }
    }
}

fn seconds(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn prepare(entry: &ManifestEntry, cfg: &RunConfig, t: &mut StageTimings) -> Result<FrameSequence> {
    let start = Instant::now();
    let seq = sample_frames(&entry.path, &cfg.sampling)?;
    t.sample_s += seconds(start);
    let start = Instant::now();
    let seq = preprocess(&seq)?;
    t.preprocess_s += seconds(start);
    Ok(seq)
}

fn series_of(id: &str, f0: &EmbeddingSeries, cfg: &RunConfig) -> Result<VideoSeries> {
    let f1 = if f0.len() >= 2 { Some(first_order(f0, cfg.distance_kind)?) } else { None };
    let f2 = match &f1 {
        Some(s) if s.len() >= 2 => second_order_diff(s)?.values,
        _ => Vec::new(),
    };
    Ok(VideoSeries {
        id: id.to_string(),
        frames: f0.len(),
        f0_norm: f0.norms(),
        f1: f1.map(|s| s.values).unwrap_or_default(),
        f2,
    })
}

fn score_prepared(
    entry: &ManifestEntry,
    seq: &FrameSequence,
    p: &Perturbation,
    encoder: &Encoder,
    cfg: &RunConfig,
    mut t: StageTimings,
) -> Result<EntryOutcome> {
    let start = Instant::now();
    let seq = match p {
        Perturbation::Identity => seq.clone(),
        _ => seq.map_frames(|f| apply(f, p))?,
    };
    t.perturb_s += seconds(start);
    let start = Instant::now();
    let f0 = encoder.encode(&seq)?;
    t.encode_s += seconds(start);
    let start = Instant::now();
    let score = d3_score(&f0, cfg.distance_kind, cfg.feature_order)?;
    let series = series_of(&entry.id, &f0, cfg)?;
    t.score_s += seconds(start);
    Ok(EntryOutcome::Scored {
        record: DetectionRecord::new(&entry.id, &entry.subset, entry.label, &score),
        series,
        timings: t,
    })
}

fn failed(entry: &ManifestEntry, e: &D3Error) -> EntryOutcome {
    log::warn!("{}: {e}", entry.id);
    EntryOutcome::Failed(EntryFailure {
        id: entry.id.clone(),
        error: e.to_string(),
    })
}

/// Outcomes of one entry for every perturbation in `grid`. The clip is
/// decoded and preprocessed once.
fn process_entry(entry: &ManifestEntry, cfg: &RunConfig, encoder: &Encoder, grid: &[Perturbation]) -> Result<Vec<EntryOutcome>> {
    let mut t = StageTimings::default();
    let seq = match prepare(entry, cfg, &mut t) {
        Ok(s) => s,
        Err(e) if e.is_config_error() => return Err(e),
        Err(e) => return Ok(vec![failed(entry, &e); grid.len()]),
    };
    let min = cfg.feature_order.min_frames();
    if seq.len() < min {
        let too_few = D3Error::TooFewFrames { got: seq.len(), min };
        let o = if cfg.skip_short_videos {
            log::warn!("{}: skipped, {too_few}", entry.id);
            EntryOutcome::Skipped(SkippedEntry {
                id: entry.id.clone(),
                frames: seq.len(),
                reason: too_few.to_string(),
            })
        } else {
            failed(entry, &too_few)
        };
        return Ok(vec![o; grid.len()]);
    }
    let mut out = Vec::with_capacity(grid.len());
    for (i, p) in grid.iter().enumerate() {
        // Decode time is charged to the first grid point only.
        let base = if i == 0 { t } else { StageTimings::default() };
        match score_prepared(entry, &seq, p, encoder, cfg, base) {
            Ok(o) => out.push(o),
            Err(e) if e.is_config_error() => return Err(e),
            Err(e) => out.push(failed(entry, &e)),
        }
    }
    Ok(out)
}

/// Runs every entry under every perturbation of `grid`; the result is
/// indexed `[grid point][entry]`. Configuration and model errors abort.
pub(crate) fn run_grid(entries: &[ManifestEntry], cfg: &RunConfig, grid: &[Perturbation]) -> Result<Vec<Vec<EntryOutcome>>> {
    cfg.validate()?;
    let encoder = Encoder::from_config(&cfg.encoder)?;
    let per_entry = par::map_ordered(entries, cfg.workers, |e| process_entry(e, cfg, &encoder, grid));
    let mut by_point: Vec<Vec<EntryOutcome>> = (0..grid.len()).map(|_| Vec::with_capacity(entries.len())).collect();
    for outcomes in per_entry {
        for (slot, o) in by_point.iter_mut().zip(outcomes?) {
            slot.push(o);
        }
    }
    Ok(by_point)
}

/// Scores every manifest entry under `cfg`. Per-video failures and skipped
/// short clips are recorded in the result; configuration and model errors
/// abort the run, and so does any failed video in strict mode.
pub fn run_detection(entries: &[ManifestEntry], cfg: &RunConfig) -> Result<DetectionRun> {
    let start = Instant::now();
    let p = cfg.perturbation.unwrap_or_default();
    let outcomes = run_grid(entries, cfg, &[p])?.pop().unwrap_or_default();
    if !cfg.skip_short_videos {
        if let Some(EntryOutcome::Failed(f)) = outcomes.iter().find(|o| matches!(o, EntryOutcome::Failed(_))) {
            return Err(D3Error::EntryFailed {
                id: f.id.clone(),
                reason: f.error.clone(),
            });
        }
    }
    let run = DetectionRun::from_outcomes(outcomes, seconds(start));
    let t = &run.timings;
    log::info!(
        "{} scored, {} skipped, {} failed in {:.2}s ({:.1} videos/s); sample {:.2}s preprocess {:.2}s perturb {:.2}s encode {:.2}s score {:.3}s",
        run.records.len(),
        run.skipped.len(),
        run.failures.len(),
        run.wall_s,
        run.videos_per_second(),
        t.sample_s,
        t.preprocess_s,
        t.perturb_s,
        t.encode_s,
        t.score_s
    );
    Ok(run)
}

/// Intermediate series of a single clip, without the minimum-length check.
pub fn video_series(path: &std::path::Path, cfg: &RunConfig) -> Result<VideoSeries> {
    cfg.validate()?;
    let encoder = Encoder::from_config(&cfg.encoder)?;
    let entry = ManifestEntry::new(path.display().to_string(), path, crate::record::Label::Real, "-");
    let mut t = StageTimings::default();
    let seq = prepare(&entry, cfg, &mut t)?;
    let seq = match cfg.perturbation {
        Some(p) if p != Perturbation::Identity => seq.map_frames(|f| apply(f, &p))?,
        _ => seq,
    };
    series_of(&entry.id, &encoder.encode(&seq)?, cfg)
}
