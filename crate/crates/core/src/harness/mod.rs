//! Dataset-level evaluation: manifests, run configuration, the per-video
//! pipeline and report files.

mod config;
mod manifest;
pub(crate) mod pipeline;
mod report;

pub use config::RunConfig;
pub use manifest::{load_manifest, parse_manifest, write_manifest, ManifestEntry};
pub use pipeline::{run_detection, video_series, DetectionRun, EntryFailure, SkippedEntry, StageTimings, VideoSeries};
pub use report::{
    emit_report, read_scores_csv, write_scores_csv, write_series_csv, RunReport, REPORT_FILE, SCORES_FILE, SERIES_FILE,
};

use crate::error::Result;
use crate::metrics::{evaluate_subsets, EvalReport};

/// Metrics over the scored videos of `run`, stamped with the config digest.
pub fn evaluate(run: &DetectionRun, cfg: &RunConfig) -> Result<EvalReport> {
    let mut report = evaluate_subsets(&run.records, &cfg.pool())?;
    report.config_digest = cfg.digest()?;
    Ok(report)
}
