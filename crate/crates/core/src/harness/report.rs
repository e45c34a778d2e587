//! Run artifacts: `scores.csv`, `report.json` and `series.csv`.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::pipeline::{DetectionRun, VideoSeries};
use super::RunConfig;
use crate::error::{D3Error, Result};
use crate::metrics::EvalReport;
use crate::record::{DetectionRecord, Label};

pub const SCORES_FILE: &str = "scores.csv";
pub const REPORT_FILE: &str = "report.json";
pub const SERIES_FILE: &str = "series.csv";

/// Contents of `report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport<'a> {
    pub report: Option<&'a EvalReport>,
    pub eval_error: Option<String>,
    pub config: &'a RunConfig,
    pub config_digest: String,
    pub model_sha256: Option<String>,
    pub run: &'a DetectionRun,
    pub videos_per_second: f64,
}

impl<'a> RunReport<'a> {
    pub fn new(cfg: &'a RunConfig, run: &'a DetectionRun, report: std::result::Result<&'a EvalReport, String>) -> Result<Self> {
        let (report, eval_error) = match report {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e)),
        };
        Ok(Self {
            report,
            eval_error,
            config: cfg,
            config_digest: cfg.digest()?,
            model_sha256: cfg.encoder.model_sha256()?,
            run,
            videos_per_second: run.videos_per_second(),
        })
    }
}

/// Writes `scores.csv` and `report.json` (and `series.csv` when asked)
/// into `out_dir`, returning the written paths.
pub fn emit_report(summary: &RunReport<'_>, out_dir: &Path, with_series: bool) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| D3Error::io(out_dir, e))?;
    let scores = out_dir.join(SCORES_FILE);
    write_scores_csv(&summary.run.records, &scores)?;
    let report = out_dir.join(REPORT_FILE);
    let json = serde_json::to_string_pretty(summary)?;
    std::fs::write(&report, json + "\n").map_err(|e| D3Error::io(&report, e))?;
    let mut written = vec![scores, report];
    if with_series {
        let series = out_dir.join(SERIES_FILE);
        write_series_csv(&summary.run.series, &series)?;
        written.push(series);
    }
    Ok(written)
}

/// Floats use the shortest representation that parses back exactly.
pub fn write_scores_csv(records: &[DetectionRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "subset", "label", "sigma", "fake_score"])?;
    for r in records {
        w.write_record([
            r.id.as_str(),
            &r.subset,
            &r.label.to_string(),
            &r.sigma.to_string(),
            &r.fake_score.to_string(),
        ])?;
    }
    w.flush().map_err(|e| D3Error::io(path, e))
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<DetectionRecord>> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in rd.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let field = |k: usize, name: &str| {
            row.get(k).ok_or_else(|| D3Error::ManifestError {
                line,
                reason: format!("missing column `{name}`"),
            })
        };
        let num = |k: usize, name: &str| -> Result<f64> {
            field(k, name)?.parse().map_err(|e| D3Error::ManifestError {
                line,
                reason: format!("column `{name}`: {e}"),
            })
        };
        let label = match field(2, "label")? {
            "0" => Label::Real,
            "1" => Label::Generated,
            other => {
                return Err(D3Error::ManifestError {
                    line,
                    reason: format!("label must be 0 or 1, got {other:?}"),
                })
            }
        };
        out.push(DetectionRecord {
            id: field(0, "id")?.to_string(),
            subset: field(1, "subset")?.to_string(),
            label,
            sigma: num(3, "sigma")?,
            fake_score: num(4, "fake_score")?,
        });
    }
    Ok(out)
}

/// Long format: `id,series,k,value` with series in `f0_norm`, `f1`, `f2`.
pub fn write_series_csv(series: &[VideoSeries], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "series", "k", "value"])?;
    for s in series {
        for (name, values) in [("f0_norm", &s.f0_norm), ("f1", &s.f1), ("f2", &s.f2)] {
            for (k, v) in values.iter().enumerate() {
                w.write_record([s.id.as_str(), name, &k.to_string(), &v.to_string()])?;
            }
        }
    }
    w.flush().map_err(|e| D3Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scores_roundtrip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let records = vec![
            DetectionRecord::from_sigma("a,b", "real", Label::Real, 0.1 + 0.2),
            DetectionRecord::from_sigma("c", "gen", Label::Generated, 1e-300),
            DetectionRecord::from_sigma("d", "gen", Label::Generated, 0.0),
        ];
        write_scores_csv(&records, &path).unwrap();
        assert_eq!(read_scores_csv(&path).unwrap(), records);
    }

    #[test]
    fn bad_label_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        std::fs::write(&path, "id,subset,label,sigma,fake_score\nx,r,2,1,-1\n").unwrap();
        assert!(matches!(read_scores_csv(&path), Err(D3Error::ManifestError { line: 2, .. })));
    }
}
