//! Threshold-free ranking metrics.
//!
//! Average precision is the step-wise sum `sum_k (R_k - R_{k-1}) * P_k` over
//! the ranking by descending score, without interpolation. Items with equal
//! scores form one block: the block's recall gain is credited at the
//! precision measured after the whole block, so the result does not depend
//! on how ties happen to be ordered.
//!
//! AUROC is the Mann-Whitney statistic with half credit for ties. It is
//! computed from mid-ranks in doubled integer units, so it is exact up to the
//! final division.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{D3Error, Result};
use crate::record::{DetectionRecord, Label};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredLabel {
    /// Higher means more likely generated.
    pub score: f64,
    pub label: Label,
    pub subset: String,
}

impl ScoredLabel {
    pub fn new(score: f64, label: Label) -> Self {
        Self {
            score,
            label,
            subset: String::new(),
        }
    }
}

fn check_finite(items: &[ScoredLabel]) -> Result<()> {
    match items.iter().find(|i| !i.score.is_finite()) {
        Some(i) => Err(D3Error::UndefinedMetric(format!("non-finite score {}", i.score))),
        None => Ok(()),
    }
}

fn descending(items: &[ScoredLabel]) -> Vec<(f64, bool)> {
    let mut v: Vec<(f64, bool)> = items.iter().map(|i| (i.score, i.label.is_positive())).collect();
    v.sort_by(|a, b| b.0.total_cmp(&a.0));
    v
}

pub fn average_precision(items: &[ScoredLabel]) -> Result<f64> {
    check_finite(items)?;
    let n_pos = items.iter().filter(|i| i.label.is_positive()).count();
    if n_pos == 0 {
        return Err(D3Error::UndefinedMetric("average precision needs a positive item".into()));
    }
    let ranked = descending(items);
    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut start = 0;
    while start < ranked.len() {
        let score = ranked[start].0;
        let end = start + ranked[start..].iter().take_while(|(s, _)| *s == score).count();
        let block_tp = ranked[start..end].iter().filter(|(_, p)| *p).count();
        tp += block_tp;
        if block_tp > 0 {
            ap += (block_tp as f64 / n_pos as f64) * (tp as f64 / end as f64);
        }
        start = end;
    }
    Ok(ap)
}

pub fn auroc(items: &[ScoredLabel]) -> Result<f64> {
    check_finite(items)?;
    let n_pos = items.iter().filter(|i| i.label.is_positive()).count() as u64;
    let n_neg = items.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(D3Error::UndefinedMetric("AUROC needs both classes".into()));
    }
    let mut ranked = descending(items);
    ranked.reverse();
    // Sum of doubled mid-ranks of the positives.
    let mut rank_sum2 = 0u64;
    let mut start = 0;
    while start < ranked.len() {
        let score = ranked[start].0;
        let end = start + ranked[start..].iter().take_while(|(s, _)| *s == score).count();
        let doubled_mid_rank = (start + 1 + end) as u64;
        let pos = ranked[start..end].iter().filter(|(_, p)| *p).count() as u64;
        rank_sum2 += pos * doubled_mid_rank;
        start = end;
    }
    let u2 = rank_sum2 - n_pos * (n_pos + 1);
    Ok(u2 as f64 / (2 * n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetMetrics {
    pub ap: f64,
    pub auroc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_subset: BTreeMap<String, SubsetMetrics>,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub mean_auroc: f64,
    pub config_digest: String,
}

/// Which real videos serve as negatives for every generated subset.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RealPool {
    /// Every record labelled real, whatever its subset tag.
    #[default]
    AllReal,
    /// Only real records carrying this subset tag.
    Tagged(String),
}

impl RealPool {
    pub fn from_tag(tag: Option<&str>) -> Self {
        tag.map_or(RealPool::AllReal, |t| RealPool::Tagged(t.to_string()))
    }

    fn contains(&self, r: &DetectionRecord) -> bool {
        r.label == Label::Real
            && match self {
                RealPool::AllReal => true,
                RealPool::Tagged(t) => &r.subset == t,
            }
    }
}

/// Scores each generated subset against the shared real pool; mAP is the
/// unweighted mean of the subset APs.
pub fn evaluate_subsets(records: &[DetectionRecord], pool: &RealPool) -> Result<EvalReport> {
    let negatives: Vec<ScoredLabel> = records
        .iter()
        .filter(|r| pool.contains(r))
        .map(|r| ScoredLabel {
            score: r.fake_score,
            label: Label::Real,
            subset: r.subset.clone(),
        })
        .collect();
    if negatives.is_empty() {
        return Err(D3Error::UndefinedMetric(format!("real pool {pool:?} is empty")));
    }
    let subsets: BTreeSet<&str> = records
        .iter()
        .filter(|r| r.label == Label::Generated)
        .map(|r| r.subset.as_str())
        .collect();
    if subsets.is_empty() {
        return Err(D3Error::UndefinedMetric("no generated videos to evaluate".into()));
    }

    let mut per_subset = BTreeMap::new();
    for subset in subsets {
        let mut items: Vec<ScoredLabel> = records
            .iter()
            .filter(|r| r.label == Label::Generated && r.subset == subset)
            .map(|r| ScoredLabel {
                score: r.fake_score,
                label: Label::Generated,
                subset: r.subset.clone(),
            })
            .collect();
        let n_pos = items.len();
        items.extend(negatives.iter().cloned());
        per_subset.insert(
            subset.to_string(),
            SubsetMetrics {
                ap: average_precision(&items)?,
                auroc: auroc(&items)?,
                n_pos,
                n_neg: negatives.len(),
            },
        );
    }
    let n = per_subset.len() as f64;
    let map = per_subset.values().map(|m| m.ap).sum::<f64>() / n;
    let mean_auroc = per_subset.values().map(|m| m.auroc).sum::<f64>() / n;
    Ok(EvalReport {
        per_subset,
        map,
        mean_auroc,
        config_digest: String::new(),
    })
}
