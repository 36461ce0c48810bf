//! Batch evaluation: detection rates, clean false-positive rate, score
//! summaries and a rank-based AUC, all recomputable from per-sample verdicts.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{DetectionVerdict, Detector};
use crate::error::{Error, Result};
use crate::features::{FeatureSource, InputSample};

/// Condition label used for the clean set in verdict logs.
pub const CLEAN_CONDITION: &str = "clean";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleVerdict {
    pub condition: String,
    pub sample_id: u32,
    pub verdict: DetectionVerdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
}

impl ScoreSummary {
    pub fn of(scores: &[f64]) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::invalid("no scores to summarize"));
        }
        let mut sorted = scores.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        Ok(ScoreSummary {
            min: sorted[0],
            max: sorted[n - 1],
            mean: scores.iter().sum::<f64>() / n as f64,
            median,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub samples: usize,
    pub flagged: usize,
    pub detection_rate: f64,
    pub summary: ScoreSummary,
}

impl ConditionResult {
    fn of(verdicts: &[&DetectionVerdict]) -> Result<Self> {
        let scores: Vec<f64> = verdicts.iter().map(|v| v.p_a).collect();
        let flagged = verdicts.iter().filter(|v| v.is_adversarial).count();
        Ok(ConditionResult {
            samples: verdicts.len(),
            flagged,
            detection_rate: flagged as f64 / verdicts.len() as f64,
            summary: ScoreSummary::of(&scores)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset_name: String,
    pub threshold: f64,
    pub clean: ConditionResult,
    pub clean_fpr: f64,
    pub per_condition: BTreeMap<String, ConditionResult>,
    /// Clean versus all adversarial conditions pooled.
    pub auc: f64,
    /// Set when the clean set shares samples with the calibration set, which
    /// makes the false-positive rate a degenerate self-check.
    pub clean_overlaps_calibration: bool,
}

/// Verdicts for every sample plus the report aggregated from them.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvaluationReport,
    pub verdicts: Vec<SampleVerdict>,
}

/// Area under the ROC curve from the Mann-Whitney statistic: the fraction of
/// (negative, positive) pairs ranked correctly, ties counting one half.
pub fn auc(negatives: &[f64], positives: &[f64]) -> Result<f64> {
    if negatives.is_empty() || positives.is_empty() {
        return Err(Error::invalid("AUC needs both classes"));
    }
    if negatives.iter().chain(positives).any(|v| v.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let mut pooled: Vec<(f64, bool)> = negatives
        .iter()
        .map(|&v| (v, false))
        .chain(positives.iter().map(|&v| (v, true)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    // doubled midranks keep the sum integral
    let mut pos_rank2: u64 = 0;
    let mut start = 0;
    while start < pooled.len() {
        let mut end = start + 1;
        while end < pooled.len() && pooled[end].0 == pooled[start].0 {
            end += 1;
        }
        let doubled = (start + 1 + end) as u64;
        let hits = pooled[start..end].iter().filter(|p| p.1).count() as u64;
        pos_rank2 += doubled * hits;
        start = end;
    }
    let (n0, n1) = (negatives.len() as u64, positives.len() as u64);
    let u2 = pos_rank2 - n1 * (n1 + 1);
    Ok(u2 as f64 / (2 * n0 * n1) as f64)
}

/// Aggregates verdicts. Pure: the same verdicts always give the same report.
pub fn report_from_verdicts(
    dataset_name: &str,
    threshold: f64,
    verdicts: &[SampleVerdict],
    clean_overlaps_calibration: bool,
) -> Result<EvaluationReport> {
    let mut groups: BTreeMap<&str, Vec<&DetectionVerdict>> = BTreeMap::new();
    for v in verdicts {
        groups.entry(v.condition.as_str()).or_default().push(&v.verdict);
    }
    let clean = groups
        .remove(CLEAN_CONDITION)
        .ok_or_else(|| Error::invalid("no clean verdicts"))?;
    if groups.is_empty() {
        return Err(Error::invalid("no adversarial conditions"));
    }
    let clean = ConditionResult::of(&clean)?;
    let per_condition = groups
        .iter()
        .map(|(k, v)| Ok((k.to_string(), ConditionResult::of(v)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let (neg, pos): (Vec<_>, Vec<_>) = verdicts
        .iter()
        .partition(|v| v.condition == CLEAN_CONDITION);
    let score = |v: Vec<&SampleVerdict>| v.iter().map(|s| s.verdict.p_a).collect::<Vec<_>>();
    Ok(EvaluationReport {
        dataset_name: dataset_name.to_string(),
        threshold,
        clean_fpr: clean.detection_rate,
        clean,
        per_condition,
        auc: auc(&score(neg), &score(pos))?,
        clean_overlaps_calibration,
    })
}

/// Bit patterns identifying an input by value.
fn fingerprint(s: &InputSample) -> Vec<u64> {
    s.values().iter().map(|v| v.to_bits()).collect()
}

/// Classifies every sample (in parallel) and aggregates.
///
/// `calibration` is the set the threshold was derived from; the report flags
/// any overlap with `clean` by input value.
pub fn evaluate<S: FeatureSource + ?Sized>(
    detector: &Detector<'_, S>,
    threshold: f64,
    clean: &[InputSample],
    conditions: &BTreeMap<String, Vec<InputSample>>,
    calibration: &[InputSample],
) -> Result<Evaluation> {
    if clean.is_empty() {
        return Err(Error::invalid("clean set is empty"));
    }
    if conditions.is_empty() {
        return Err(Error::invalid("no adversarial conditions given"));
    }
    if conditions.contains_key(CLEAN_CONDITION) {
        return Err(Error::invalid(format!(
            "condition label {CLEAN_CONDITION:?} is reserved"
        )));
    }
    if let Some((label, _)) = conditions.iter().find(|(_, v)| v.is_empty()) {
        return Err(Error::invalid(format!("condition {label:?} is empty")));
    }
    let jobs: Vec<(&str, &InputSample)> = clean
        .iter()
        .map(|s| (CLEAN_CONDITION, s))
        .chain(
            conditions
                .iter()
                .flat_map(|(label, set)| set.iter().map(move |s| (label.as_str(), s))),
        )
        .collect();
    let verdicts = jobs
        .par_iter()
        .map(|&(condition, s)| {
            Ok(SampleVerdict {
                condition: condition.to_string(),
                sample_id: s.id,
                verdict: detector.classify(s, threshold)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let calib: HashSet<Vec<u64>> = calibration.iter().map(fingerprint).collect();
    let overlap = clean.iter().any(|s| calib.contains(&fingerprint(s)));
    let report = report_from_verdicts(
        &detector.store().dataset_name,
        threshold,
        &verdicts,
        overlap,
    )?;
    Ok(Evaluation { report, verdicts })
}

fn percent(rate: f64) -> String {
    format!("{:.2}", rate * 100.0)
}

/// Aligned-column table, one row per condition, rates in percent.
pub fn report_table(report: &EvaluationReport) -> String {
    let header = ["condition", "samples", "flagged %", "min", "median", "mean", "max"];
    let row = |label: &str, r: &ConditionResult| {
        vec![
            label.to_string(),
            r.samples.to_string(),
            percent(r.detection_rate),
            format!("{:.4}", r.summary.min),
            format!("{:.4}", r.summary.median),
            format!("{:.4}", r.summary.mean),
            format!("{:.4}", r.summary.max),
        ]
    };
    let mut rows = vec![header.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
    rows.push(row(CLEAN_CONDITION, &report.clean));
    for (label, r) in &report.per_condition {
        rows.push(row(label, r));
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "dataset: {}  threshold: {:.6}  clean FPR: {}%  AUC: {:.4}",
        report.dataset_name,
        report.threshold,
        percent(report.clean_fpr),
        report.auc
    );
    if report.clean_overlaps_calibration {
        out.push_str("warning: clean set overlaps the calibration set; FPR is a self-check\n");
    }
    for r in &rows {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}
