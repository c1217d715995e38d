//! Closed-book QA accuracy per mastery bucket, and summaries over runs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::JsonlError;
use crate::mastery::{match_answer_with, KnowledgeItem, MatchOptions, Synonyms, BUCKETS};

#[derive(Error, Debug)]
pub enum EvalError {
    #[error("prediction for unknown item {0}")]
    UnknownItem(String),
    #[error("item {0} has no mastery bucket")]
    Unbucketed(String),
    #[error("duplicate prediction for item {item_id} in run {run_id}")]
    Duplicate { item_id: String, run_id: String },
    #[error("bucket {bucket} has no predictions in run {run_id}")]
    EmptyBucket { bucket: usize, run_id: String },
    #[error("no predictions for run {0}")]
    NoPredictions(String),
    #[error("nothing to summarize")]
    NoReports,
    #[error("sample variance needs at least two runs")]
    TooFewRuns,
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub item_id: String,
    pub prediction: String,
    pub run_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub run_id: String,
    pub per_bucket: [f64; BUCKETS],
    pub n_per_bucket: [u64; BUCKETS],
    pub correct_per_bucket: [u64; BUCKETS],
    /// Unweighted mean of `per_bucket`.
    pub aggregate: f64,
}

/// Mean of the bucket accuracies, independent of bucket sizes.
pub fn aggregate_accuracy(per_bucket: &[f64; BUCKETS]) -> f64 {
    per_bucket.iter().sum::<f64>() / BUCKETS as f64
}

impl AccuracyReport {
    pub fn from_counts(run_id: &str, correct: [u64; BUCKETS], n: [u64; BUCKETS]) -> Result<Self> {
        if let Some(b) = n.iter().position(|&x| x == 0) {
            return Err(EvalError::EmptyBucket {
                bucket: b,
                run_id: run_id.to_string(),
            });
        }
        let per_bucket: [f64; BUCKETS] = std::array::from_fn(|i| correct[i] as f64 / n[i] as f64);
        Ok(AccuracyReport {
            run_id: run_id.to_string(),
            aggregate: aggregate_accuracy(&per_bucket),
            per_bucket,
            n_per_bucket: n,
            correct_per_bucket: correct,
        })
    }
}

/// Score one run. Only predictions tagged with `run_id` are considered;
/// each bucket's denominator is the number of its predictions present.
pub fn score_run(
    predictions: &[PredictionRecord],
    items: &[KnowledgeItem],
    buckets: &BTreeMap<String, u8>,
    synonyms: &Synonyms,
    run_id: &str,
    opts: MatchOptions,
) -> Result<AccuracyReport> {
    let by_id: BTreeMap<&str, &KnowledgeItem> = items.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut seen = BTreeSet::new();
    let mut correct = [0u64; BUCKETS];
    let mut n = [0u64; BUCKETS];
    for p in predictions.iter().filter(|p| p.run_id == run_id) {
        let item = by_id
            .get(p.item_id.as_str())
            .ok_or_else(|| EvalError::UnknownItem(p.item_id.clone()))?;
        let b = *buckets
            .get(&p.item_id)
            .ok_or_else(|| EvalError::Unbucketed(p.item_id.clone()))? as usize;
        if !seen.insert(p.item_id.as_str()) {
            return Err(EvalError::Duplicate {
                item_id: p.item_id.clone(),
                run_id: run_id.to_string(),
            });
        }
        n[b] += 1;
        if match_answer_with(&p.prediction, synonyms.aliases_for(&item.object), opts) {
            correct[b] += 1;
        }
    }
    if seen.is_empty() {
        return Err(EvalError::NoPredictions(run_id.to_string()));
    }
    AccuracyReport::from_counts(run_id, correct, n)
}

/// Distinct run ids in first-seen order.
pub fn run_ids(predictions: &[PredictionRecord]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    predictions
        .iter()
        .filter(|p| seen.insert(p.run_id.as_str()))
        .map(|p| p.run_id.clone())
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variance {
    #[default]
    Population,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanVar {
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub n_runs: usize,
    pub variance_kind: Variance,
    pub per_bucket: Vec<MeanVar>,
    pub aggregate: MeanVar,
}

fn mean_var(xs: &[f64], kind: Variance) -> MeanVar {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    let variance = match kind {
        Variance::Population => ss / n,
        Variance::Sample => ss / (n - 1.0),
    };
    MeanVar { mean, variance }
}

pub fn summarize_runs(reports: &[AccuracyReport], kind: Variance) -> Result<RunSummary> {
    if reports.is_empty() {
        return Err(EvalError::NoReports);
    }
    if kind == Variance::Sample && reports.len() < 2 {
        return Err(EvalError::TooFewRuns);
    }
    let column = |f: &dyn Fn(&AccuracyReport) -> f64| reports.iter().map(f).collect::<Vec<_>>();
    Ok(RunSummary {
        n_runs: reports.len(),
        variance_kind: kind,
        per_bucket: (0..BUCKETS).map(|b| mean_var(&column(&|r| r.per_bucket[b]), kind)).collect(),
        aggregate: mean_var(&column(&|r| r.aggregate), kind),
    })
}

const CSV_HEADER: [&str; 7] = ["row", "Acc_0", "Acc_1", "Acc_2", "Acc_3", "Acc_4", "Acc"];

fn csv_text(rows: impl IntoIterator<Item = (String, [f64; BUCKETS], f64)>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).unwrap();
    for (label, b, agg) in rows {
        let mut rec = vec![label];
        rec.extend(b.iter().chain([&agg]).map(|v| v.to_string()));
        w.write_record(rec).unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// One row per run, labelled by run id.
pub fn reports_csv(reports: &[AccuracyReport]) -> String {
    csv_text(reports.iter().map(|r| (r.run_id.clone(), r.per_bucket, r.aggregate)))
}

/// Rows `mean` and `variance`.
pub fn summary_csv(s: &RunSummary) -> String {
    let pick = |f: fn(&MeanVar) -> f64| -> [f64; BUCKETS] { std::array::from_fn(|b| f(&s.per_bucket[b])) };
    csv_text([
        ("mean".to_string(), pick(|m| m.mean), s.aggregate.mean),
        ("variance".to_string(), pick(|m| m.variance), s.aggregate.variance),
    ])
}
