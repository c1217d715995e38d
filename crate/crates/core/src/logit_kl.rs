//! First-token distribution shift between a fine-tuned and a pre-trained
//! model, restricted to the fine-tuned model's top-10 tokens.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::JsonlError;

/// Number of leading tokens kept from each record.
pub const TOP_K: usize = 10;

const NORM_TOL: f64 = 1e-9;

#[derive(Error, Debug)]
pub enum KlError {
    #[error("record {id}: {reason}")]
    InvalidRecord { id: String, reason: String },
    #[error("non-finite logit at position {0}")]
    NonFinite(usize),
    #[error("expected {TOP_K} logits per side, got {0} and {1}")]
    Length(usize, usize),
    #[error("distribution is not normalized (sum {0})")]
    NotNormalized(f64),
    #[error("distribution has a non-positive reference probability at {0}")]
    ZeroReference(usize),
    #[error("no records")]
    NoData,
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

pub type Result<T> = std::result::Result<T, KlError>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<u32>,
    /// Fields the runner adds (answer offset and the like) are kept as-is.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// One example's first-token logits. `token_ids` are the fine-tuned
/// model's top-K ids in descending ft-logit order, exact ties broken by
/// ascending token id; `pt_logits` are the pre-trained logits at those ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitsPairRecord {
    pub example_id: String,
    pub token_ids: Vec<u64>,
    pub ft_logits: Vec<f64>,
    pub pt_logits: Vec<f64>,
    #[serde(default)]
    pub meta: RecordMeta,
}

impl LogitsPairRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| {
            Err(KlError::InvalidRecord {
                id: self.example_id.clone(),
                reason,
            })
        };
        let k = self.token_ids.len();
        if self.ft_logits.len() != k || self.pt_logits.len() != k {
            return bad(format!(
                "length mismatch: {} ids, {} ft logits, {} pt logits",
                k,
                self.ft_logits.len(),
                self.pt_logits.len()
            ));
        }
        if k < TOP_K {
            return bad(format!("needs at least {TOP_K} tokens, has {k}"));
        }
        let mut ids = self.token_ids.clone();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate token id".into());
        }
        if let Some(i) = self.ft_logits.windows(2).position(|w| w[1] > w[0]) {
            return bad(format!("ft_logits increase at position {}", i + 1));
        }
        Ok(())
    }
}

fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = logits.iter().position(|x| !x.is_finite()) {
        return Err(KlError::NonFinite(i));
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    Ok(logits.iter().map(|x| x - m - lse).collect())
}

/// Softmax of both sides, each shifted by its own maximum.
pub fn renormalize(ft_logits: &[f64], pt_logits: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if ft_logits.len() != TOP_K || pt_logits.len() != TOP_K {
        return Err(KlError::Length(ft_logits.len(), pt_logits.len()));
    }
    let p = log_softmax(ft_logits)?.into_iter().map(f64::exp).collect();
    let q = log_softmax(pt_logits)?.into_iter().map(f64::exp).collect();
    Ok((p, q))
}

/// `sum p_i ln(p_i / q_i)`; terms with `p_i == 0` are dropped.
pub fn kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(KlError::Length(p.len(), q.len()));
    }
    for d in [p, q] {
        let s: f64 = d.iter().sum();
        if (s - 1.0).abs() > NORM_TOL || d.iter().any(|x| !(*x >= 0.0)) {
            return Err(KlError::NotNormalized(s));
        }
    }
    let mut acc = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return Err(KlError::ZeroReference(i));
        }
        acc += pi * (pi / qi).ln();
    }
    Ok(acc)
}

/// KL for one record, computed in log space so that tiny reference
/// probabilities do not underflow.
pub fn record_kl(rec: &LogitsPairRecord) -> Result<f64> {
    rec.validate()?;
    let lp = log_softmax(&rec.ft_logits[..TOP_K])?;
    let lq = log_softmax(&rec.pt_logits[..TOP_K])?;
    Ok(lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum())
}

/// Running mean and variance (Welford), mergeable (Chan et al.).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.m2 / self.n as f64).max(0.0).sqrt()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupStats {
    pub n: u64,
    pub mean: f64,
    pub std: f64,
}

impl From<&Moments> for GroupStats {
    fn from(m: &Moments) -> Self {
        GroupStats {
            n: m.n,
            mean: m.mean(),
            std: m.std(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KlReport {
    pub n_records: u64,
    pub mean_kl: f64,
    pub std_kl: f64,
    /// Keyed by `meta.topic`; records without a topic count only globally.
    pub per_group: BTreeMap<String, GroupStats>,
    /// Always "unweighted_mean"; std is the population deviation.
    pub aggregation: &'static str,
}

impl KlReport {
    /// One row for the whole set (group `all`) and one per topic.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["group", "n", "mean_kl", "std_kl"]).unwrap();
        let all = GroupStats {
            n: self.n_records,
            mean: self.mean_kl,
            std: self.std_kl,
        };
        for (g, s) in std::iter::once(("all", &all)).chain(self.per_group.iter().map(|(k, v)| (k.as_str(), v))) {
            w.write_record([g, &s.n.to_string(), &s.mean.to_string(), &s.std.to_string()])
                .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

pub fn aggregate_kl<I, E>(records: I) -> Result<KlReport>
where
    I: IntoIterator<Item = std::result::Result<LogitsPairRecord, E>>,
    KlError: From<E>,
{
    let mut all = Moments::default();
    let mut groups: BTreeMap<String, Moments> = BTreeMap::new();
    for rec in records {
        let rec = rec?;
        let v = record_kl(&rec)?;
        all.push(v);
        if let Some(t) = &rec.meta.topic {
            groups.entry(t.clone()).or_default().push(v);
        }
    }
    if all.n == 0 {
        return Err(KlError::NoData);
    }
    Ok(KlReport {
        n_records: all.n,
        mean_kl: all.mean().max(0.0),
        std_kl: all.std(),
        per_group: groups.iter().map(|(k, m)| (k.clone(), m.into())).collect(),
        aggregation: "unweighted_mean",
    })
}
