//! Confusion-count metrics. Undefined ratios are `None`, never 0.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::StratifyError;
use crate::model::ConfusionCounts;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct Metrics<T> {
    #[serde(with = "opt_float")]
    pub accuracy: Option<T>,
    #[serde(with = "opt_float")]
    pub precision: Option<T>,
    #[serde(with = "opt_float")]
    pub sensitivity: Option<T>,
    #[serde(with = "opt_float")]
    pub f1: Option<T>,
    /// `Some(inf)` when `fp * fn == 0` and `tp * tn > 0`.
    #[serde(with = "opt_float")]
    pub dor: Option<T>,
}

fn ratio<T: Scalar>(num: u64, den: u64) -> Option<T> {
    (den > 0).then(|| T::of(num as f64) / T::of(den as f64))
}

impl<T: Scalar> Metrics<T> {
    pub fn from_counts(c: &ConfusionCounts) -> Self {
        let accuracy = ratio(c.tp + c.tn, c.total());
        let precision = ratio(c.tp, c.tp + c.fp);
        let sensitivity = ratio(c.tp, c.tp + c.fn_);
        let f1 = match (precision, sensitivity) {
            (Some(p), Some(r)) if p + r > T::zero() => Some(T::of(2.0) * (p * r) / (p + r)),
            _ => None,
        };
        let num = T::of(c.tp as f64) * T::of(c.tn as f64);
        let den = T::of(c.fp as f64) * T::of(c.fn_ as f64);
        let dor = if den > T::zero() {
            Some(num / den)
        } else if num > T::zero() {
            Some(T::infinity())
        } else {
            None
        };
        Metrics { accuracy, precision, sensitivity, f1, dor }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct Evaluation<T> {
    pub metrics: Metrics<T>,
    pub counts: ConfusionCounts,
}

pub fn evaluate<T: Scalar>(predicted: &[bool], truth: &[bool]) -> Result<Evaluation<T>, StratifyError> {
    if predicted.len() != truth.len() {
        return Err(StratifyError::LengthMismatch { left: predicted.len(), right: truth.len() });
    }
    if predicted.is_empty() {
        return Err(StratifyError::EmptyDataset);
    }
    let counts = ConfusionCounts::from_labels(predicted, truth);
    Ok(Evaluation { metrics: Metrics::from_counts(&counts), counts })
}

/// Area under the ROC curve via the rank-sum statistic, ties sharing the
/// average rank. `None` when either class is absent.
pub fn roc_auc<T: Scalar>(scores: &[T], truth: &[bool]) -> Option<T> {
    if scores.len() != truth.len() {
        return None;
    }
    let pos = truth.iter().filter(|t| **t).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut rank_sum = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| truth[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Some(T::of((rank_sum - p * (p + 1.0) / 2.0) / (p * n)))
}

/// Optional floats as JSON: `null` when undefined, `"Infinity"` for +inf.
mod opt_float {
    use super::*;

    pub fn serialize<T: Scalar, S: Serializer>(v: &Option<T>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(x) if x.is_infinite() && *x > T::zero() => s.serialize_str("Infinity"),
            Some(x) => s.serialize_f64(x.as_f64()),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, T: Scalar, D: Deserializer<'de>>(d: D) -> Result<Option<T>, D::Error> {
        match Option::<Repr>::deserialize(d)? {
            None => Ok(None),
            Some(Repr::Num(v)) => Ok(Some(T::of(v))),
            Some(Repr::Text(t)) if t == "Infinity" => Ok(Some(T::infinity())),
            Some(Repr::Text(t)) => Err(serde::de::Error::custom(format!("unexpected metric value `{t}`"))),
        }
    }
}
