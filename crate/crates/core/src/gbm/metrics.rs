use serde::{Deserialize, Serialize};

use super::{GbmError, TreeEnsemble};
use crate::dataset::FeatureVector;

/// Counts with "good sleep" (1) as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn from_pairs(truth: &[u8], predicted: &[u8]) -> Self {
        let mut c = Confusion::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t, p) {
                (1, 1) => c.tp += 1,
                (0, 1) => c.fp += 1,
                (0, 0) => c.tn += 1,
                _ => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// Zero when nothing was predicted positive; see `precision_defined`.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_defined: bool,
    pub recall_defined: bool,
    pub confusion: Confusion,
}

impl Metrics {
    pub fn from_confusion(c: Confusion) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                (0.0, false)
            } else {
                (num as f64 / den as f64, true)
            }
        };
        let (precision, precision_defined) = ratio(c.tp, c.tp + c.fp);
        let (recall, recall_defined) = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metrics {
            accuracy: (c.tp + c.tn) as f64 / c.total().max(1) as f64,
            precision,
            recall,
            f1,
            precision_defined,
            recall_defined,
            confusion: c,
        }
    }
}

/// Scores `model` on labeled rows at the 0.5 probability threshold.
pub fn evaluate(model: &TreeEnsemble, rows: &[FeatureVector]) -> Result<Metrics, GbmError> {
    if rows.is_empty() {
        return Err(GbmError::EmptyData);
    }
    let mut truth = Vec::with_capacity(rows.len());
    let mut predicted = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        truth.push(r.label.ok_or(GbmError::Unlabeled(i))?.as_u8());
        predicted.push(model.classify(&r.values)?);
    }
    Ok(Metrics::from_confusion(Confusion::from_pairs(&truth, &predicted)))
}
