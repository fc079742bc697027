//! Exact Shapley attributions for tree ensembles and their aggregation into
//! optimization weights.
//!
//! Attributions are on the margin (log-odds) scale. Features outside a
//! coalition are marginalized along the tree using node covers, so the
//! expected value of a tree is its cover-weighted mean leaf.

use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::FeatureVector;
use crate::gbm::{TreeEnsemble, TreeNode};
use crate::schema::SurveySchema;

/// Above this many features the subset oracle is refused (2^15 coalitions).
pub const MAX_ORACLE_FEATURES: usize = 15;

#[derive(Debug, Error, PartialEq)]
pub enum ShapError {
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("tree node has non-positive cover")]
    ZeroCover,
    #[error("brute-force Shapley supports at most {MAX_ORACLE_FEATURES} features, got {0}")]
    TooManyFeatures(usize),
    #[error("attribution report has no samples")]
    EmptyReport,
    #[error("weights do not include feature `{0}`")]
    MissingFeature(String),
    #[error("i/o: {0}")]
    Io(String),
}

fn check_dim(model: &TreeEnsemble, x: &[f64]) -> Result<(), ShapError> {
    if x.len() != model.feature_count {
        return Err(ShapError::DimensionMismatch {
            expected: model.feature_count,
            got: x.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct PathElement {
    feature: Option<usize>,
    zero_fraction: f64,
    one_fraction: f64,
    weight: f64,
}

fn extend_path(path: &mut Vec<PathElement>, zero_fraction: f64, one_fraction: f64, feature: Option<usize>) {
    let depth = path.len();
    path.push(PathElement {
        feature,
        zero_fraction,
        one_fraction,
        weight: if depth == 0 { 1.0 } else { 0.0 },
    });
    let denom = (depth + 1) as f64;
    for i in (0..depth).rev() {
        path[i + 1].weight += one_fraction * path[i].weight * (i + 1) as f64 / denom;
        path[i].weight = zero_fraction * path[i].weight * (depth - i) as f64 / denom;
    }
}

fn unwind_path(path: &mut Vec<PathElement>, index: usize) {
    let last = path.len() - 1;
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let mut next_one_portion = path[last].weight;
    let denom = (last + 1) as f64;
    for i in (0..last).rev() {
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next_one_portion * denom / ((i + 1) as f64 * one);
            next_one_portion = tmp - path[i].weight * zero * (last - i) as f64 / denom;
        } else {
            path[i].weight = path[i].weight * denom / (zero * (last - i) as f64);
        }
    }
    // Weights stay in place; only the identities shift down over the removed slot.
    for i in index..last {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
    path.pop();
}

/// Total permutation weight of the path with element `index` removed.
fn unwound_path_sum(path: &[PathElement], index: usize) -> f64 {
    let last = path.len() - 1;
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let denom = (last + 1) as f64;
    let mut next_one_portion = path[last].weight;
    let mut total = 0.0;
    for i in (0..last).rev() {
        if one != 0.0 {
            let tmp = next_one_portion * denom / ((i + 1) as f64 * one);
            total += tmp;
            next_one_portion = path[i].weight - tmp * zero * (last - i) as f64 / denom;
        } else {
            total += path[i].weight * denom / (zero * (last - i) as f64);
        }
    }
    total
}

struct ShapWalk<'a> {
    x: &'a [f64],
    scale: f64,
    phi: &'a mut [f64],
}

impl ShapWalk<'_> {
    fn recurse(
        &mut self,
        node: &TreeNode,
        mut path: Vec<PathElement>,
        zero_fraction: f64,
        one_fraction: f64,
        feature: Option<usize>,
    ) -> Result<(), ShapError> {
        extend_path(&mut path, zero_fraction, one_fraction, feature);
        match node {
            TreeNode::Leaf { weight, .. } => {
                let value = self.scale * weight;
                for i in 1..path.len() {
                    let w = unwound_path_sum(&path, i);
                    let el = path[i];
                    let f = el.feature.expect("only the root element lacks a feature");
                    self.phi[f] += w * (el.one_fraction - el.zero_fraction) * value;
                }
                Ok(())
            }
            TreeNode::Split {
                feature: split,
                threshold,
                cover,
                left,
                right,
            } => {
                if !(*cover > 0.0) || !(left.cover() >= 0.0) || !(right.cover() >= 0.0) {
                    return Err(ShapError::ZeroCover);
                }
                let (hot, cold) = if self.x[*split] <= *threshold {
                    (left, right)
                } else {
                    (right, left)
                };
                let mut incoming_zero = 1.0;
                let mut incoming_one = 1.0;
                if let Some(k) = path.iter().position(|e| e.feature == Some(*split)) {
                    incoming_zero = path[k].zero_fraction;
                    incoming_one = path[k].one_fraction;
                    unwind_path(&mut path, k);
                }
                self.recurse(
                    hot,
                    path.clone(),
                    incoming_zero * hot.cover() / cover,
                    incoming_one,
                    Some(*split),
                )?;
                self.recurse(cold, path, incoming_zero * cold.cover() / cover, 0.0, Some(*split))
            }
        }
    }
}

/// Expected margin under cover-weighted marginalization of every feature.
pub fn expected_margin(model: &TreeEnsemble) -> f64 {
    model.trees.iter().fold(model.base_score, |acc, t| {
        acc + model.learning_rate * t.expected_value()
    })
}

/// Path-dependent tree Shapley values of one instance. Returns `(phi, base_value)`.
pub fn tree_shap(model: &TreeEnsemble, x: &[f64]) -> Result<(Vec<f64>, f64), ShapError> {
    check_dim(model, x)?;
    let mut phi = vec![0.0; model.feature_count];
    for tree in &model.trees {
        tree_shap_single(tree, x, model.learning_rate, &mut phi)?;
    }
    Ok((phi, expected_margin(model)))
}

/// Adds `scale` times the Shapley values of one tree to `phi`.
pub fn tree_shap_single(tree: &TreeNode, x: &[f64], scale: f64, phi: &mut [f64]) -> Result<(), ShapError> {
    let mut walk = ShapWalk { x, scale, phi };
    walk.recurse(tree, Vec::with_capacity(8), 1.0, 1.0, None)
}

/// Cover-weighted expected tree output with features in `known` fixed to `x`.
fn conditional_expectation(node: &TreeNode, x: &[f64], known: u32) -> Result<f64, ShapError> {
    match node {
        TreeNode::Leaf { weight, .. } => Ok(*weight),
        TreeNode::Split {
            feature,
            threshold,
            cover,
            left,
            right,
        } => {
            if known & (1 << feature) != 0 {
                let child = if x[*feature] <= *threshold { left } else { right };
                conditional_expectation(child, x, known)
            } else {
                if !(*cover > 0.0) {
                    return Err(ShapError::ZeroCover);
                }
                let l = conditional_expectation(left, x, known)?;
                let r = conditional_expectation(right, x, known)?;
                Ok((left.cover() * l + right.cover() * r) / cover)
            }
        }
    }
}

/// Shapley values by enumerating every coalition. Exponential; meant as a
/// reference for small models.
pub fn brute_force_shapley(model: &TreeEnsemble, x: &[f64]) -> Result<Vec<f64>, ShapError> {
    check_dim(model, x)?;
    let f = model.feature_count;
    if f > MAX_ORACLE_FEATURES {
        return Err(ShapError::TooManyFeatures(f));
    }
    let subsets = 1usize << f;
    let mut value = vec![0.0; subsets];
    for (mask, v) in value.iter_mut().enumerate() {
        let mut total = 0.0;
        for t in &model.trees {
            total += model.learning_rate * conditional_expectation(t, x, mask as u32)?;
        }
        *v = total;
    }
    // weight[s] = s! (f - s - 1)! / f!
    let mut fact = vec![1.0f64; f + 1];
    for i in 1..=f {
        fact[i] = fact[i - 1] * i as f64;
    }
    let weight: Vec<f64> = (0..f).map(|s| fact[s] * fact[f - s - 1] / fact[f]).collect();
    let mut phi = vec![0.0; f];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        for mask in 0..subsets {
            if mask & bit == 0 {
                let s = mask.count_ones() as usize;
                *p += weight[s] * (value[mask | bit] - value[mask]);
            }
        }
    }
    Ok(phi)
}

/// Attributions for a batch of instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub feature_names: Vec<String>,
    pub sample_ids: Vec<usize>,
    pub phi: Vec<Vec<f64>>,
    pub base_value: f64,
}

impl AttributionReport {
    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    /// Largest `|base_value + sum(phi) - margin|` over the samples.
    pub fn max_local_error(&self, model: &TreeEnsemble, rows: &[FeatureVector]) -> Result<f64, ShapError> {
        let mut worst = 0.0f64;
        for (phi, row) in self.phi.iter().zip(rows) {
            check_dim(model, &row.values)?;
            let margin = model.predict_margin(&row.values).expect("dimension checked");
            let recon = self.base_value + phi.iter().sum::<f64>();
            worst = worst.max((recon - margin).abs());
        }
        Ok(worst)
    }

    /// Long-format CSV: `sample_id,feature,phi`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ShapError> {
        let io = |e: csv::Error| ShapError::Io(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sample_id", "feature", "phi"]).map_err(io)?;
        for (id, row) in self.sample_ids.iter().zip(&self.phi) {
            for (name, v) in self.feature_names.iter().zip(row) {
                w.write_record([id.to_string(), name.clone(), v.to_string()])
                    .map_err(io)?;
            }
        }
        w.flush().map_err(|e| ShapError::Io(e.to_string()))
    }
}

/// Explains every row; `sample_ids` default to row positions.
pub fn explain_rows(
    model: &TreeEnsemble,
    rows: &[FeatureVector],
    feature_names: &[String],
    sample_ids: Option<&[usize]>,
) -> Result<AttributionReport, ShapError> {
    let mut phi = Vec::with_capacity(rows.len());
    for r in rows {
        phi.push(tree_shap(model, &r.values)?.0);
    }
    Ok(AttributionReport {
        feature_names: feature_names.to_vec(),
        sample_ids: sample_ids.map_or_else(|| (0..rows.len()).collect(), <[usize]>::to_vec),
        phi,
        base_value: expected_margin(model),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureWeight {
    pub raw: f64,
    pub normalized: f64,
}

pub const REFERENCE_WEIGHTS_JSON: &str = include_str!("../assets/reference_weights.json");

/// Mean absolute attribution per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub weights: IndexMap<String, FeatureWeight>,
    /// Sum of raw weights over all model features.
    pub total_mass: f64,
    /// Set when every raw weight is zero and normalization is undefined.
    #[serde(default)]
    pub degenerate: bool,
}

impl WeightVector {
    /// Builds weights from raw values, normalizing by `total_mass`.
    pub fn from_raw(raw: IndexMap<String, f64>, total_mass: f64) -> Self {
        let degenerate = total_mass <= 0.0;
        let weights = raw
            .into_iter()
            .map(|(k, r)| {
                let normalized = if degenerate { 0.0 } else { r / total_mass };
                (k, FeatureWeight { raw: r, normalized })
            })
            .collect();
        Self {
            weights,
            total_mass,
            degenerate,
        }
    }

    /// Published population weights for the seven actionable fields, used as
    /// a fixed fixture when no trained model is at hand.
    pub fn reference() -> Self {
        Self::from_json(REFERENCE_WEIGHTS_JSON).expect("bundled reference weights are valid")
    }

    pub fn raw(&self, name: &str) -> Option<f64> {
        self.weights.get(name).map(|w| w.raw)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("weights serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, ShapError> {
        let w: WeightVector = serde_json::from_str(s).map_err(|e| ShapError::Io(e.to_string()))?;
        if w.weights.values().any(|v| !(v.raw >= 0.0) || !v.raw.is_finite()) {
            return Err(ShapError::Io("weights must be finite and non-negative".into()));
        }
        Ok(w)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ShapError> {
        let s = std::fs::read_to_string(path).map_err(|e| ShapError::Io(e.to_string()))?;
        Self::from_json(&s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ShapError> {
        std::fs::write(path, self.to_json()).map_err(|e| ShapError::Io(e.to_string()))
    }
}

/// `w_i = mean_n |phi[n][i]|`, normalized by the total over all features.
pub fn mean_abs_weights(report: &AttributionReport) -> Result<WeightVector, ShapError> {
    if report.phi.is_empty() {
        return Err(ShapError::EmptyReport);
    }
    let n = report.phi.len() as f64;
    let mut raw = IndexMap::with_capacity(report.feature_names.len());
    for (i, name) in report.feature_names.iter().enumerate() {
        let sum: f64 = report.phi.iter().map(|row| row[i].abs()).sum();
        raw.insert(name.clone(), sum / n);
    }
    let total: f64 = raw.values().sum();
    Ok(WeightVector::from_raw(raw, total))
}

/// Raw weights of the schema's actionable fields, in schema order.
pub fn actionable_weights(weights: &WeightVector, schema: &SurveySchema) -> Result<Vec<(String, f64)>, ShapError> {
    schema
        .actionable_names()
        .into_iter()
        .map(|name| {
            weights
                .raw(name)
                .map(|w| (name.to_string(), w))
                .ok_or_else(|| ShapError::MissingFeature(name.to_string()))
        })
        .collect()
}
