//! Regularized gradient-boosted trees for binary classification.
//!
//! Each round fits a regression tree to the first and second derivatives of
//! the logistic loss at the current margins. Leaves are scored with an
//! elastic-net penalty (`gamma` per leaf, `lambda_l2` on squared weights,
//! `alpha` on absolute weights). Splits are found by exact greedy search.

mod artifact;
mod grid;
mod metrics;
mod split;
mod train;
mod tree;

pub use artifact::{ModelArtifact, ARTIFACT_FORMAT, ARTIFACT_VERSION};
pub use grid::{grid_search, rank, write_leaderboard_csv, GridResult, LeaderboardRow, ParamGrid};
pub use metrics::{evaluate, Confusion, Metrics};
pub use split::{best_split, leaf_weight, split_score, SplitCandidate};
pub use train::{train_ensemble, train_with_trace, TrainData};
pub use tree::{TreeEnsemble, TreeNode};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GbmError {
    #[error("training data is empty")]
    EmptyData,
    #[error("training data contains a single class")]
    SingleClassData,
    #[error("row {0} has no label")]
    Unlabeled(usize),
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("leaf has zero curvature (H + lambda_l2 = 0)")]
    DegenerateLeaf,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("i/o: {0}")]
    Io(String),
}

/// Hyperparameters. Defaults are the selected values of the tuning grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub subsample: f64,
    pub colsample_bytree: f64,
    /// Minimum hessian mass in each child of a split.
    pub min_child_weight: f64,
    pub alpha: f64,
    pub lambda_l2: f64,
    #[serde(default)]
    pub gamma: f64,
    /// Initial margin; `None` means the log-odds of the training positive rate.
    #[serde(default)]
    pub base_score: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            learning_rate: 0.05,
            max_depth: 3,
            subsample: 0.8,
            colsample_bytree: 0.8,
            min_child_weight: 3.0,
            alpha: 0.1,
            lambda_l2: 1.0,
            gamma: 0.0,
            base_score: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), GbmError> {
        let bad = |m: &str| Err(GbmError::InvalidConfig(m.to_string()));
        if self.n_estimators < 1 {
            return bad("n_estimators must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must lie in (0, 1]");
        }
        if self.max_depth < 1 {
            return bad("max_depth must be at least 1");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must lie in (0, 1]");
        }
        if !(self.colsample_bytree > 0.0 && self.colsample_bytree <= 1.0) {
            return bad("colsample_bytree must lie in (0, 1]");
        }
        if !(self.alpha >= 0.0 && self.lambda_l2 >= 0.0 && self.gamma >= 0.0) {
            return bad("alpha, lambda_l2 and gamma must be non-negative");
        }
        if !(self.min_child_weight >= 0.0) {
            return bad("min_child_weight must be non-negative");
        }
        if matches!(self.base_score, Some(b) if !b.is_finite()) {
            return bad("base_score must be finite");
        }
        Ok(())
    }
}

/// Floor on the logistic hessian so every node keeps positive cover.
pub const MIN_HESSIAN: f64 = 1e-16;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic loss `log(1 + e^m) - y m`.
pub fn logistic_loss(margin: f64, label: f64) -> f64 {
    let softplus = if margin > 0.0 {
        margin + (-margin).exp().ln_1p()
    } else {
        margin.exp().ln_1p()
    };
    softplus - label * margin
}

/// First and second derivative of the logistic loss with respect to the margin.
pub fn logistic_grad_hess(margin: f64, label: f64) -> (f64, f64) {
    let p = sigmoid(margin);
    (p - label, (p * (1.0 - p)).max(MIN_HESSIAN))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grad_hess_at_zero() {
        assert_eq!(logistic_grad_hess(0.0, 1.0), (-0.5, 0.25));
        assert_eq!(logistic_grad_hess(0.0, 0.0), (0.5, 0.25));
    }

    #[test]
    fn grad_hess_at_two() {
        let (g, h) = logistic_grad_hess(2.0, 1.0);
        assert!((g - (-0.119_202_922)).abs() < 1e-8);
        assert!((h - 0.104_993_585).abs() < 1e-8);
    }

    fn central_diff(f: impl Fn(f64) -> f64, x: f64, step: f64) -> f64 {
        (f(x + step) - f(x - step)) / (2.0 * step)
    }

    proptest! {
        #[test]
        fn derivatives_match_finite_differences(m in -10.0f64..10.0, y in 0u8..2) {
            let y = y as f64;
            let (g, h) = logistic_grad_hess(m, y);
            let fd_g = central_diff(|t| logistic_loss(t, y), m, 1e-5);
            let fd_h = central_diff(|t| logistic_grad_hess(t, y).0, m, 1e-5);
            prop_assert!((g - fd_g).abs() < 1e-6);
            prop_assert!((h - fd_h).abs() < 1e-6);
            prop_assert!(h > 0.0);
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(GbmError::InvalidConfig(_))));
        let bad = TrainConfig {
            subsample: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
