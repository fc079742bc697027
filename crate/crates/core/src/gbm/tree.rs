use serde::{Deserialize, Serialize};

use super::GbmError;

/// A regression tree node. Samples with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        /// Hessian mass routed through the node; equals the children's sum.
        cover: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        weight: f64,
        cover: f64,
    },
}

impl TreeNode {
    pub fn leaf(weight: f64, cover: f64) -> Self {
        TreeNode::Leaf { weight, cover }
    }

    /// Builds a split whose cover is the sum of its children's covers.
    pub fn split(feature: usize, threshold: f64, left: TreeNode, right: TreeNode) -> Self {
        TreeNode::Split {
            feature,
            threshold,
            cover: left.cover() + right.cover(),
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn cover(&self) -> f64 {
        match self {
            TreeNode::Split { cover, .. } | TreeNode::Leaf { cover, .. } => *cover,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, TreeNode::Leaf { .. })
    }

    /// Raw leaf value reached by `x` (not scaled by the learning rate).
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { weight, .. } => return *weight,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    /// Cover-weighted mean leaf value.
    pub fn expected_value(&self) -> f64 {
        match self {
            TreeNode::Leaf { weight, .. } => *weight,
            TreeNode::Split { cover, left, right, .. } => {
                (left.cover() * left.expected_value() + right.cover() * right.expected_value()) / cover
            }
        }
    }

    pub fn visit_features(&self, f: &mut impl FnMut(usize)) {
        if let TreeNode::Split {
            feature, left, right, ..
        } = self
        {
            f(*feature);
            left.visit_features(f);
            right.visit_features(f);
        }
    }

    /// Checks feature indices, finiteness, positive covers and cover additivity
    /// (relative tolerance `tol`).
    pub fn validate(&self, feature_count: usize, tol: f64) -> Result<(), GbmError> {
        let bad = |m: String| Err(GbmError::InvalidModel(m));
        match self {
            TreeNode::Leaf { weight, cover } => {
                if !weight.is_finite() {
                    return bad("non-finite leaf weight".into());
                }
                if !(*cover > 0.0) || !cover.is_finite() {
                    return bad(format!("leaf cover {cover} is not positive"));
                }
                Ok(())
            }
            TreeNode::Split {
                feature,
                threshold,
                cover,
                left,
                right,
            } => {
                if *feature >= feature_count {
                    return bad(format!("split feature {feature} >= feature count {feature_count}"));
                }
                if !threshold.is_finite() {
                    return bad("non-finite threshold".into());
                }
                if !(*cover > 0.0) || !cover.is_finite() {
                    return bad(format!("node cover {cover} is not positive"));
                }
                let sum = left.cover() + right.cover();
                if (sum - cover).abs() > tol * cover.abs().max(1.0) {
                    return bad(format!("node cover {cover} differs from children sum {sum}"));
                }
                left.validate(feature_count, tol)?;
                right.validate(feature_count, tol)
            }
        }
    }
}

/// Additive model: `margin(x) = base_score + sum_k learning_rate * f_k(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub trees: Vec<TreeNode>,
    pub learning_rate: f64,
    pub base_score: f64,
    pub feature_count: usize,
}

impl TreeEnsemble {
    pub fn check_dim(&self, x: &[f64]) -> Result<(), GbmError> {
        if x.len() != self.feature_count {
            return Err(GbmError::DimensionMismatch {
                expected: self.feature_count,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Same accumulation order as the training margin updates.
    pub(crate) fn margin_unchecked(&self, x: &[f64]) -> f64 {
        let mut m = self.base_score;
        for t in &self.trees {
            m += self.learning_rate * t.eval(x);
        }
        m
    }

    pub fn predict_margin(&self, x: &[f64]) -> Result<f64, GbmError> {
        self.check_dim(x)?;
        Ok(self.margin_unchecked(x))
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, GbmError> {
        Ok(super::sigmoid(self.predict_margin(x)?))
    }

    /// Good (1) when the probability is at least 0.5.
    pub fn classify(&self, x: &[f64]) -> Result<u8, GbmError> {
        Ok(u8::from(self.predict_proba(x)? >= 0.5))
    }

    pub fn validate(&self) -> Result<(), GbmError> {
        if !self.base_score.is_finite() || !self.learning_rate.is_finite() {
            return Err(GbmError::InvalidModel("non-finite base score or learning rate".into()));
        }
        for t in &self.trees {
            t.validate(self.feature_count, 1e-9)?;
        }
        Ok(())
    }

    /// Features that appear in at least one split.
    pub fn used_features(&self) -> Vec<bool> {
        let mut used = vec![false; self.feature_count];
        for t in &self.trees {
            t.visit_features(&mut |f| used[f] = true);
        }
        used
    }
}
