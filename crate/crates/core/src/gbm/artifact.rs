use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{GbmError, TrainConfig, TreeEnsemble, TreeNode};

pub const ARTIFACT_FORMAT: &str = "sleepopt-gbm";
pub const ARTIFACT_VERSION: u32 = 1;

/// On-disk model: the ensemble plus enough context to reject a mismatched schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format: String,
    pub version: u32,
    pub schema_hash: String,
    pub feature_names: Vec<String>,
    pub config: TrainConfig,
    pub base_score: f64,
    pub learning_rate: f64,
    pub feature_count: usize,
    pub trees: Vec<TreeNode>,
}

impl ModelArtifact {
    pub fn new(model: &TreeEnsemble, config: &TrainConfig, schema_hash: &str, feature_names: Vec<String>) -> Self {
        Self {
            format: ARTIFACT_FORMAT.to_string(),
            version: ARTIFACT_VERSION,
            schema_hash: schema_hash.to_string(),
            feature_names,
            config: config.clone(),
            base_score: model.base_score,
            learning_rate: model.learning_rate,
            feature_count: model.feature_count,
            trees: model.trees.clone(),
        }
    }

    pub fn ensemble(&self) -> TreeEnsemble {
        TreeEnsemble {
            trees: self.trees.clone(),
            learning_rate: self.learning_rate,
            base_score: self.base_score,
            feature_count: self.feature_count,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("artifact serializes")
    }

    /// Parses and validates format, version, names and tree invariants.
    pub fn from_json(s: &str) -> Result<Self, GbmError> {
        let a: ModelArtifact = serde_json::from_str(s).map_err(|e| GbmError::InvalidModel(e.to_string()))?;
        if a.format != ARTIFACT_FORMAT {
            return Err(GbmError::InvalidModel(format!("unknown format {:?}", a.format)));
        }
        if a.version != ARTIFACT_VERSION {
            return Err(GbmError::InvalidModel(format!("unsupported version {}", a.version)));
        }
        if a.feature_names.len() != a.feature_count {
            return Err(GbmError::InvalidModel(format!(
                "{} feature names for {} features",
                a.feature_names.len(),
                a.feature_count
            )));
        }
        a.ensemble().validate()?;
        Ok(a)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GbmError> {
        fs::write(path, self.to_json()).map_err(|e| GbmError::Io(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GbmError> {
        let s = fs::read_to_string(path).map_err(|e| GbmError::Io(e.to_string()))?;
        Self::from_json(&s)
    }

    /// SHA-256 of the serialized artifact.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelArtifact {
        let model = TreeEnsemble {
            trees: vec![TreeNode::split(
                1,
                2.5,
                TreeNode::leaf(-0.1234567890123, 3.3),
                TreeNode::leaf(0.7, 1.1),
            )],
            learning_rate: 0.05,
            base_score: 0.8,
            feature_count: 2,
        };
        ModelArtifact::new(&model, &TrainConfig::default(), "abc", vec!["a".into(), "b".into()])
    }

    #[test]
    fn round_trip_is_exact() {
        let a = sample();
        let back = ModelArtifact::from_json(&a.to_json()).unwrap();
        assert_eq!(a, back);
        assert_eq!(a.digest(), back.digest());
    }

    #[test]
    fn rejects_out_of_range_feature() {
        let mut a = sample();
        a.feature_count = 1;
        a.feature_names.pop();
        assert!(matches!(
            ModelArtifact::from_json(&a.to_json()),
            Err(GbmError::InvalidModel(_))
        ));
    }

    #[test]
    fn rejects_wrong_version() {
        let mut a = sample();
        a.version = 9;
        assert!(ModelArtifact::from_json(&a.to_json()).is_err());
    }
}
