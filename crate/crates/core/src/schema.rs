//! Declarative description of the survey feature space.
//!
//! A [`SurveySchema`] lists the model features in column order, plus auxiliary
//! raw columns that feed engineered features but are not model inputs
//! themselves. Ordinal maps and nominal label tables are frozen in the schema
//! file so that encodings never depend on the data they are applied to.

use std::collections::HashSet;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

const DEFAULT_SCHEMA_JSON: &str = include_str!("../assets/sleep_schema.json");

/// Names of the modifiable variables in the bundled schema, in schema order.
pub const DEFAULT_ACTIONABLE: [&str; 7] = [
    "screen_cutoff",
    "caffeine_cutoff",
    "schedule_consistency",
    "sleeping_posture",
    "lighting",
    "quietness",
    "ventilation",
];

#[derive(Debug, Error, PartialEq)]
pub enum SchemaError {
    #[error("duplicate field name `{0}`")]
    DuplicateField(String),
    #[error("field `{0}`: lower bound exceeds upper bound")]
    InvertedBounds(String),
    #[error("field `{0}`: level map must cover [{1}, {2}] with exactly one answer per level")]
    NonContiguousMap(String, i64, i64),
    #[error("field `{0}`: {1} field requires a level map")]
    MissingMap(String, &'static str),
    #[error("field `{0}`: binary fields must have bounds [0, 1]")]
    BinaryBounds(String),
    #[error("field `{0}`: actionable fields must be ordinal survey answers")]
    BadActionable(String),
    #[error("schema declares no actionable fields")]
    NoActionable,
    #[error("schema declares no fields")]
    Empty,
    #[error("cannot read schema: {0}")]
    Io(String),
    #[error("malformed schema JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Binary,
    Ordinal,
    Nominal,
    Numeric,
}

impl FieldKind {
    fn as_str(self) -> &'static str {
        match self {
            FieldKind::Binary => "binary",
            FieldKind::Ordinal => "ordinal",
            FieldKind::Nominal => "nominal",
            FieldKind::Numeric => "numeric",
        }
    }
}

/// Engineered quantities a schema field can be bound to instead of a raw column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Derived {
    BmiCategory,
    AgeBand,
    SleepEnvScore,
    LifestyleScore,
    StressFlag,
    PoorHabitsScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordinal_map: Option<IndexMap<String, i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_table: Option<IndexMap<String, i64>>,
    pub lower_bound: i64,
    pub upper_bound: i64,
    #[serde(default)]
    pub actionable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derived: Option<Derived>,
}

impl FieldSpec {
    /// Answer → level table for ordinal and nominal fields.
    pub fn levels(&self) -> Option<&IndexMap<String, i64>> {
        match self.kind {
            FieldKind::Ordinal => self.ordinal_map.as_ref(),
            FieldKind::Nominal => self.label_table.as_ref(),
            _ => None,
        }
    }

    pub fn in_bounds(&self, value: f64) -> bool {
        value >= self.lower_bound as f64 && value <= self.upper_bound as f64
    }

    /// Inverse of the level table.
    pub fn decode(&self, level: i64) -> Option<&str> {
        match self.kind {
            FieldKind::Binary => match level {
                0 => Some("No"),
                1 => Some("Yes"),
                _ => None,
            },
            _ => self
                .levels()?
                .iter()
                .find(|(_, &v)| v == level)
                .map(|(k, _)| k.as_str()),
        }
    }

    fn validate(&self) -> Result<(), SchemaError> {
        if self.lower_bound > self.upper_bound {
            return Err(SchemaError::InvertedBounds(self.name.clone()));
        }
        match self.kind {
            FieldKind::Binary => {
                if self.lower_bound != 0 || self.upper_bound != 1 {
                    return Err(SchemaError::BinaryBounds(self.name.clone()));
                }
            }
            FieldKind::Ordinal | FieldKind::Nominal => match self.levels() {
                Some(map) => {
                    let mut seen: Vec<i64> = map.values().copied().collect();
                    seen.sort_unstable();
                    let expected: Vec<i64> = (self.lower_bound..=self.upper_bound).collect();
                    if seen != expected {
                        return Err(SchemaError::NonContiguousMap(
                            self.name.clone(),
                            self.lower_bound,
                            self.upper_bound,
                        ));
                    }
                }
                None if self.derived.is_some() => {}
                None => return Err(SchemaError::MissingMap(self.name.clone(), self.kind.as_str())),
            },
            FieldKind::Numeric => {}
        }
        if self.actionable && (self.kind != FieldKind::Ordinal || self.derived.is_some()) {
            return Err(SchemaError::BadActionable(self.name.clone()));
        }
        Ok(())
    }
}

fn default_cutoff() -> u32 {
    5
}

fn default_version() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveySchema {
    #[serde(default = "default_version")]
    pub version: u32,
    /// Model features, in feature-vector order.
    pub fields: Vec<FieldSpec>,
    /// Raw columns consumed by feature engineering only.
    #[serde(default)]
    pub auxiliary: Vec<FieldSpec>,
    /// Global PSQI scores strictly above this value are labeled poor.
    #[serde(default = "default_cutoff")]
    pub psqi_cutoff: u32,
}

impl SurveySchema {
    /// The bundled 15-feature sleep survey schema.
    pub fn default_sleep() -> Self {
        Self::from_json_str(DEFAULT_SCHEMA_JSON).expect("bundled schema is valid")
    }

    pub fn from_json_str(s: &str) -> Result<Self, SchemaError> {
        let schema: SurveySchema = serde_json::from_str(s).map_err(|e| SchemaError::Json(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, SchemaError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| SchemaError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.fields.is_empty() {
            return Err(SchemaError::Empty);
        }
        let mut names = HashSet::new();
        for f in self.fields.iter().chain(&self.auxiliary) {
            if !names.insert(f.name.as_str()) {
                return Err(SchemaError::DuplicateField(f.name.clone()));
            }
            f.validate()?;
        }
        if self.auxiliary.iter().any(|f| f.actionable) {
            let f = self.auxiliary.iter().find(|f| f.actionable).unwrap();
            return Err(SchemaError::BadActionable(f.name.clone()));
        }
        if !self.fields.iter().any(|f| f.actionable) {
            return Err(SchemaError::NoActionable);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn feature_names(&self) -> Vec<&str> {
        self.fields.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    /// Looks a name up among model fields first, then auxiliary columns.
    pub fn lookup(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().chain(&self.auxiliary).find(|f| f.name == name)
    }

    pub fn actionable_indices(&self) -> Vec<usize> {
        self.fields
            .iter()
            .enumerate()
            .filter(|(_, f)| f.actionable)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn actionable_names(&self) -> Vec<&str> {
        self.fields
            .iter()
            .filter(|f| f.actionable)
            .map(|f| f.name.as_str())
            .collect()
    }

    /// Columns a survey CSV must provide: every non-derived field plus auxiliaries.
    pub fn required_columns(&self) -> Vec<&str> {
        self.fields
            .iter()
            .filter(|f| f.derived.is_none())
            .chain(&self.auxiliary)
            .map(|f| f.name.as_str())
            .collect()
    }

    /// SHA-256 of the compact JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("schema serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
