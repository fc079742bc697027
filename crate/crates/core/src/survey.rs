//! Raw survey ingestion and encoding into feature vectors.

use std::io::Read;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{FeatureVector, SleepLabel};
use crate::features::{self, columns, Engineered, FeatureError, RawMeasures};
use crate::psqi::{PsqiError, PsqiResponse};
use crate::schema::{Derived, FieldKind, FieldSpec, SurveySchema};

#[derive(Debug, Error, PartialEq)]
pub enum SurveyError {
    #[error("survey file is empty")]
    EmptyFile,
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("malformed row at line {0}")]
    MalformedRow(u64),
    #[error("unknown answer `{value}` for field `{field}`")]
    UnknownAnswer { field: String, value: String },
    #[error("missing required answer for field `{0}`")]
    MissingRequired(String),
    #[error("value {value} for field `{field}` is outside [{lower}, {upper}]")]
    OutOfBounds {
        field: String,
        value: f64,
        lower: i64,
        upper: i64,
    },
    #[error("record {record}: {source}")]
    Engineering {
        record: usize,
        #[source]
        source: FeatureError,
    },
    #[error("record {record}: {source}")]
    Psqi {
        record: usize,
        #[source]
        source: PsqiError,
    },
    #[error("i/o: {0}")]
    Io(String),
}

/// One survey response, answers kept verbatim. Empty cells are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyRecord {
    pub id: usize,
    pub answers: IndexMap<String, Option<String>>,
}

impl SurveyRecord {
    pub fn answer(&self, name: &str) -> Option<&str> {
        self.answers.get(name).and_then(|a| a.as_deref())
    }

    pub fn set(&mut self, name: &str, value: impl Into<String>) {
        self.answers.insert(name.to_string(), Some(value.into()));
    }
}

pub fn parse_survey_csv(path: impl AsRef<Path>, schema: &SurveySchema) -> Result<Vec<SurveyRecord>, SurveyError> {
    let file =
        std::fs::File::open(path.as_ref()).map_err(|e| SurveyError::Io(format!("{}: {e}", path.as_ref().display())))?;
    parse_survey_reader(file, schema)
}

pub fn parse_survey_reader<R: Read>(reader: R, schema: &SurveySchema) -> Result<Vec<SurveyRecord>, SurveyError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = match rdr.headers() {
        Ok(h) if h.is_empty() || (h.len() == 1 && h[0].trim().is_empty()) => return Err(SurveyError::EmptyFile),
        Ok(h) => h.iter().map(|s| s.trim().to_string()).collect::<Vec<_>>(),
        Err(e) => return Err(csv_error(e)),
    };
    for col in schema.required_columns() {
        if !headers.iter().any(|h| h == col) {
            return Err(SurveyError::MissingColumn(col.to_string()));
        }
    }
    let mut out = Vec::new();
    for (id, row) in rdr.records().enumerate() {
        let row = row.map_err(csv_error)?;
        let answers = headers
            .iter()
            .zip(row.iter())
            .map(|(h, v)| {
                let v = if v.trim().is_empty() { None } else { Some(v.to_string()) };
                (h.clone(), v)
            })
            .collect();
        out.push(SurveyRecord { id, answers });
    }
    Ok(out)
}

fn csv_error(e: csv::Error) -> SurveyError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.kind() {
        csv::ErrorKind::Io(io) => SurveyError::Io(io.to_string()),
        _ => SurveyError::MalformedRow(line),
    }
}

/// Encodes one raw answer according to its field specification.
pub fn encode_answer(field: &FieldSpec, raw: &str) -> Result<f64, SurveyError> {
    let raw = raw.trim();
    let unknown = || SurveyError::UnknownAnswer {
        field: field.name.clone(),
        value: raw.to_string(),
    };
    let value = match field.kind {
        FieldKind::Binary => match raw.to_ascii_lowercase().as_str() {
            "yes" | "1" | "true" => 1.0,
            "no" | "0" | "false" => 0.0,
            _ => return Err(unknown()),
        },
        FieldKind::Ordinal | FieldKind::Nominal => {
            let map = field.levels().ok_or_else(unknown)?;
            *map.get(raw).ok_or_else(unknown)? as f64
        }
        FieldKind::Numeric => raw.parse::<f64>().map_err(|_| unknown())?,
    };
    if !value.is_finite() || !field.in_bounds(value) {
        return Err(SurveyError::OutOfBounds {
            field: field.name.clone(),
            value,
            lower: field.lower_bound,
            upper: field.upper_bound,
        });
    }
    Ok(value)
}

/// Encodes the named column of a record using whichever schema entry declares it.
pub fn encode_named(record: &SurveyRecord, schema: &SurveySchema, name: &str) -> Result<f64, SurveyError> {
    let field = schema
        .lookup(name)
        .ok_or_else(|| SurveyError::MissingColumn(name.to_string()))?;
    let raw = record
        .answer(name)
        .ok_or_else(|| SurveyError::MissingRequired(name.to_string()))?;
    encode_answer(field, raw)
}

/// Gathers the inputs of [`features::engineer_features`] from a record.
pub fn raw_measures(record: &SurveyRecord, schema: &SurveySchema) -> Result<RawMeasures, SurveyError> {
    let get = |name: &str| encode_named(record, schema, name);
    Ok(RawMeasures {
        age_years: get(columns::AGE)?,
        weight_kg: get(columns::WEIGHT_KG)?,
        height_ft: get(columns::HEIGHT_FT)?,
        height_in: get(columns::HEIGHT_IN)?,
        bed_comfort: get(columns::BED_COMFORT)?,
        lighting: get(columns::LIGHTING)?,
        quietness: get(columns::QUIETNESS)?,
        ventilation: get(columns::VENTILATION)?,
        physical_activity: get(columns::PHYSICAL_ACTIVITY)?,
        screen_hours: get(columns::SCREEN_HOURS)?,
        financial_stress: get(columns::FINANCIAL_STRESS)?,
        headache_neck_pain: get(columns::HEADACHE_NECK_PAIN)?,
        caffeine_cutoff: get(columns::CAFFEINE_CUTOFF)?,
        heavy_meals: get(columns::HEAVY_MEALS)?,
        screen_cutoff: get(columns::SCREEN_CUTOFF)?,
        schedule_consistency: get(columns::SCHEDULE_CONSISTENCY)?,
    })
}

pub fn engineer_record(record: &SurveyRecord, schema: &SurveySchema) -> Result<Engineered, SurveyError> {
    let measures = raw_measures(record, schema)?;
    features::engineer_features(&measures).map_err(|source| SurveyError::Engineering {
        record: record.id,
        source,
    })
}

fn derived_value(d: Derived, e: &Engineered) -> f64 {
    match d {
        Derived::BmiCategory => e.bmi_category as u8 as f64,
        Derived::AgeBand => e.age_band as f64,
        Derived::SleepEnvScore => e.sleep_env_score,
        Derived::LifestyleScore => e.lifestyle_score,
        Derived::StressFlag => e.stress_flag as f64,
        Derived::PoorHabitsScore => e.poor_habits_score as f64,
    }
}

/// Encodes a record into the schema's feature space. The label is left empty;
/// see [`label_record`].
pub fn encode_record(record: &SurveyRecord, schema: &SurveySchema) -> Result<FeatureVector, SurveyError> {
    let engineered = if schema.fields.iter().any(|f| f.derived.is_some()) {
        Some(engineer_record(record, schema)?)
    } else {
        None
    };
    let mut values = Vec::with_capacity(schema.len());
    for field in &schema.fields {
        let v = match (field.derived, &engineered) {
            (Some(d), Some(e)) => {
                let v = derived_value(d, e);
                if !field.in_bounds(v) {
                    return Err(SurveyError::OutOfBounds {
                        field: field.name.clone(),
                        value: v,
                        lower: field.lower_bound,
                        upper: field.upper_bound,
                    });
                }
                v
            }
            _ => {
                let raw = record
                    .answer(&field.name)
                    .ok_or_else(|| SurveyError::MissingRequired(field.name.clone()))?;
                encode_answer(field, raw)?
            }
        };
        values.push(v);
    }
    Ok(FeatureVector::unlabeled(values))
}

/// PSQI-derived label using the schema's cutoff.
pub fn label_record(record: &SurveyRecord, schema: &SurveySchema) -> Result<SleepLabel, SurveyError> {
    let resp = PsqiResponse::from_record(record).map_err(|source| SurveyError::Psqi {
        record: record.id,
        source,
    })?;
    let score = resp
        .score_with_cutoff(schema.psqi_cutoff)
        .map_err(|source| SurveyError::Psqi {
            record: record.id,
            source,
        })?;
    Ok(score.label)
}

/// Inverse of [`encode_answer`] for level-mapped fields.
pub fn decode_answer(field: &FieldSpec, level: i64) -> Option<&str> {
    field.decode(level)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> SurveySchema {
        SurveySchema::default_sleep()
    }

    #[test]
    fn screen_cutoff_thirty_minutes_is_level_one() {
        let s = schema();
        let f = s.lookup("screen_cutoff").unwrap();
        assert_eq!(encode_answer(f, "30 minutes before bed").unwrap(), 1.0);
        assert_eq!(encode_answer(f, "0-5 minutes before bed").unwrap(), 0.0);
        assert_eq!(encode_answer(f, "More than 3 hour before bed").unwrap(), 4.0);
    }

    #[test]
    fn binary_yes_is_one() {
        let f = FieldSpec {
            name: "exams".into(),
            kind: FieldKind::Binary,
            description: None,
            ordinal_map: None,
            label_table: None,
            lower_bound: 0,
            upper_bound: 1,
            actionable: false,
            derived: None,
        };
        assert_eq!(encode_answer(&f, "Yes").unwrap(), 1.0);
        assert_eq!(encode_answer(&f, "No").unwrap(), 0.0);
        assert!(matches!(
            encode_answer(&f, "Maybe"),
            Err(SurveyError::UnknownAnswer { .. })
        ));
    }

    #[test]
    fn unknown_ordinal_answer_is_rejected() {
        let s = schema();
        let f = s.lookup("screen_cutoff").unwrap();
        assert_eq!(
            encode_answer(f, "never"),
            Err(SurveyError::UnknownAnswer {
                field: "screen_cutoff".into(),
                value: "never".into()
            })
        );
    }

    #[test]
    fn nominal_uses_frozen_label_table() {
        let s = schema();
        let f = s.lookup("housing").unwrap();
        assert_eq!(encode_answer(f, "In a university hall").unwrap(), 3.0);
    }

    #[test]
    fn numeric_out_of_bounds() {
        let s = schema();
        let f = s.lookup("age").unwrap();
        assert!(matches!(encode_answer(f, "400"), Err(SurveyError::OutOfBounds { .. })));
    }
}
