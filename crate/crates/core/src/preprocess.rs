//! End-to-end survey preprocessing: cap, engineer, encode and label.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetError, FeatureVector};
use crate::features::{cap_outliers_iqr, columns, Engineered};
use crate::psqi::PsqiResponse;
use crate::schema::SurveySchema;
use crate::survey::{encode_named, encode_record, engineer_record, SurveyError, SurveyRecord};

/// Per-record audit trail of the engineered values and the PSQI score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineeredRow {
    pub record_id: usize,
    pub engineered: Engineered,
    pub psqi_global: u32,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub dataset: Dataset,
    pub report: Vec<EngineeredRow>,
    /// Records after capping, in input order.
    pub records: Vec<SurveyRecord>,
}

/// Applies IQR capping to each continuous raw column across all records and
/// writes the capped values back.
pub fn cap_records(records: &mut [SurveyRecord], schema: &SurveySchema) -> Result<(), SurveyError> {
    if records.is_empty() {
        return Ok(());
    }
    for name in columns::CAPPED {
        if schema.lookup(name).is_none() {
            continue;
        }
        let values = records
            .iter()
            .map(|r| encode_named(r, schema, name))
            .collect::<Result<Vec<f64>, _>>()?;
        let capped = cap_outliers_iqr(&values).map_err(|source| SurveyError::Engineering { record: 0, source })?;
        for (r, (before, after)) in records.iter_mut().zip(values.iter().zip(&capped)) {
            if before != after {
                r.set(name, after.to_string());
            }
        }
    }
    Ok(())
}

/// Runs the full pipeline. Any invalid record aborts with an error naming it.
pub fn preprocess(mut records: Vec<SurveyRecord>, schema: &SurveySchema) -> Result<Preprocessed, SurveyError> {
    if records.is_empty() {
        return Err(SurveyError::EmptyFile);
    }
    cap_records(&mut records, schema)?;
    let mut rows = Vec::with_capacity(records.len());
    let mut report = Vec::with_capacity(records.len());
    for r in &records {
        let encoded = encode_record(r, schema)?;
        let engineered = engineer_record(r, schema)?;
        let psqi_err = |source| SurveyError::Psqi { record: r.id, source };
        let score = PsqiResponse::from_record(r)
            .map_err(psqi_err)?
            .score_with_cutoff(schema.psqi_cutoff)
            .map_err(psqi_err)?;
        report.push(EngineeredRow {
            record_id: r.id,
            engineered,
            psqi_global: score.global,
            label: score.label.as_u8(),
        });
        rows.push(FeatureVector {
            label: Some(score.label),
            ..encoded
        });
    }
    Ok(Preprocessed {
        dataset: Dataset::new(schema, rows),
        report,
        records,
    })
}

pub fn write_report_csv<W: Write>(report: &[EngineeredRow], out: W) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| DatasetError::Io(e.to_string());
    w.write_record([
        "record_id",
        "bmi",
        "bmi_category",
        "age_band",
        "sleep_env_score",
        "lifestyle_score",
        "stress_flag",
        "poor_habits_score",
        "psqi_global",
        "label",
    ])
    .map_err(io)?;
    for row in report {
        let e = &row.engineered;
        w.write_record([
            row.record_id.to_string(),
            e.bmi.to_string(),
            e.bmi_category.as_str().to_string(),
            e.age_band.to_string(),
            e.sleep_env_score.to_string(),
            e.lifestyle_score.to_string(),
            e.stress_flag.to_string(),
            e.poor_habits_score.to_string(),
            row.psqi_global.to_string(),
            row.label.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| DatasetError::Io(e.to_string()))
}
