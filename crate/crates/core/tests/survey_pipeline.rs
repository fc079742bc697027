use std::path::PathBuf;

use sleepopt_core::preprocess::{preprocess, write_report_csv};
use sleepopt_core::survey::{parse_survey_csv, parse_survey_reader, SurveyError};
use sleepopt_core::{SleepLabel, SurveySchema};

fn sample() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/survey_sample.csv")
}

#[test]
fn sample_survey_preprocesses_into_schema_bounds() {
    let schema = SurveySchema::default_sleep();
    let records = parse_survey_csv(sample(), &schema).unwrap();
    assert_eq!(records.len(), 300);
    let out = preprocess(records, &schema).unwrap();
    out.dataset.check_schema(&schema).unwrap();
    assert_eq!(out.dataset.len(), 300);

    let good = out
        .dataset
        .rows
        .iter()
        .filter(|r| r.label == Some(SleepLabel::Good))
        .count();
    assert!((60..240).contains(&good), "{good} good of 300");
    for (row, audit) in out.dataset.rows.iter().zip(&out.report) {
        assert_eq!(row.label.unwrap().as_u8(), audit.label);
        assert_eq!(audit.label == 1, audit.psqi_global <= schema.psqi_cutoff);
    }
}

#[test]
fn outlying_ages_are_capped_before_banding() {
    let schema = SurveySchema::default_sleep();
    let records = parse_survey_csv(sample(), &schema).unwrap();
    assert_eq!(records[7].answer("age"), Some("58"));
    let out = preprocess(records, &schema).unwrap();
    let capped: f64 = out.records[7].answer("age").unwrap().parse().unwrap();
    assert!(capped < 58.0 && capped > 20.0, "{capped}");
    let heavy: f64 = out.records[33].answer("weight_kg").unwrap().parse().unwrap();
    assert!(heavy < 180.0);
}

#[test]
fn preprocessing_is_repeatable_byte_for_byte() {
    let schema = SurveySchema::default_sleep();
    let render = || {
        let out = preprocess(parse_survey_csv(sample(), &schema).unwrap(), &schema).unwrap();
        let mut data = Vec::new();
        out.dataset.to_writer(&mut data).unwrap();
        let mut report = Vec::new();
        write_report_csv(&out.report, &mut report).unwrap();
        (data, report)
    };
    assert_eq!(render(), render());
}

#[test]
fn unknown_answer_names_the_field() {
    let schema = SurveySchema::default_sleep();
    let text = std::fs::read_to_string(sample()).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    lines[1] = lines[1].replacen("before bed", "after breakfast", 1);
    let records = parse_survey_reader(lines.join("\n").as_bytes(), &schema).unwrap();
    match preprocess(records, &schema) {
        Err(SurveyError::UnknownAnswer { field, .. }) => assert_eq!(field, "screen_cutoff"),
        other => panic!("unexpected {other:?}"),
    }
}
