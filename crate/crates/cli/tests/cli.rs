use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use sleepopt_core::experiment::{batch_recommend, plans_csv, sha256_hex, Manifest, WeightSource};
use sleepopt_core::gbm::{train_ensemble, ModelArtifact, TrainConfig};
use sleepopt_core::shap::{actionable_weights, WeightVector, REFERENCE_WEIGHTS_JSON};
use sleepopt_core::{Dataset, FeatureVector, SurveySchema};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sleepopt"));
    c.env_remove("SLEEPOPT_OUT").env_remove("SLEEPOPT_SEED");
    c
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn sample_survey() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/survey_sample.csv")
}

/// Five students with every actionable field at its lowest level.
fn write_full_headroom_cohort(dir: &Path) -> SurveySchema {
    let schema = SurveySchema::default_sleep();
    let rows = (0..5)
        .map(|i| {
            let values = schema
                .fields
                .iter()
                .map(|f| if f.actionable { f.lower_bound } else { f.lower_bound + (i % 2) } as f64)
                .collect();
            FeatureVector::unlabeled(values)
        })
        .collect();
    Dataset::new(&schema, rows).write_csv(dir.join("cohort.csv")).unwrap();
    std::fs::write(dir.join("weights.json"), REFERENCE_WEIGHTS_JSON).unwrap();
    schema
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = bin().args(["sweep", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage:"), "{err}");
}

#[test]
fn missing_subcommand_is_usage_error() {
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("recommend"));
}

#[test]
fn recommend_reference_cohort_changes_six_variables_each() {
    let dir = tempfile::tempdir().unwrap();
    write_full_headroom_cohort(dir.path());
    let out = run_in(
        dir.path(),
        &[
            "recommend",
            "--model-weights",
            "weights.json",
            "--data",
            "cohort.csv",
            "--lambda",
            "0.2",
        ],
    );
    ok(&out);
    let text = std::fs::read_to_string(dir.path().join("out/plans.csv")).unwrap();
    let mut changed = [0usize; 5];
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells[3] != "0" {
            changed[cells[0].parse::<usize>().unwrap()] += 1;
        }
    }
    assert_eq!(changed, [6; 5]);
    assert!(!dir.path().join("out/skipped.csv").exists());
}

#[test]
fn recommend_output_equals_library_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let schema = write_full_headroom_cohort(dir.path());
    ok(&run_in(
        dir.path(),
        &[
            "recommend",
            "--model-weights",
            "weights.json",
            "--data",
            "cohort.csv",
            "--lambda",
            "0.35",
        ],
    ));
    let data = Dataset::read_csv(dir.path().join("cohort.csv")).unwrap();
    let weights = actionable_weights(&WeightVector::reference(), &schema).unwrap();
    let batch = batch_recommend(&data.rows, &schema, WeightSource::Population(&weights), 0.35).unwrap();
    assert_eq!(
        std::fs::read(dir.path().join("out/plans.csv")).unwrap(),
        plans_csv(&batch)
    );
}

#[test]
fn sweep_reference_cohort_counts() {
    let dir = tempfile::tempdir().unwrap();
    write_full_headroom_cohort(dir.path());
    ok(&run_in(
        dir.path(),
        &[
            "sweep",
            "--model-weights",
            "weights.json",
            "--data",
            "cohort.csv",
            "--lambdas",
            "0.3,0.1,0.2",
        ],
    ));
    let text = std::fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), ["0.1", "0.2", "0.3"]);
    assert_eq!(rows.iter().map(|r| r[1]).collect::<Vec<_>>(), ["7", "6", "4"]);
}

#[test]
fn pareto_and_ablate_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    write_full_headroom_cohort(dir.path());
    ok(&run_in(
        dir.path(),
        &[
            "pareto",
            "--model-weights",
            "weights.json",
            "--data",
            "cohort.csv",
            "--kmax",
            "3",
            "--out",
            "p",
        ],
    ));
    let text = std::fs::read_to_string(dir.path().join("p/pareto.csv")).unwrap();
    let benefits: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(benefits.len(), 4);
    for (b, e) in benefits.iter().zip([0.0, 0.490, 0.854, 1.217]) {
        approx::assert_abs_diff_eq!(*b, e, epsilon = 1e-12);
    }
    let manifest: Manifest =
        serde_json::from_slice(&std::fs::read(dir.path().join("p/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.command, "pareto");

    ok(&run_in(
        dir.path(),
        &[
            "ablate",
            "--model-weights",
            "weights.json",
            "--data",
            "cohort.csv",
            "--out",
            "a",
        ],
    ));
    let text = std::fs::read_to_string(dir.path().join("a/ablation.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("variant,avg_interventions,avg_benefit"));
    assert!(text.contains("equal_weights,7,7"), "{text}");
}

#[test]
fn json_format_and_env_overrides() {
    let dir = tempfile::tempdir().unwrap();
    write_full_headroom_cohort(dir.path());
    let out = bin()
        .current_dir(dir.path())
        .env("SLEEPOPT_OUT", "from-env")
        .env("SLEEPOPT_SEED", "9")
        .args([
            "sweep",
            "--model-weights",
            "weights.json",
            "--data",
            "cohort.csv",
            "--format",
            "json",
        ])
        .output()
        .unwrap();
    ok(&out);
    let sweep: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("from-env/sweep.json")).unwrap()).unwrap();
    assert_eq!(sweep["points"].as_array().unwrap().len(), 3);
    let manifest: Manifest =
        serde_json::from_slice(&std::fs::read(dir.path().join("from-env/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.seed, 9);
    assert_eq!(manifest.config["global"]["format"], "json");
}

#[test]
fn manifest_hashes_match_files() {
    let dir = tempfile::tempdir().unwrap();
    write_full_headroom_cohort(dir.path());
    ok(&run_in(
        dir.path(),
        &["recommend", "--model-weights", "weights.json", "--data", "cohort.csv"],
    ));
    let manifest: Manifest =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.files.len(), 1);
    for f in &manifest.files {
        let bytes = std::fs::read(dir.path().join("out").join(&f.name)).unwrap();
        assert_eq!(f.sha256, sha256_hex(&bytes));
        assert_eq!(f.bytes, bytes.len());
    }
    assert_eq!(manifest.config["command"]["recommend"]["lambda"], 0.2);
}

#[test]
fn out_of_bounds_profile_is_data_error_naming_field() {
    let dir = tempfile::tempdir().unwrap();
    write_full_headroom_cohort(dir.path());
    let text = std::fs::read_to_string(dir.path().join("cohort.csv")).unwrap();
    let bad = text.replacen("\n0,0,1,0,1,1,1,", "\n0,0,1,0,1,1,9,", 1);
    std::fs::write(dir.path().join("bad.csv"), bad).unwrap();
    let out = run_in(
        dir.path(),
        &["recommend", "--model-weights", "weights.json", "--data", "bad.csv"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ventilation"));
}

#[test]
fn preprocess_missing_column_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(sample_survey()).unwrap();
    let stripped = text.replacen("screen_cutoff,", "screen_cutoff_x,", 1);
    std::fs::write(dir.path().join("survey.csv"), stripped).unwrap();
    let out = run_in(dir.path(), &["preprocess", "--in", "survey.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("screen_cutoff"));
}

#[test]
fn per_student_weights_need_a_model() {
    let dir = tempfile::tempdir().unwrap();
    write_full_headroom_cohort(dir.path());
    let out = run_in(
        dir.path(),
        &["recommend", "--data", "cohort.csv", "--per-student-weights"],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn synth_train_explain_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&run_in(
        d,
        &[
            "synth",
            "--n",
            "400",
            "--planted",
            "ventilation=2,quietness=1.5",
            "--noise",
            "0.05",
            "--out",
            "s",
        ],
    ));
    let cfg = TrainConfig {
        n_estimators: 30,
        learning_rate: 0.2,
        ..TrainConfig::default()
    };
    std::fs::write(d.join("cfg.json"), serde_json::to_string(&cfg).unwrap()).unwrap();
    ok(&run_in(
        d,
        &["train", "--data", "s/dataset.csv", "--config", "cfg.json", "--out", "t"],
    ));
    let board = std::fs::read_to_string(d.join("t/leaderboard.csv")).unwrap();
    assert_eq!(board.lines().count(), 2);
    ok(&run_in(
        d,
        &[
            "explain",
            "--model",
            "t/model.json",
            "--data",
            "s/dataset.csv",
            "--out",
            "e",
        ],
    ));
    let weights = WeightVector::load(d.join("e/weights.json")).unwrap();
    let top = weights
        .weights
        .iter()
        .max_by(|a, b| a.1.raw.total_cmp(&b.1.raw))
        .map(|(k, _)| k.clone())
        .unwrap();
    assert_eq!(top, "ventilation");
    let phi = std::fs::read_to_string(d.join("e/phi.csv")).unwrap();
    assert_eq!(phi.lines().count(), 1 + 400 * 15);

    ok(&run_in(
        d,
        &[
            "recommend",
            "--data",
            "s/dataset.csv",
            "--per-student-weights",
            "--model",
            "t/model.json",
            "--out",
            "r",
        ],
    ));
    assert!(d.join("r/plans.csv").exists());
}

#[test]
fn explain_rejects_model_for_other_schema() {
    let dir = tempfile::tempdir().unwrap();
    let schema = write_full_headroom_cohort(dir.path());
    let rows: Vec<FeatureVector> = (0..40)
        .map(|i| {
            let mut v = vec![1.0; 15];
            v[0] = (i % 5) as f64;
            FeatureVector::new(v, sleepopt_core::SleepLabel::from_bool(i % 5 > 2))
        })
        .collect();
    let cfg = TrainConfig {
        n_estimators: 3,
        min_child_weight: 0.0,
        ..TrainConfig::default()
    };
    let model = train_ensemble(&rows, &cfg).unwrap();
    let names = schema.feature_names().iter().map(|s| s.to_string()).collect();
    std::fs::write(
        dir.path().join("model.json"),
        ModelArtifact::new(&model, &cfg, "0000", names).to_json(),
    )
    .unwrap();
    let out = run_in(
        dir.path(),
        &["explain", "--model", "model.json", "--data", "cohort.csv"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("different schema"));
}

#[test]
fn server_mode_matches_local_plans() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let schema = write_full_headroom_cohort(d);
    let data: Vec<FeatureVector> = (0..12)
        .map(|i| {
            FeatureVector::unlabeled(
                schema
                    .fields
                    .iter()
                    .enumerate()
                    .map(|(j, f)| {
                        (f.lower_bound + ((i * 7 + j * 3) as i64 % (f.upper_bound - f.lower_bound + 1))) as f64
                    })
                    .collect(),
            )
        })
        .collect();
    Dataset::new(&schema, data.clone())
        .write_csv(d.join("mixed.csv"))
        .unwrap();

    let rows: Vec<FeatureVector> = (0..60)
        .map(|i| {
            let mut v = data[i % 12].values.clone();
            v[6] = (1 + i % 5) as f64;
            FeatureVector::new(v, sleepopt_core::SleepLabel::from_bool(i % 5 >= 2))
        })
        .collect();
    let cfg = TrainConfig {
        n_estimators: 5,
        min_child_weight: 0.5,
        ..TrainConfig::default()
    };
    let model = train_ensemble(&rows, &cfg).unwrap();
    let names = schema.feature_names().iter().map(|s| s.to_string()).collect();
    let artifact = ModelArtifact::new(&model, &cfg, &schema.hash(), names)
        .to_json()
        .into_bytes();
    let state = sleepopt_service::AppState::new(&artifact, WeightVector::reference(), schema).unwrap();

    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    rt.spawn(sleepopt_service::run(
        listener,
        sleepopt_service::router(Arc::new(state), None),
    ));

    let url = format!("http://{addr}");
    for lambda in ["0.1", "0.2", "0.45"] {
        ok(&run_in(
            d,
            &[
                "recommend",
                "--model-weights",
                "weights.json",
                "--data",
                "mixed.csv",
                "--lambda",
                lambda,
                "--out",
                "local",
            ],
        ));
        ok(&run_in(
            d,
            &[
                "recommend",
                "--model-weights",
                "weights.json",
                "--data",
                "mixed.csv",
                "--lambda",
                lambda,
                "--out",
                "remote",
                "--server",
                &url,
            ],
        ));
        assert_eq!(
            std::fs::read(d.join("local/plans.csv")).unwrap(),
            std::fs::read(d.join("remote/plans.csv")).unwrap(),
            "lambda {lambda}"
        );
    }
}
