use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use serde_json::{json, Value};

use sleepopt_client::{Client, ClientError};
use sleepopt_core::api::{RecommendRequest, WeightSourceKind};
use sleepopt_core::dataset::{generate_synthetic, split_dataset, SyntheticSpec};
use sleepopt_core::experiment::{
    ablation_csv, ablation_suite, batch_recommend, lambda_sweep, pareto_csv, pareto_frontier, plans_csv, sha256_hex,
    skipped_csv, sweep_csv, BatchResult, BatchSummary, ReportWriter, SkippedRecord, WeightSource,
};
use sleepopt_core::gbm::{
    evaluate, grid_search, train_ensemble, write_leaderboard_csv, ModelArtifact, ParamGrid, TrainConfig, TreeEnsemble,
};
use sleepopt_core::intervention::InterventionPlan;
use sleepopt_core::preprocess::{preprocess, write_report_csv};
use sleepopt_core::shap::{actionable_weights, explain_rows, mean_abs_weights, WeightVector};
use sleepopt_core::survey::parse_survey_csv;
use sleepopt_core::{Dataset, SurveySchema};

use crate::args::{Cli, CohortArgs, Command, Format, ServeArgs, SynthArgs, TrainArgs};

/// Attributions must reconstruct each margin to this precision.
const LOCAL_ACCURACY_TOL: f64 = 1e-9;

struct Run<'a> {
    cli: &'a Cli,
    schema: SurveySchema,
    inputs: Vec<PathBuf>,
    writer: ReportWriter,
}

impl Run<'_> {
    fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        self.inputs.push(path.to_path_buf());
        Ok(bytes)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        self.writer.write(name, bytes)?;
        Ok(())
    }

    fn write_table(&mut self, stem: &str, csv: Vec<u8>, json: impl serde::Serialize) -> Result<()> {
        match self.cli.global.format {
            Format::Csv => self.write(&format!("{stem}.csv"), &csv),
            Format::Json => {
                let body = serde_json::to_string_pretty(&json)? + "\n";
                self.write(&format!("{stem}.json"), body.as_bytes())
            }
        }
    }

    fn dataset(&mut self, path: &Path) -> Result<Dataset> {
        let bytes = self.read(path)?;
        let data = Dataset::from_reader(bytes.as_slice()).with_context(|| format!("{}", path.display()))?;
        data.check_schema(&self.schema)
            .with_context(|| format!("{} does not match the schema", path.display()))?;
        ensure!(!data.is_empty(), "{} has no rows", path.display());
        Ok(data)
    }

    fn model(&mut self, path: &Path) -> Result<TreeEnsemble> {
        let bytes = self.read(path)?;
        let text = String::from_utf8(bytes).with_context(|| format!("{} is not UTF-8", path.display()))?;
        let artifact = ModelArtifact::from_json(&text).with_context(|| format!("{}", path.display()))?;
        ensure!(
            artifact.schema_hash == self.schema.hash(),
            "{} was trained on a different schema ({})",
            path.display(),
            artifact.schema_hash
        );
        Ok(artifact.ensemble())
    }

    fn population_weights(&mut self, path: &Path) -> Result<Vec<(String, f64)>> {
        let bytes = self.read(path)?;
        let text = String::from_utf8(bytes).with_context(|| format!("{} is not UTF-8", path.display()))?;
        let weights = WeightVector::from_json(&text).with_context(|| format!("{}", path.display()))?;
        Ok(actionable_weights(&weights, &self.schema)?)
    }

    fn finish(self) -> Result<()> {
        let mut digest = String::new();
        for p in &self.inputs {
            let bytes = std::fs::read(p)?;
            digest.push_str(&sha256_hex(&bytes));
            digest.push('\n');
        }
        digest.push_str(&self.schema.hash());
        let mut config = serde_json::to_value(self.cli)?;
        if let Value::Object(map) = &mut config {
            map.insert("schema_hash".into(), self.schema.hash().into());
        }
        self.writer.finish(
            self.cli.command.name(),
            &sha256_hex(digest.as_bytes()),
            self.cli.global.seed,
            config,
        )?;
        Ok(())
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let schema = match &cli.global.schema {
        Some(p) => SurveySchema::from_path(p).with_context(|| format!("schema {}", p.display()))?,
        None => SurveySchema::default_sleep(),
    };
    let mut run = Run {
        cli,
        schema,
        inputs: Vec::new(),
        writer: ReportWriter::new(&cli.global.out)?,
    };
    match &cli.command {
        Command::Preprocess { input } => run_preprocess(&mut run, input)?,
        Command::Synth(a) => run_synth(&mut run, a)?,
        Command::Train(a) => run_train(&mut run, a)?,
        Command::Explain { model, data } => run_explain(&mut run, model, data)?,
        Command::Recommend { cohort, lambda, server } => match server {
            Some(url) => run_recommend_remote(&mut run, cohort, *lambda, url)?,
            None => {
                let (data, source) = load_cohort(&mut run, cohort)?;
                let batch = batch_recommend(&data.rows, &run.schema, source.as_source(), *lambda)?;
                write_batch(&mut run, &batch)?;
            }
        },
        Command::Sweep { cohort, lambdas } => {
            let (data, source) = load_cohort(&mut run, cohort)?;
            let sweep = lambda_sweep(&data.rows, &run.schema, source.as_source(), lambdas)?;
            run.write_table("sweep", sweep_csv(&sweep), &sweep)?;
        }
        Command::Pareto { cohort, kmax } => {
            let (data, source) = load_cohort(&mut run, cohort)?;
            let frontier = pareto_frontier(&data.rows, &run.schema, source.as_source(), *kmax)?;
            run.write_table("pareto", pareto_csv(&frontier), &frontier)?;
        }
        Command::Ablate { cohort, lambda } => {
            let (data, source) = load_cohort(&mut run, cohort)?;
            let rows = ablation_suite(&data.rows, &run.schema, source.as_source(), *lambda)?;
            run.write_table("ablation", ablation_csv(&rows), &rows)?;
        }
        Command::Serve(a) => return run_serve(run, a),
    }
    run.finish()
}

fn run_preprocess(run: &mut Run, input: &Path) -> Result<()> {
    run.inputs.push(input.to_path_buf());
    let records = parse_survey_csv(input, &run.schema)?;
    let out = preprocess(records, &run.schema)?;
    let mut data = Vec::new();
    out.dataset.to_writer(&mut data)?;
    run.write("dataset.csv", &data)?;
    let mut report = Vec::new();
    write_report_csv(&out.report, &mut report)?;
    run.write("engineered.csv", &report)?;
    let good = out.report.iter().filter(|r| r.label == 1).count();
    eprintln!("{} records, {good} labeled good sleep", out.report.len());
    Ok(())
}

fn run_synth(run: &mut Run, a: &SynthArgs) -> Result<()> {
    let mut planted = vec![0.0; run.schema.len()];
    for (name, coef) in &a.planted {
        let Some(i) = run.schema.index_of(name) else {
            bail!("--planted: unknown field `{name}`");
        };
        planted[i] = *coef;
    }
    let spec = SyntheticSpec {
        n: a.n,
        planted,
        intercept: a.intercept,
        noise: a.noise,
        seed: run.cli.global.seed,
    };
    let rows = generate_synthetic(&run.schema, &spec)?;
    let mut bytes = Vec::new();
    Dataset::new(&run.schema, rows).to_writer(&mut bytes)?;
    run.write("dataset.csv", &bytes)
}

fn run_train(run: &mut Run, a: &TrainArgs) -> Result<()> {
    let data = run.dataset(&a.data)?;
    let seed = run.cli.global.seed;
    let base = match &a.config {
        Some(p) => {
            let bytes = run.read(p)?;
            let cfg: TrainConfig = serde_json::from_slice(&bytes).with_context(|| format!("config {}", p.display()))?;
            cfg.validate()?;
            cfg
        }
        None => TrainConfig {
            seed,
            ..TrainConfig::default()
        },
    };
    let grid = match &a.config {
        Some(_) => ParamGrid::single(&base),
        None => ParamGrid::standard(),
    };
    let split = split_dataset(&data.rows, (a.split[0], a.split[1], a.split[2]), seed)?;
    eprintln!(
        "training {} cell(s) on {} rows, validating on {}",
        grid.size(),
        split.train.len(),
        split.validation.len()
    );
    let result = grid_search(&split.train, &split.validation, &grid, &base)?;
    let model = train_ensemble(&split.train, &result.best)?;
    let test = evaluate(&model, &split.test)?;

    let names = run.schema.feature_names().iter().map(|s| s.to_string()).collect();
    let artifact = ModelArtifact::new(&model, &result.best, &run.schema.hash(), names);
    run.write("model.json", (artifact.to_json() + "\n").as_bytes())?;
    let mut board = Vec::new();
    write_leaderboard_csv(&result.leaderboard, &mut board)?;
    run.write("leaderboard.csv", &board)?;
    let metrics = json!({
        "best": result.best,
        "validation": result.best_metrics,
        "test": test,
        "split": {
            "train": split.train.len(),
            "validation": split.validation.len(),
            "test": split.test.len(),
        },
    });
    run.write(
        "metrics.json",
        (serde_json::to_string_pretty(&metrics)? + "\n").as_bytes(),
    )?;
    eprintln!("validation F1 {:.4}, test F1 {:.4}", result.best_metrics.f1, test.f1);
    Ok(())
}

fn run_explain(run: &mut Run, model_path: &Path, data_path: &Path) -> Result<()> {
    let model = run.model(model_path)?;
    let data = run.dataset(data_path)?;
    let names: Vec<String> = run.schema.feature_names().iter().map(|s| s.to_string()).collect();
    let report = explain_rows(&model, &data.rows, &names, None)?;
    let worst = report.max_local_error(&model, &data.rows)?;
    ensure!(
        worst < LOCAL_ACCURACY_TOL,
        "attributions miss the model margin by {worst:e}"
    );
    let mut phi = Vec::new();
    report.write_csv(&mut phi)?;
    run.write_table("phi", phi, &report)?;
    let weights = mean_abs_weights(&report)?;
    run.write("weights.json", (weights.to_json() + "\n").as_bytes())?;
    Ok(())
}

enum Source {
    Population(Vec<(String, f64)>),
    PerStudent(TreeEnsemble),
}

impl Source {
    fn as_source(&self) -> WeightSource<'_> {
        match self {
            Source::Population(w) => WeightSource::Population(w),
            Source::PerStudent(m) => WeightSource::PerStudent(m),
        }
    }
}

fn load_cohort(run: &mut Run, a: &CohortArgs) -> Result<(Dataset, Source)> {
    let data = run.dataset(&a.data)?;
    let source = if a.per_student_weights {
        let model = a.model.as_deref().context("--per-student-weights needs --model")?;
        Source::PerStudent(run.model(model)?)
    } else {
        let path = a.model_weights.as_deref().context("--model-weights is required")?;
        Source::Population(run.population_weights(path)?)
    };
    Ok((data, source))
}

fn write_batch(run: &mut Run, batch: &BatchResult) -> Result<()> {
    run.write_table("plans", plans_csv(batch), batch)?;
    if !batch.skipped.is_empty() {
        run.write("skipped.csv", &skipped_csv(batch))?;
        eprintln!("{} record(s) skipped, see skipped.csv", batch.skipped.len());
    }
    let s = &batch.summary;
    eprintln!(
        "{} plans at lambda {}: avg {:.3} changes, avg benefit {:.4}",
        s.plans, batch.lambda, s.avg_count, s.avg_benefit
    );
    Ok(())
}

/// Same report as a local `recommend`, but every plan is solved by the service.
fn run_recommend_remote(run: &mut Run, a: &CohortArgs, lambda: f64, url: &str) -> Result<()> {
    let data = run.dataset(&a.data)?;
    let weight_source = if a.per_student_weights {
        WeightSourceKind::PerStudent
    } else {
        WeightSourceKind::Population
    };
    let client = Client::new(url);
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    let outcomes: Vec<Result<InterventionPlan, ClientError>> = rt.block_on(async {
        let mut out = Vec::with_capacity(data.len());
        for row in &data.rows {
            let req = RecommendRequest {
                features: row.values.clone(),
                lambda,
                weight_source,
            };
            out.push(client.recommend(&req).await);
        }
        out
    });

    let mut plans = Vec::new();
    let mut skipped = Vec::new();
    for (id, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(plan) => plans.push((id, plan)),
            Err(ClientError::Api { status, body }) if status < 500 => skipped.push(SkippedRecord {
                record_id: id,
                reason: body.error,
            }),
            Err(e) => return Err(e).with_context(|| format!("record {id}")),
        }
    }
    ensure!(!plans.is_empty(), "the service rejected every record");
    let n = plans.len() as f64;
    let summary = BatchSummary {
        plans: plans.len(),
        skipped: skipped.len(),
        avg_count: plans.iter().map(|(_, p)| p.count as f64).sum::<f64>() / n,
        avg_benefit: plans.iter().map(|(_, p)| p.benefit).sum::<f64>() / n,
    };
    write_batch(
        run,
        &BatchResult {
            lambda,
            plans,
            skipped,
            summary,
        },
    )
}

fn run_serve(mut run: Run, a: &ServeArgs) -> Result<()> {
    let model_bytes = run.read(&a.model)?;
    let weights = match &a.weights {
        Some(p) => {
            let bytes = run.read(p)?;
            WeightVector::from_json(&String::from_utf8_lossy(&bytes)).with_context(|| format!("{}", p.display()))?
        }
        None => WeightVector::reference(),
    };
    let state = sleepopt_service::AppState::new(&model_bytes, weights, run.schema.clone())?;
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .with_context(|| format!("bad listen address {}:{}", a.host, a.port))?;
    if let Some(dir) = &a.static_dir {
        ensure!(dir.is_dir(), "--static-dir {} is not a directory", dir.display());
    }
    run.finish()?;
    let app = sleepopt_service::router(Arc::new(state), a.static_dir.as_deref());
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(sleepopt_service::serve(addr, app))?;
    Ok(())
}
