//! Cohort-level experiments over intervention plans and their report files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::FeatureVector;
use crate::gbm::TreeEnsemble;
use crate::intervention::{
    ablate, build_problem, solve, solve_with_cardinality, AblationMode, BuildOptions, InterventionError,
    InterventionPlan,
};
use crate::schema::SurveySchema;
use crate::shap::{tree_shap, ShapError};

#[derive(Debug, Error, PartialEq)]
pub enum ExperimentError {
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("every record was skipped; first reason: {0}")]
    AllSkipped(String),
    #[error("lambda list is empty")]
    NoLambdas,
    #[error("lambda must be finite and non-negative, got {0}")]
    BadLambda(f64),
    #[error(transparent)]
    Intervention(#[from] InterventionError),
    #[error(transparent)]
    Shap(#[from] ShapError),
    #[error("cannot write report: {0}")]
    IoFailure(String),
}

/// Where per-variable optimization weights come from.
#[derive(Debug, Clone, Copy)]
pub enum WeightSource<'a> {
    /// One weight list shared by every student (actionable fields, schema order).
    Population(&'a [(String, f64)]),
    /// Each student's own absolute attributions under this model.
    PerStudent(&'a TreeEnsemble),
}

/// Absolute attributions of one record's actionable fields, schema order.
pub fn per_student_weights(
    model: &TreeEnsemble,
    row: &FeatureVector,
    schema: &SurveySchema,
) -> Result<Vec<(String, f64)>, ShapError> {
    let (phi, _) = tree_shap(model, &row.values)?;
    Ok(schema
        .actionable_indices()
        .into_iter()
        .map(|i| (schema.fields[i].name.clone(), phi[i].abs()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRecord {
    pub record_id: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub plans: usize,
    pub skipped: usize,
    pub avg_count: f64,
    pub avg_benefit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub lambda: f64,
    /// `(record_id, plan)` in record order.
    pub plans: Vec<(usize, InterventionPlan)>,
    pub skipped: Vec<SkippedRecord>,
    pub summary: BatchSummary,
}

/// Weights resolved once per record so sweeps do not recompute attributions.
struct Cohort {
    ids: Vec<usize>,
    weights: Vec<Result<Vec<(String, f64)>, String>>,
}

fn resolve_cohort(
    rows: &[FeatureVector],
    schema: &SurveySchema,
    source: WeightSource,
) -> Result<Cohort, ExperimentError> {
    if rows.is_empty() {
        return Err(ExperimentError::EmptyCohort);
    }
    let weights = rows
        .iter()
        .map(|r| match source {
            WeightSource::Population(w) => Ok(w.to_vec()),
            WeightSource::PerStudent(model) => per_student_weights(model, r, schema).map_err(|e| e.to_string()),
        })
        .collect();
    Ok(Cohort {
        ids: (0..rows.len()).collect(),
        weights,
    })
}

fn check_lambda(lambda: f64) -> Result<(), ExperimentError> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(ExperimentError::BadLambda(lambda));
    }
    Ok(())
}

fn mean(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        values.sum::<f64>() / n as f64
    }
}

/// Runs `plan_for` on every record, collecting build failures as skips.
fn run_cohort(
    rows: &[FeatureVector],
    schema: &SurveySchema,
    cohort: &Cohort,
    lambda: f64,
    mut plan_for: impl FnMut(&crate::intervention::InterventionProblem) -> Result<InterventionPlan, InterventionError>,
) -> BatchResult {
    let mut plans = Vec::with_capacity(rows.len());
    let mut skipped = Vec::new();
    for ((&id, row), weights) in cohort.ids.iter().zip(rows).zip(&cohort.weights) {
        let outcome = weights.clone().and_then(|w| {
            build_problem(row, schema, &w, lambda, BuildOptions::unit())
                .and_then(|p| plan_for(&p))
                .map_err(|e| e.to_string())
        });
        match outcome {
            Ok(plan) => plans.push((id, plan)),
            Err(reason) => skipped.push(SkippedRecord { record_id: id, reason }),
        }
    }
    let n = plans.len();
    let summary = BatchSummary {
        plans: n,
        skipped: skipped.len(),
        avg_count: mean(plans.iter().map(|(_, p)| p.count as f64), n),
        avg_benefit: mean(plans.iter().map(|(_, p)| p.benefit), n),
    };
    BatchResult {
        lambda,
        plans,
        skipped,
        summary,
    }
}

fn require_plans(result: BatchResult) -> Result<BatchResult, ExperimentError> {
    if result.plans.is_empty() {
        let first = result.skipped.first().map(|s| s.reason.clone()).unwrap_or_default();
        return Err(ExperimentError::AllSkipped(first));
    }
    Ok(result)
}

/// One optimal plan per record at a single `lambda`.
pub fn batch_recommend(
    rows: &[FeatureVector],
    schema: &SurveySchema,
    source: WeightSource,
    lambda: f64,
) -> Result<BatchResult, ExperimentError> {
    check_lambda(lambda)?;
    let cohort = resolve_cohort(rows, schema, source)?;
    require_plans(run_cohort(rows, schema, &cohort, lambda, solve))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub avg_count: f64,
    pub avg_benefit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
}

/// Cohort averages at each penalty, sorted by penalty.
pub fn lambda_sweep(
    rows: &[FeatureVector],
    schema: &SurveySchema,
    source: WeightSource,
    lambdas: &[f64],
) -> Result<SweepResult, ExperimentError> {
    if lambdas.is_empty() {
        return Err(ExperimentError::NoLambdas);
    }
    for &l in lambdas {
        check_lambda(l)?;
    }
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cohort = resolve_cohort(rows, schema, source)?;
    let mut points = Vec::with_capacity(sorted.len());
    for lambda in sorted {
        let r = require_plans(run_cohort(rows, schema, &cohort, lambda, solve))?;
        points.push(SweepPoint {
            lambda,
            avg_count: r.summary.avg_count,
            avg_benefit: r.summary.avg_benefit,
        });
    }
    Ok(SweepResult { points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub k: usize,
    pub avg_benefit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoResult {
    pub points: Vec<ParetoPoint>,
    /// How the frontier was produced.
    pub method: String,
}

pub const PARETO_METHOD: &str = "cardinality_constraint";

/// Average best benefit with at most `k` changes, for `k = 0..=k_max`.
pub fn pareto_frontier(
    rows: &[FeatureVector],
    schema: &SurveySchema,
    source: WeightSource,
    k_max: usize,
) -> Result<ParetoResult, ExperimentError> {
    let n_vars = schema.actionable_indices().len();
    if k_max > n_vars {
        return Err(InterventionError::BadK { k: k_max, n: n_vars }.into());
    }
    let cohort = resolve_cohort(rows, schema, source)?;
    let mut points = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        let r = require_plans(run_cohort(rows, schema, &cohort, 0.0, |p| solve_with_cardinality(p, k)))?;
        points.push(ParetoPoint {
            k,
            avg_benefit: r.summary.avg_benefit,
        });
    }
    Ok(ParetoResult {
        points,
        method: PARETO_METHOD.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoPenalty,
    EqualWeights,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoPenalty => "no_penalty",
            Variant::EqualWeights => "equal_weights",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub avg_interventions: f64,
    pub avg_benefit: f64,
}

/// The full model against its two simplified objectives at one `lambda`.
pub fn ablation_suite(
    rows: &[FeatureVector],
    schema: &SurveySchema,
    source: WeightSource,
    lambda: f64,
) -> Result<Vec<AblationRow>, ExperimentError> {
    check_lambda(lambda)?;
    let cohort = resolve_cohort(rows, schema, source)?;
    let variants = [
        (Variant::Full, None),
        (Variant::NoPenalty, Some(AblationMode::NoPenalty)),
        (Variant::EqualWeights, Some(AblationMode::EqualWeights)),
    ];
    variants
        .into_iter()
        .map(|(variant, mode)| {
            let r = require_plans(run_cohort(rows, schema, &cohort, lambda, |p| match mode {
                None => solve(p),
                Some(m) => ablate(p, m),
            }))?;
            Ok(AblationRow {
                variant,
                avg_interventions: r.summary.avg_count,
                avg_benefit: r.summary.avg_benefit,
            })
        })
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Run record: what went in, how it was configured, and what came out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub inputs_hash: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub files: Vec<ManifestFile>,
}

/// Collects output files and writes them alongside `manifest.json`.
#[derive(Debug)]
pub struct ReportWriter {
    dir: PathBuf,
    files: Vec<ManifestFile>,
}

fn io_fail(path: &Path, e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::IoFailure(format!("{}: {e}", path.display()))
}

impl ReportWriter {
    pub fn new(dir: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| io_fail(&dir, e))?;
        Ok(Self { dir, files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, ExperimentError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| io_fail(&path, e))?;
        self.files.push(ManifestFile {
            name: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
        Ok(path)
    }

    pub fn finish(
        self,
        command: &str,
        inputs_hash: &str,
        seed: u64,
        config: serde_json::Value,
    ) -> Result<Manifest, ExperimentError> {
        let manifest = Manifest {
            command: command.to_string(),
            inputs_hash: inputs_hash.to_string(),
            seed,
            config,
            files: self.files,
        };
        let path = self.dir.join("manifest.json");
        let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, body + "\n").map_err(|e| io_fail(&path, e))?;
        Ok(manifest)
    }
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.flush().expect("in-memory flush");
    w.into_inner().expect("in-memory buffer")
}

pub fn sweep_csv(sweep: &SweepResult) -> Vec<u8> {
    csv_bytes(
        &["lambda", "avg_count", "avg_benefit"],
        sweep
            .points
            .iter()
            .map(|p| vec![p.lambda.to_string(), p.avg_count.to_string(), p.avg_benefit.to_string()]),
    )
}

pub fn pareto_csv(pareto: &ParetoResult) -> Vec<u8> {
    csv_bytes(
        &["k", "avg_benefit"],
        pareto
            .points
            .iter()
            .map(|p| vec![p.k.to_string(), p.avg_benefit.to_string()]),
    )
}

pub fn ablation_csv(rows: &[AblationRow]) -> Vec<u8> {
    csv_bytes(
        &["variant", "avg_interventions", "avg_benefit"],
        rows.iter().map(|r| {
            vec![
                r.variant.as_str().to_string(),
                r.avg_interventions.to_string(),
                r.avg_benefit.to_string(),
            ]
        }),
    )
}

pub fn plans_csv(batch: &BatchResult) -> Vec<u8> {
    csv_bytes(
        &["record_id", "variable", "baseline", "delta", "optimized"],
        batch.plans.iter().flat_map(|(id, plan)| {
            plan.variables.iter().map(move |v| {
                vec![
                    id.to_string(),
                    v.name.clone(),
                    v.baseline.to_string(),
                    v.delta.to_string(),
                    v.optimized.to_string(),
                ]
            })
        }),
    )
}

pub fn skipped_csv(batch: &BatchResult) -> Vec<u8> {
    csv_bytes(
        &["record_id", "reason"],
        batch
            .skipped
            .iter()
            .map(|s| vec![s.record_id.to_string(), s.reason.clone()]),
    )
}

/// Everything one experiment run produced.
#[derive(Debug, Clone, Default)]
pub struct ExperimentResults {
    pub plans: Option<BatchResult>,
    pub sweep: Option<SweepResult>,
    pub pareto: Option<ParetoResult>,
    pub ablation: Option<Vec<AblationRow>>,
}

/// Writes one CSV per result kind plus `manifest.json` into `out_dir`.
pub fn emit_report(
    results: &ExperimentResults,
    out_dir: impl AsRef<Path>,
    inputs_hash: &str,
    seed: u64,
    mut config: serde_json::Value,
) -> Result<Manifest, ExperimentError> {
    let mut w = ReportWriter::new(out_dir)?;
    if let Some(b) = &results.plans {
        w.write("plans.csv", &plans_csv(b))?;
        w.write("skipped.csv", &skipped_csv(b))?;
    }
    if let Some(s) = &results.sweep {
        w.write("sweep.csv", &sweep_csv(s))?;
    }
    if let Some(p) = &results.pareto {
        w.write("pareto.csv", &pareto_csv(p))?;
        if let serde_json::Value::Object(map) = &mut config {
            map.insert("pareto_method".into(), p.method.clone().into());
        }
    }
    if let Some(a) = &results.ablation {
        w.write("ablation.csv", &ablation_csv(a))?;
    }
    w.finish("experiment", inputs_hash, seed, config)
}

/// Writes bytes to any sink, mapping failures to [`ExperimentError::IoFailure`].
pub fn write_all<W: Write>(mut out: W, bytes: &[u8]) -> Result<(), ExperimentError> {
    out.write_all(bytes)
        .map_err(|e| ExperimentError::IoFailure(e.to_string()))
}
