//! HTTP/JSON front end over an immutable model snapshot.
//!
//! The snapshot (model, population weights, schema) is loaded once at startup
//! and shared read-only between requests; a reload means a restart.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use thiserror::Error;
use tower_http::services::ServeDir;

use sleepopt_core::api::{
    ErrorBody, ExplainRequest, ExplainResponse, FrontierPoint, HealthResponse, ParetoRequest, ParetoResponse,
    PredictRequest, PredictResponse, RecommendRequest, SweepPlanSummary, SweepRequest, SweepResponse, WeightSourceKind,
};
use sleepopt_core::experiment::{per_student_weights, sha256_hex};
use sleepopt_core::gbm::{sigmoid, GbmError, ModelArtifact, TreeEnsemble};
use sleepopt_core::intervention::{
    build_problem, solve, solve_with_cardinality, BuildOptions, InterventionError, InterventionPlan,
    InterventionProblem,
};
use sleepopt_core::shap::{actionable_weights, tree_shap, ShapError, WeightVector};
use sleepopt_core::{FeatureVector, SurveySchema};

/// Attributions must reconstruct the margin to this precision.
pub const LOCAL_ACCURACY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid model artifact: {0}")]
    Model(#[from] GbmError),
    #[error("invalid weights: {0}")]
    Weights(#[from] ShapError),
    #[error("model was trained on schema {model} but the service schema is {service}")]
    SchemaMismatch { model: String, service: String },
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("server error: {0}")]
    Serve(#[source] std::io::Error),
}

/// Everything a request can read. Never mutated after construction.
#[derive(Debug)]
pub struct AppState {
    pub model: TreeEnsemble,
    pub schema: SurveySchema,
    pub weights: WeightVector,
    population: Vec<(String, f64)>,
    pub artifact_hash: String,
    pub loaded_at: String,
}

impl AppState {
    /// `artifact_bytes` must be the exact artifact file contents; their digest
    /// is reported by `/health`.
    pub fn new(artifact_bytes: &[u8], weights: WeightVector, schema: SurveySchema) -> Result<Self, ServiceError> {
        let text = String::from_utf8_lossy(artifact_bytes);
        let artifact = ModelArtifact::from_json(&text)?;
        if artifact.schema_hash != schema.hash() {
            return Err(ServiceError::SchemaMismatch {
                model: artifact.schema_hash,
                service: schema.hash(),
            });
        }
        let population = actionable_weights(&weights, &schema)?;
        Ok(Self {
            model: artifact.ensemble(),
            schema,
            weights,
            population,
            artifact_hash: sha256_hex(artifact_bytes),
            loaded_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        })
    }

    pub fn load(model_path: &Path, weights_path: &Path, schema: SurveySchema) -> Result<Self, ServiceError> {
        let bytes = std::fs::read(model_path).map_err(|source| ServiceError::Read {
            path: model_path.to_path_buf(),
            source,
        })?;
        let weights = WeightVector::load(weights_path)?;
        Self::new(&bytes, weights, schema)
    }

    pub fn population_weights(&self) -> &[(String, f64)] {
        &self.population
    }
}

/// A JSON error response.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn bad_request(error: impl Into<String>, field: Option<&str>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            body: ErrorBody {
                error: error.into(),
                field: field.map(str::to_string),
                id: None,
            },
        }
    }

    fn unprocessable(error: impl Into<String>, field: &str) -> Self {
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body: ErrorBody {
                error: error.into(),
                field: Some(field.to_string()),
                id: None,
            },
        }
    }

    /// Logs the detail under a fresh id and returns only the id to the caller.
    fn internal(detail: impl std::fmt::Display) -> Self {
        let id = uuid::Uuid::new_v4().to_string();
        eprintln!("internal error {id}: {detail}");
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            body: ErrorBody {
                error: "internal error".into(),
                field: None,
                id: Some(id),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<InterventionError> for ApiError {
    fn from(e: InterventionError) -> Self {
        match &e {
            InterventionError::BaselineOutOfBounds { name, .. } => ApiError::unprocessable(e.to_string(), name),
            InterventionError::NegativeLambda(_) => ApiError::bad_request(e.to_string(), Some("lambda")),
            InterventionError::BadK { .. } => ApiError::bad_request(e.to_string(), Some("k_max")),
            _ => ApiError::internal(e),
        }
    }
}

/// Name in the first backquoted span of a serde message, e.g. "missing field `lambda`".
fn quoted_name(msg: &str) -> Option<&str> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(&msg[start..start + len])
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| {
        let msg = e.to_string();
        let field = if msg.starts_with("missing field") || msg.starts_with("unknown field") {
            quoted_name(&msg)
        } else {
            None
        };
        ApiError::bad_request(msg.clone(), field)
    })
}

impl AppState {
    fn check_features(&self, features: &[f64]) -> Result<(), ApiError> {
        if features.len() != self.schema.len() {
            return Err(ApiError::bad_request(
                format!(
                    "features: expected {} values, got {}",
                    self.schema.len(),
                    features.len()
                ),
                Some("features"),
            ));
        }
        for (field, &v) in self.schema.fields.iter().zip(features) {
            if v.fract() != 0.0 || !field.in_bounds(v) {
                return Err(ApiError::unprocessable(
                    format!(
                        "{} = {v} is not an integer level in [{}, {}]",
                        field.name, field.lower_bound, field.upper_bound
                    ),
                    &field.name,
                ));
            }
        }
        Ok(())
    }

    fn weights_for(&self, features: &[f64], source: WeightSourceKind) -> Result<Vec<(String, f64)>, ApiError> {
        match source {
            WeightSourceKind::Population => Ok(self.population.clone()),
            WeightSourceKind::PerStudent => {
                per_student_weights(&self.model, &FeatureVector::unlabeled(features.to_vec()), &self.schema)
                    .map_err(ApiError::internal)
            }
        }
    }

    fn problem(
        &self,
        features: &[f64],
        lambda: f64,
        source: WeightSourceKind,
    ) -> Result<InterventionProblem, ApiError> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(ApiError::bad_request(
                format!("lambda must be non-negative, got {lambda}"),
                Some("lambda"),
            ));
        }
        let weights = self.weights_for(features, source)?;
        let row = FeatureVector::unlabeled(features.to_vec());
        Ok(build_problem(
            &row,
            &self.schema,
            &weights,
            lambda,
            BuildOptions::unit(),
        )?)
    }

    pub fn recommend(&self, req: &RecommendRequest) -> Result<InterventionPlan, ApiError> {
        self.check_features(&req.features)?;
        let problem = self.problem(&req.features, req.lambda, req.weight_source)?;
        Ok(solve(&problem)?)
    }
}

type Shared = State<Arc<AppState>>;

async fn health(State(state): Shared) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        artifact_hash: state.artifact_hash.clone(),
        loaded_at: state.loaded_at.clone(),
    })
}

async fn predict(State(state): Shared, body: Bytes) -> Result<Json<PredictResponse>, ApiError> {
    let req: PredictRequest = parse(&body)?;
    state.check_features(&req.features)?;
    let margin = state.model.predict_margin(&req.features).map_err(ApiError::internal)?;
    let probability = sigmoid(margin);
    Ok(Json(PredictResponse {
        probability,
        label: u8::from(probability >= 0.5),
        margin,
    }))
}

async fn explain(State(state): Shared, body: Bytes) -> Result<Json<ExplainResponse>, ApiError> {
    let req: ExplainRequest = parse(&body)?;
    state.check_features(&req.features)?;
    let (phi, base_value) = tree_shap(&state.model, &req.features).map_err(ApiError::internal)?;
    let margin = state.model.predict_margin(&req.features).map_err(ApiError::internal)?;
    let local_error = (base_value + phi.iter().sum::<f64>() - margin).abs();
    if !(local_error < LOCAL_ACCURACY_TOL) {
        return Err(ApiError::internal(format!("local accuracy violated by {local_error}")));
    }
    Ok(Json(ExplainResponse {
        feature_names: state.schema.feature_names().iter().map(|s| s.to_string()).collect(),
        phi,
        base_value,
        margin,
        local_error,
    }))
}

async fn recommend(State(state): Shared, body: Bytes) -> Result<Json<InterventionPlan>, ApiError> {
    let req: RecommendRequest = parse(&body)?;
    state.recommend(&req).map(Json)
}

async fn sweep(State(state): Shared, body: Bytes) -> Result<Json<SweepResponse>, ApiError> {
    let req: SweepRequest = parse(&body)?;
    state.check_features(&req.features)?;
    if req.lambdas.is_empty() {
        return Err(ApiError::bad_request("lambdas must not be empty", Some("lambdas")));
    }
    let mut points = Vec::with_capacity(req.lambdas.len());
    for &lambda in &req.lambdas {
        let plan = solve(&state.problem(&req.features, lambda, req.weight_source)?)?;
        points.push(SweepPlanSummary {
            lambda,
            count: plan.count,
            benefit: plan.benefit,
            objective: plan.objective,
            active: plan.active_names().into_iter().map(str::to_string).collect(),
        });
    }
    Ok(Json(SweepResponse { points }))
}

async fn pareto(State(state): Shared, body: Bytes) -> Result<Json<ParetoResponse>, ApiError> {
    let req: ParetoRequest = parse(&body)?;
    state.check_features(&req.features)?;
    let problem = state.problem(&req.features, 0.0, req.weight_source)?;
    let mut points = Vec::with_capacity(req.k_max + 1);
    for k in 0..=req.k_max {
        let plan = solve_with_cardinality(&problem, k)?;
        points.push(FrontierPoint {
            k,
            benefit: plan.benefit,
            active: plan.active_names().into_iter().map(str::to_string).collect(),
        });
    }
    Ok(Json(ParetoResponse { points }))
}

/// Routes for the JSON API, plus static files from `static_dir` for any other path.
pub fn router(state: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/predict", post(predict))
        .route("/explain", post(explain))
        .route("/recommend", post(recommend))
        .route("/sweep", post(sweep))
        .route("/pareto", post(pareto))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, app: Router) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServiceError::Bind { addr, source })?;
    eprintln!("listening on {}", listener.local_addr().map_err(ServiceError::Serve)?);
    run(listener, app).await
}

/// Serves on an already bound listener until Ctrl-C.
pub async fn run(listener: tokio::net::TcpListener, app: Router) -> Result<(), ServiceError> {
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(ServiceError::Serve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quoted_field_names() {
        assert_eq!(quoted_name("missing field `lambda` at line 1"), Some("lambda"));
        assert_eq!(quoted_name("no quotes"), None);
    }
}
