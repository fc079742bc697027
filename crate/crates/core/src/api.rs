//! JSON request and response bodies shared by the HTTP service and its client.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSourceKind {
    /// Mean absolute attributions over the evaluation data.
    #[default]
    Population,
    /// The submitted profile's own absolute attributions.
    PerStudent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub artifact_hash: String,
    pub loaded_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub probability: f64,
    /// 1 = good sleep.
    pub label: u8,
    pub margin: f64,
}

pub type ExplainRequest = PredictRequest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainResponse {
    pub feature_names: Vec<String>,
    pub phi: Vec<f64>,
    pub base_value: f64,
    pub margin: f64,
    /// `|base_value + sum(phi) - margin|`, checked before responding.
    pub local_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecommendRequest {
    pub features: Vec<f64>,
    pub lambda: f64,
    #[serde(default)]
    pub weight_source: WeightSourceKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRequest {
    pub features: Vec<f64>,
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub weight_source: WeightSourceKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlanSummary {
    pub lambda: f64,
    pub count: usize,
    pub benefit: f64,
    pub objective: f64,
    pub active: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResponse {
    pub points: Vec<SweepPlanSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParetoRequest {
    pub features: Vec<f64>,
    pub k_max: usize,
    #[serde(default)]
    pub weight_source: WeightSourceKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub k: usize,
    pub benefit: f64,
    pub active: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoResponse {
    pub points: Vec<FrontierPoint>,
}

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    /// Correlation id for server-side failures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}
