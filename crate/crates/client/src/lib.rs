//! Typed async client for the sleepopt HTTP service.

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use sleepopt_core::api::{
    ErrorBody, ExplainRequest, ExplainResponse, HealthResponse, ParetoRequest, ParetoResponse, PredictRequest,
    PredictResponse, RecommendRequest, SweepRequest, SweepResponse,
};
use sleepopt_core::intervention::InterventionPlan;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    /// The service answered with a non-2xx status.
    #[error("service returned {status}: {}", .body.error)]
    Api { status: u16, body: ErrorBody },
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base_url` like `http://127.0.0.1:8080`; a trailing slash is ignored.
    pub fn new(base_url: &str) -> Self {
        Self {
            base: base_url.trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await?;
        let body = serde_json::from_str(&text).unwrap_or(ErrorBody {
            error: text,
            field: None,
            id: None,
        });
        Err(ClientError::Api {
            status: status.as_u16(),
            body,
        })
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        let resp = self.http.post(format!("{}{path}", self.base)).json(body).send().await?;
        Self::decode(resp).await
    }

    pub async fn health(&self) -> Result<HealthResponse, ClientError> {
        let resp = self.http.get(format!("{}/health", self.base)).send().await?;
        Self::decode(resp).await
    }

    pub async fn predict(&self, req: &PredictRequest) -> Result<PredictResponse, ClientError> {
        self.post("/predict", req).await
    }

    pub async fn explain(&self, req: &ExplainRequest) -> Result<ExplainResponse, ClientError> {
        self.post("/explain", req).await
    }

    pub async fn recommend(&self, req: &RecommendRequest) -> Result<InterventionPlan, ClientError> {
        self.post("/recommend", req).await
    }

    pub async fn sweep(&self, req: &SweepRequest) -> Result<SweepResponse, ClientError> {
        self.post("/sweep", req).await
    }

    pub async fn pareto(&self, req: &ParetoRequest) -> Result<ParetoResponse, ClientError> {
        self.post("/pareto", req).await
    }
}
