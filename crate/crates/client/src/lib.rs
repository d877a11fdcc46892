//! Typed client for the biasspace HTTP service.

use biasspace_core::error::ErrorKind;
use biasspace_core::pipeline::{
    DebiasRequest, DebiasResponse, EmbeddingInfo, EmbeddingSource, EqRequest, EqResponse, ErrorReport,
    HypothesisRequest, HypothesisResponse, MacRequest, MacResponse, ReportRequest, ReportResponse,
    SubspaceRequest, SubspaceResponse,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The service answered with an error payload.
    #[error("{}", .report.message)]
    Api { status: u16, report: ErrorReport },
    #[error("request to {url} failed: {source}")]
    Transport { url: String, source: reqwest::Error },
    #[error("unexpected response from {url} ({status}): {body}")]
    Unexpected { url: String, status: u16, body: String },
}

impl ClientError {
    /// Transport failures count as I/O errors.
    pub fn kind(&self) -> ErrorKind {
        match self {
            ClientError::Api { report, .. } => report.kind,
            ClientError::Transport { .. } | ClientError::Unexpected { .. } => ErrorKind::Io,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub cached: usize,
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        let base = base.into().trim_end_matches('/').to_string();
        Client {
            base,
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn decode<T: DeserializeOwned>(&self, url: String, resp: reqwest::Response) -> Result<T> {
        let status = resp.status();
        let body = resp
            .bytes()
            .await
            .map_err(|source| ClientError::Transport { url: url.clone(), source })?;
        if status.is_success() {
            if let Ok(v) = serde_json::from_slice(&body) {
                return Ok(v);
            }
        } else if let Ok(report) = serde_json::from_slice::<ErrorReport>(&body) {
            return Err(ClientError::Api {
                status: status.as_u16(),
                report,
            });
        }
        Err(ClientError::Unexpected {
            url,
            status: status.as_u16(),
            body: String::from_utf8_lossy(&body).into_owned(),
        })
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let url = format!("{}{path}", self.base);
        let resp = self
            .http
            .post(&url)
            .json(body)
            .send()
            .await
            .map_err(|source| ClientError::Transport { url: url.clone(), source })?;
        self.decode(url, resp).await
    }

    pub async fn health(&self) -> Result<Health> {
        let url = format!("{}/health", self.base);
        let resp = self
            .http
            .get(&url)
            .send()
            .await
            .map_err(|source| ClientError::Transport { url: url.clone(), source })?;
        self.decode(url, resp).await
    }

    pub async fn load(&self, source: &EmbeddingSource) -> Result<EmbeddingInfo> {
        self.post("/embeddings", source).await
    }

    pub async fn subspace(&self, req: &SubspaceRequest) -> Result<SubspaceResponse> {
        self.post("/subspace", req).await
    }

    pub async fn debias(&self, req: &DebiasRequest) -> Result<DebiasResponse> {
        self.post("/debias", req).await
    }

    pub async fn eval_mac(&self, req: &MacRequest) -> Result<MacResponse> {
        self.post("/eval/mac", req).await
    }

    pub async fn eval_eq(&self, req: &EqRequest) -> Result<EqResponse> {
        self.post("/eval/eq", req).await
    }

    pub async fn validate_hypothesis(&self, req: &HypothesisRequest) -> Result<HypothesisResponse> {
        self.post("/validate-hypothesis", req).await
    }

    pub async fn report(&self, req: &ReportRequest) -> Result<ReportResponse> {
        self.post("/report", req).await
    }
}
