//! Typed async client for the lapnet HTTP service.

use lapnet::harness::api::{
    AblateRequest, ErrorBody, ErrorKind, EvalRequest, FrameRequest, GenDataRequest, OpenStreamRequest, StreamFrame,
    StreamInfo, TrainRequest,
};
use lapnet::harness::{AblationTable, EvalReport, GenReport, TrainReport};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The service rejected the request or failed while running it.
    #[error("{message}")]
    Api {
        status: StatusCode,
        kind: ErrorKind,
        message: String,
    },
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
}

impl ClientError {
    /// True when the service classified the failure as bad input.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            ClientError::Api {
                kind: ErrorKind::Validation,
                ..
            }
        )
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Client {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await?;
        let (kind, message) = match serde_json::from_str::<ErrorBody>(&text) {
            Ok(body) => (body.kind, body.message),
            Err(_) if status.is_client_error() => (ErrorKind::Validation, text),
            Err(_) => (ErrorKind::Runtime, text),
        };
        Err(ClientError::Api { status, kind, message })
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        let resp = self.http.post(format!("{}{path}", self.base)).json(body).send().await?;
        Self::decode(resp).await
    }

    pub async fn health(&self) -> Result<serde_json::Value, ClientError> {
        let resp = self.http.get(format!("{}/v1/health", self.base)).send().await?;
        Self::decode(resp).await
    }

    pub async fn train(&self, req: &TrainRequest) -> Result<TrainReport, ClientError> {
        self.post("/v1/train", req).await
    }

    pub async fn eval(&self, req: &EvalRequest) -> Result<EvalReport, ClientError> {
        self.post("/v1/eval", req).await
    }

    pub async fn ablate(&self, req: &AblateRequest) -> Result<AblationTable, ClientError> {
        self.post("/v1/ablate", req).await
    }

    pub async fn gen_data(&self, req: &GenDataRequest) -> Result<GenReport, ClientError> {
        self.post("/v1/gen-data", req).await
    }

    pub async fn open_stream(&self, req: &OpenStreamRequest) -> Result<StreamInfo, ClientError> {
        self.post("/v1/streams", req).await
    }

    pub async fn push_frame(&self, id: u64, frame: Vec<f64>) -> Result<StreamFrame, ClientError> {
        self.post(&format!("/v1/streams/{id}/frames"), &FrameRequest { frame }).await
    }

    pub async fn close_stream(&self, id: u64) -> Result<(), ClientError> {
        let resp = self.http.delete(format!("{}/v1/streams/{id}", self.base)).send().await?;
        if resp.status().is_success() {
            return Ok(());
        }
        Self::decode::<serde_json::Value>(resp).await.map(|_| ())
    }
}
