use std::time::Duration;

use reqwest::blocking::{Client, Response};
use reqwest::StatusCode;

use super::wire::{BackendMeta, ErrorBody, ScoreRequest, ScoreResponse};
use super::ScoreBackend;
use crate::error::BackendError;

/// Client for a model sidecar speaking the `/v1` JSON protocol.
///
/// Connection failures, timeouts, 429 and 5xx responses are reported as
/// transient; other non-success statuses are permanent.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    base: String,
    client: Client,
    model_id: Option<String>,
}

impl HttpBackend {
    pub fn new(endpoint: &str) -> Result<Self, BackendError> {
        Self::with_timeout(endpoint, Duration::from_secs(120))
    }

    pub fn with_timeout(endpoint: &str, timeout: Duration) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Permanent {
                code: "client".into(),
                message: e.to_string(),
            })?;
        Ok(HttpBackend {
            base: endpoint.trim_end_matches('/').to_owned(),
            client,
            model_id: None,
        })
    }

    /// Pin requests to one model on a multi-model sidecar.
    pub fn with_model(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = Some(model_id.into());
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.base
    }

    fn decode<T: serde::de::DeserializeOwned>(response: Response) -> Result<T, BackendError> {
        let status = response.status();
        let body = response.text().map_err(|e| BackendError::Transient(e.to_string()))?;
        if status.is_success() {
            return serde_json::from_str(&body).map_err(|e| BackendError::Permanent {
                code: "bad-response".into(),
                message: e.to_string(),
            });
        }
        let (code, message) = match serde_json::from_str::<ErrorBody>(&body) {
            Ok(b) => (b.error.code, b.error.message),
            Err(_) => (status.as_u16().to_string(), body),
        };
        if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            Err(BackendError::Transient(format!("{status} {code}: {message}")))
        } else {
            Err(BackendError::Permanent { code, message })
        }
    }
}

fn transport(e: reqwest::Error) -> BackendError {
    BackendError::Transient(e.to_string())
}

impl ScoreBackend for HttpBackend {
    fn meta(&self) -> Result<BackendMeta, BackendError> {
        let url = match &self.model_id {
            Some(model) => format!("{}/v1/meta?model_id={model}", self.base),
            None => format!("{}/v1/meta", self.base),
        };
        Self::decode(self.client.get(url).send().map_err(transport)?)
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
        let body = match (&self.model_id, &request.model_id) {
            (Some(model), None) => {
                let mut r = request.clone();
                r.model_id = Some(model.clone());
                serde_json::to_vec(&r)
            }
            _ => serde_json::to_vec(request),
        }
        .map_err(|e| BackendError::Permanent {
            code: "encode".into(),
            message: e.to_string(),
        })?;
        let response = self
            .client
            .post(format!("{}/v1/score", self.base))
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body)
            .send()
            .map_err(transport)?;
        let decoded: ScoreResponse = Self::decode(response)?;
        if decoded.results.len() != request.items.len() {
            return Err(BackendError::Permanent {
                code: "bad-response".into(),
                message: format!("{} results for {} items", decoded.results.len(), request.items.len()),
            });
        }
        Ok(decoded)
    }
}
