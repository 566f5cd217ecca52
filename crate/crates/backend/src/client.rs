use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sig_core::png_meta;

use crate::protocol::{
    EmbedRequest, EmbedResponse, ErrorBody, GenerateRequest, GenerateResponse, HealthResponse, EMBED_PATH,
    GENERATE_PATH, HEALTH_PATH,
};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);

#[derive(Debug, Clone, thiserror::Error)]
pub enum ClientError {
    #[error("invalid request: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("cannot reach {url}: {message}")]
    Transport { url: String, message: String },
    #[error("request to {url} timed out")]
    Timeout { url: String },
    #[error("HTTP {status}: {message}")]
    Http { status: u16, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl ClientError {
    /// Whether trying again could plausibly succeed.
    pub fn is_retryable(&self) -> bool {
        match self {
            ClientError::Validation(_) => false,
            ClientError::Http { status, .. } => *status >= 500 || *status == 429 || *status == 408,
            ClientError::Transport { .. } | ClientError::Timeout { .. } | ClientError::Protocol(_) => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedImage {
    pub png: Vec<u8>,
    pub model_id: String,
    pub seed_used: u64,
    pub width: u32,
    pub height: u32,
}

/// Thin typed client for one backend base URL.
#[derive(Debug, Clone)]
pub struct BackendClient {
    http: reqwest::Client,
    base: String,
}

impl BackendClient {
    pub fn new(base_url: &str) -> Result<Self, ClientError> {
        Self::with_timeout(base_url, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(base_url: &str, timeout: Duration) -> Result<Self, ClientError> {
        let base = base_url.trim_end_matches('/').to_string();
        if !(base.starts_with("http://") || base.starts_with("https://")) {
            return Err(ClientError::Validation(vec![format!(
                "backend url must start with http:// or https://, got {base_url:?}"
            )]));
        }
        let http = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ClientError::Transport {
                url: base.clone(),
                message: e.to_string(),
            })?;
        Ok(Self { http, base })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn send_error(&self, url: &str, e: reqwest::Error) -> ClientError {
        if e.is_timeout() {
            ClientError::Timeout { url: url.to_string() }
        } else {
            ClientError::Transport {
                url: url.to_string(),
                message: e.to_string(),
            }
        }
    }

    async fn decode<T: DeserializeOwned>(&self, url: &str, resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status();
        let body = resp.bytes().await.map_err(|e| {
            if e.is_timeout() {
                ClientError::Timeout { url: url.to_string() }
            } else {
                ClientError::Protocol(format!("unreadable response body: {e}"))
            }
        })?;
        if !status.is_success() {
            let message = serde_json::from_slice::<ErrorBody>(&body)
                .map(|b| b.error)
                .unwrap_or_else(|_| String::from_utf8_lossy(&body).chars().take(200).collect());
            return Err(ClientError::Http {
                status: status.as_u16(),
                message,
            });
        }
        serde_json::from_slice(&body).map_err(|e| ClientError::Protocol(format!("malformed response: {e}")))
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        let url = self.url(path);
        let resp = self
            .http
            .post(&url)
            .json(body)
            .send()
            .await
            .map_err(|e| self.send_error(&url, e))?;
        self.decode(&url, resp).await
    }

    pub async fn health(&self) -> Result<HealthResponse, ClientError> {
        let url = self.url(HEALTH_PATH);
        let resp = self.http.get(&url).send().await.map_err(|e| self.send_error(&url, e))?;
        let health: HealthResponse = self.decode(&url, resp).await?;
        if health.status != "ok" {
            return Err(ClientError::Protocol(format!("backend status is {:?}", health.status)));
        }
        if health.model_id.is_empty() {
            return Err(ClientError::Protocol("empty model_id".into()));
        }
        Ok(health)
    }

    /// Validates locally, sends, and checks the returned PNG and seed echo.
    pub async fn generate(&self, request: &GenerateRequest) -> Result<GeneratedImage, ClientError> {
        let violations = request.violations();
        if !violations.is_empty() {
            return Err(ClientError::Validation(violations));
        }
        let resp: GenerateResponse = self.post(GENERATE_PATH, request).await?;
        if resp.seed_used != request.seed {
            return Err(ClientError::Protocol(format!(
                "seed_used {} does not echo requested seed {}",
                resp.seed_used, request.seed
            )));
        }
        if resp.model_id.is_empty() {
            return Err(ClientError::Protocol("empty model_id".into()));
        }
        let png = B64
            .decode(resp.image_b64.as_bytes())
            .map_err(|e| ClientError::Protocol(format!("image_b64 is not base64: {e}")))?;
        let summary = png_meta::decode(&png).map_err(|e| ClientError::Protocol(format!("image_b64 is not a PNG: {e}")))?;
        Ok(GeneratedImage {
            png,
            model_id: resp.model_id,
            seed_used: resp.seed_used,
            width: summary.width,
            height: summary.height,
        })
    }

    pub async fn embed(&self, png: &[u8]) -> Result<EmbedResponse, ClientError> {
        let resp: EmbedResponse = self
            .post(
                EMBED_PATH,
                &EmbedRequest {
                    image_b64: B64.encode(png),
                },
            )
            .await?;
        if resp.vector.len() != resp.dim {
            return Err(ClientError::Protocol(format!(
                "dim is {} but vector has {} values",
                resp.dim,
                resp.vector.len()
            )));
        }
        if resp.dim == 0 {
            return Err(ClientError::Protocol("empty vector".into()));
        }
        Ok(resp)
    }
}
