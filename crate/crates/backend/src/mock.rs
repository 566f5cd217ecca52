//! Deterministic in-process backend speaking the wire protocol.
//!
//! `/v1/generate` renders a block pattern seeded by
//! SHA-256(prompt ∥ seed LE ∥ control sha256 hex...) and tags the PNG with
//! `sig.identity`, `sig.pose` and `sig.seed` text chunks. `/v1/embed`
//! answers with the oracle vector for those chunks.

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use sha2::{Digest, Sha256};
use sig_core::embedding::{oracle_vector, OracleKeys, CHUNK_IDENTITY, CHUNK_POSE, CHUNK_SEED};
use sig_core::png_meta::{self, PngError};
use sig_core::seed::sha256_hex;
use sig_core::template::{extract_blend_group, extract_pose_token};
use sig_core::OracleParams;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::protocol::{
    EmbedRequest, EmbedResponse, ErrorBody, GenerateRequest, GenerateResponse, HealthResponse, EMBED_PATH,
    GENERATE_PATH, HEALTH_PATH,
};

pub const DEFAULT_MOCK_MODEL_ID: &str = "mock-diffusion-0";
pub const UNKNOWN: &str = "unknown";

#[derive(Debug, Clone, PartialEq)]
pub struct MockConfig {
    pub host: IpAddr,
    /// 0 picks a free port.
    pub port: u16,
    pub model_id: String,
    pub latency_ms: Option<u64>,
    pub oracle: OracleParams,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            host: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 0,
            model_id: DEFAULT_MOCK_MODEL_ID.into(),
            latency_ms: None,
            oracle: OracleParams::default(),
        }
    }
}

impl MockConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.model_id.trim().is_empty() {
            out.push("model_id must not be empty".into());
        }
        out.extend(self.oracle.violations().into_iter().map(|v| format!("oracle: {v}")));
        out
    }
}

/// `sig.identity` value for a prompt: SHA-256 hex of the blend-group members
/// joined by `|`, or `unknown` when the prompt has no blend group.
pub fn identity_tag(prompt: &str) -> String {
    extract_blend_group(prompt)
        .map(|members| sha256_hex(members.join("|").as_bytes()))
        .unwrap_or_else(|| UNKNOWN.to_string())
}

/// The PNG the mock returns for `request`, given the decoded control images
/// in request order.
pub fn render_mock_png(request: &GenerateRequest, controls: &[Vec<u8>]) -> Result<Vec<u8>, PngError> {
    let mut h = Sha256::new();
    h.update(request.prompt.as_bytes());
    h.update(request.seed.to_le_bytes());
    for c in controls {
        h.update(sha256_hex(c).as_bytes());
    }
    let digest: [u8; 32] = h.finalize().into();

    let (w, ht) = (request.width as usize, request.height as usize);
    let mut rgb = vec![0u8; w * ht * 3];
    for y in 0..ht {
        for x in 0..w {
            let (bx, by) = (x / 32, y / 32);
            let shade = ((x + y) / 8) as u8;
            let px = (y * w + x) * 3;
            for ch in 0..3 {
                rgb[px + ch] = digest[(bx * 7 + by * 13 + ch * 5) % 32].wrapping_add(shade);
            }
        }
    }
    let identity = identity_tag(&request.prompt);
    let pose = extract_pose_token(&request.prompt).unwrap_or_else(|| UNKNOWN.to_string());
    let seed = request.seed.to_string();
    png_meta::encode_rgb(
        request.width,
        request.height,
        &rgb,
        &[(CHUNK_IDENTITY, &identity), (CHUNK_POSE, &pose), (CHUNK_SEED, &seed)],
    )
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: message.into() })).into_response()
}

async fn health(State(config): State<Arc<MockConfig>>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        model_id: config.model_id.clone(),
    })
}

async fn generate(State(config): State<Arc<MockConfig>>, body: Bytes) -> Response {
    let request: GenerateRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed request: {e}")),
    };
    let violations = request.violations();
    if !violations.is_empty() {
        return error(StatusCode::BAD_REQUEST, violations.join("; "));
    }
    let mut controls = Vec::with_capacity(request.control.len());
    for (i, c) in request.control.iter().enumerate() {
        match B64.decode(c.image_b64.as_bytes()) {
            Ok(bytes) => controls.push(bytes),
            Err(e) => return error(StatusCode::BAD_REQUEST, format!("control[{i}].image_b64: {e}")),
        }
    }
    if let Some(ms) = config.latency_ms {
        tokio::time::sleep(Duration::from_millis(ms)).await;
    }
    let seed = request.seed;
    let rendered = tokio::task::spawn_blocking(move || render_mock_png(&request, &controls)).await;
    match rendered {
        Ok(Ok(png)) => Json(GenerateResponse {
            image_b64: B64.encode(png),
            model_id: config.model_id.clone(),
            seed_used: seed,
        })
        .into_response(),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn embed(State(config): State<Arc<MockConfig>>, body: Bytes) -> Response {
    let request: EmbedRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed request: {e}")),
    };
    let png = match B64.decode(request.image_b64.as_bytes()) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("image_b64: {e}")),
    };
    let keys = match OracleKeys::from_png(&png, std::path::Path::new("<request>")) {
        Ok(k) => k,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, format!("no face: {e}")),
    };
    let vector = oracle_vector(&config.oracle, &keys);
    Json(EmbedResponse {
        dim: vector.len(),
        vector,
        model_id: config.oracle.model_id(),
    })
    .into_response()
}

pub fn router(config: MockConfig) -> Router {
    Router::new()
        .route(HEALTH_PATH, get(health))
        .route(GENERATE_PATH, post(generate))
        .route(EMBED_PATH, post(embed))
        .with_state(Arc::new(config))
}

/// A running mock server. Dropping the handle stops it.
#[derive(Debug)]
pub struct MockServer {
    addr: SocketAddr,
    shutdown: oneshot::Sender<()>,
    task: JoinHandle<std::io::Result<()>>,
}

impl MockServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn shutdown(self) -> std::io::Result<()> {
        let _ = self.shutdown.send(());
        self.task.await.map_err(std::io::Error::other)?
    }
}

pub async fn serve(config: MockConfig) -> std::io::Result<MockServer> {
    let violations = config.violations();
    if !violations.is_empty() {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidInput, violations.join("; ")));
    }
    let listener = tokio::net::TcpListener::bind((config.host, config.port)).await?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(config);
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    tracing::info!(%addr, "mock backend listening");
    Ok(MockServer {
        addr,
        shutdown: tx,
        task,
    })
}
