use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use sig_backend::conformance::sample_request;
use sig_backend::protocol::{GenerateRequest, HealthResponse};
use sig_backend::{serve, BackendClient, ClientError, MockConfig};
use sig_core::embedding::CHUNK_IDENTITY;
use sig_core::png_meta;
use tokio::io::{AsyncReadExt, AsyncWriteExt};

async fn spawn(app: Router) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}")
}

/// Answers every connection with `raw` and closes it.
async fn spawn_raw(raw: &'static str) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        loop {
            let (mut sock, _) = listener.accept().await.unwrap();
            let mut buf = vec![0u8; 65536];
            let _ = sock.read(&mut buf).await;
            let _ = sock.write_all(raw.as_bytes()).await;
            let _ = sock.shutdown().await;
        }
    });
    format!("http://{addr}")
}

#[tokio::test]
async fn valid_job_yields_png_with_model_id() {
    let server = serve(MockConfig::default()).await.unwrap();
    let client = BackendClient::new(&server.url()).unwrap();
    let img = client.generate(&sample_request()).await.unwrap();
    assert_eq!((img.width, img.height), (512, 512));
    assert_eq!(img.model_id, "mock-diffusion-0");
    assert_eq!(img.seed_used, 1234);
    assert!(png_meta::decode(&img.png).unwrap().text.contains_key(CHUNK_IDENTITY));
}

#[tokio::test]
async fn width_511_is_rejected_before_any_request() {
    // Nothing listens here, so a request would surface as a transport error.
    let client = BackendClient::new("http://127.0.0.1:9").unwrap();
    let req = GenerateRequest {
        width: 511,
        ..sample_request()
    };
    match client.generate(&req).await {
        Err(ClientError::Validation(v)) => assert!(v[0].contains("511")),
        other => panic!("expected validation error, got {other:?}"),
    }
}

#[tokio::test]
async fn truncated_body_is_a_protocol_error() {
    let url = spawn_raw(
        "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: 4000\r\n\r\n{\"image_b64\":\"iVBORw0KGgo",
    )
    .await;
    let err = BackendClient::new(&url).unwrap().generate(&sample_request()).await.unwrap_err();
    assert!(matches!(err, ClientError::Protocol(_)), "{err:?}");
    assert!(err.is_retryable());
}

#[tokio::test]
async fn malformed_json_is_a_protocol_error() {
    let url = spawn_raw("HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: 9\r\n\r\n{\"image_b").await;
    let err = BackendClient::new(&url).unwrap().generate(&sample_request()).await.unwrap_err();
    assert!(matches!(err, ClientError::Protocol(_)), "{err:?}");
}

#[tokio::test]
async fn http_errors_carry_the_error_text() {
    let app = Router::new().route(
        "/v1/generate",
        post(|| async { (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"error": "loading weights"}))) }),
    );
    let url = spawn(app).await;
    let err = BackendClient::new(&url).unwrap().generate(&sample_request()).await.unwrap_err();
    match &err {
        ClientError::Http { status, message } => {
            assert_eq!(*status, 503);
            assert_eq!(message, "loading weights");
        }
        other => panic!("{other:?}"),
    }
    assert!(err.is_retryable());
    let bad = ClientError::Http {
        status: 400,
        message: String::new(),
    };
    assert!(!bad.is_retryable());
}

#[tokio::test]
async fn seed_echo_and_png_payload_are_checked() {
    let png = png_meta::encode_rgb(512, 512, &vec![0u8; 512 * 512 * 3], &[]).unwrap();
    let b64 = base64_encode(&png);
    let wrong_seed = json!({"image_b64": b64, "model_id": "m", "seed_used": 1});
    let app = Router::new().route("/v1/generate", post(move || async move { Json(wrong_seed.clone()) }));
    let err = BackendClient::new(&spawn(app).await).unwrap().generate(&sample_request()).await.unwrap_err();
    assert!(matches!(err, ClientError::Protocol(ref m) if m.contains("seed")), "{err:?}");

    let not_png = json!({"image_b64": "aGVsbG8=", "model_id": "m", "seed_used": 1234});
    let app = Router::new().route("/v1/generate", post(move || async move { Json(not_png.clone()) }));
    let err = BackendClient::new(&spawn(app).await).unwrap().generate(&sample_request()).await.unwrap_err();
    assert!(matches!(err, ClientError::Protocol(ref m) if m.contains("PNG")), "{err:?}");
}

#[tokio::test]
async fn health_requires_ok_status() {
    let app = Router::new().route(
        "/v1/health",
        get(|| async {
            Json(HealthResponse {
                status: "loading".into(),
                model_id: "m".into(),
            })
        }),
    );
    let err = BackendClient::new(&spawn(app).await).unwrap().health().await.unwrap_err();
    assert!(matches!(err, ClientError::Protocol(_)));
    assert!(BackendClient::new("ftp://x").is_err());
}

#[tokio::test]
async fn mock_is_deterministic_and_identity_tag_tracks_blend_group() {
    let server = serve(MockConfig::default()).await.unwrap();
    let client = BackendClient::new(&server.url()).unwrap();
    let a = client.generate(&sample_request()).await.unwrap();
    let b = client.generate(&sample_request()).await.unwrap();
    assert_eq!(a.png, b.png);
    let other = GenerateRequest {
        prompt: sample_request().prompt.replace("Folake", "Ngozi"),
        ..sample_request()
    };
    let c = client.generate(&other).await.unwrap();
    let tag = |png: &[u8]| png_meta::decode(png).unwrap().text[CHUNK_IDENTITY].clone();
    assert_ne!(tag(&a.png), tag(&c.png));
}

#[tokio::test]
async fn missing_prompt_is_http_400() {
    let server = serve(MockConfig::default()).await.unwrap();
    let mut body = serde_json::to_value(sample_request()).unwrap();
    body.as_object_mut().unwrap().remove("prompt");
    let resp = reqwest::Client::new()
        .post(format!("{}/v1/generate", server.url()))
        .json(&body)
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status().as_u16(), 400);
    let err: serde_json::Value = resp.json().await.unwrap();
    assert!(err["error"].as_str().unwrap().contains("prompt"));
}

fn base64_encode(bytes: &[u8]) -> String {
    use base64::Engine;
    base64::engine::general_purpose::STANDARD.encode(bytes)
}
