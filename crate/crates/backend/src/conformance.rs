//! Wire-protocol checks runnable against any backend URL.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::Serialize;
use serde_json::{json, Value};
use sig_core::embedding::l2_norm;
use sig_core::png_meta;

use crate::client::{BackendClient, ClientError};
use crate::protocol::{ErrorBody, GenerateRequest, EMBED_PATH, GENERATE_PATH};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, result: Result<String, String>) -> Check {
    match result {
        Ok(detail) => Check {
            name,
            passed: true,
            detail,
        },
        Err(detail) => Check {
            name,
            passed: false,
            detail,
        },
    }
}

pub fn sample_request() -> GenerateRequest {
    GenerateRequest {
        prompt: "RAW photo, close-up portrait of [Amara | Chidinma | Folake], 25 year old African female, \
                 front-facing pose"
            .into(),
        negative_prompt: String::new(),
        seed: 1234,
        width: 512,
        height: 512,
        steps: 30,
        guidance: 7.0,
        control: Vec::new(),
    }
}

/// 4xx with an `{"error": ...}` body.
async fn expect_error_shape(http: &reqwest::Client, url: &str, body: Value) -> Result<String, String> {
    let resp = http.post(url).json(&body).send().await.map_err(|e| e.to_string())?;
    let status = resp.status();
    let bytes = resp.bytes().await.map_err(|e| e.to_string())?;
    if !status.is_client_error() {
        return Err(format!("expected 4xx, got {status}"));
    }
    let parsed: ErrorBody =
        serde_json::from_slice(&bytes).map_err(|e| format!("error body is not {{\"error\":...}}: {e}"))?;
    Ok(format!("{status}: {}", parsed.error))
}

/// Runs every generation check and, when `with_embed`, the embed checks.
pub async fn run_conformance(base_url: &str, with_embed: bool) -> Result<Vec<Check>, ClientError> {
    let client = BackendClient::new(base_url)?;
    let http = reqwest::Client::new();
    let base = client.base_url().to_string();
    let mut out = Vec::new();

    out.push(check(
        "health",
        client.health().await.map(|h| format!("model_id {}", h.model_id)).map_err(|e| e.to_string()),
    ));

    let req = sample_request();
    let first = client.generate(&req).await;
    out.push(check(
        "generate returns a 512x512 PNG",
        match &first {
            Ok(img) if (img.width, img.height) == (512, 512) && !img.model_id.is_empty() => {
                Ok(format!("{} bytes, model_id {}", img.png.len(), img.model_id))
            }
            Ok(img) => Err(format!("got {}x{}, model_id {:?}", img.width, img.height, img.model_id)),
            Err(e) => Err(e.to_string()),
        },
    ));
    let second = client.generate(&req).await;
    out.push(check(
        "generate is deterministic for a fixed seed",
        match (&first, &second) {
            (Ok(a), Ok(b)) if a.png == b.png => Ok("identical bytes".into()),
            (Ok(_), Ok(_)) => Err("bodies differ".into()),
            (_, Err(e)) | (Err(e), _) => Err(e.to_string()),
        },
    ));

    let mut body = serde_json::to_value(&req).expect("request serializes");
    body.as_object_mut().expect("object").remove("prompt");
    out.push(check(
        "missing prompt is rejected",
        expect_error_shape(&http, &format!("{base}{GENERATE_PATH}"), body).await,
    ));
    let mut body = serde_json::to_value(&req).expect("request serializes");
    body["width"] = json!(511);
    out.push(check(
        "width 511 is rejected",
        expect_error_shape(&http, &format!("{base}{GENERATE_PATH}"), body).await,
    ));
    out.push(check(
        "non-JSON body is rejected",
        async {
            let resp = http
                .post(format!("{base}{GENERATE_PATH}"))
                .header("content-type", "application/json")
                .body("{not json")
                .send()
                .await
                .map_err(|e| e.to_string())?;
            let status = resp.status();
            let bytes = resp.bytes().await.map_err(|e| e.to_string())?;
            serde_json::from_slice::<ErrorBody>(&bytes).map_err(|e| e.to_string())?;
            if status.is_client_error() {
                Ok(status.to_string())
            } else {
                Err(format!("expected 4xx, got {status}"))
            }
        }
        .await,
    ));

    if with_embed {
        let png = first.as_ref().map(|i| i.png.clone()).unwrap_or_default();
        out.push(check(
            "embed returns a unit vector",
            match client.embed(&png).await {
                Ok(r) => {
                    let n = l2_norm(&r.vector);
                    if (n - 1.0).abs() <= 1e-4 {
                        Ok(format!("dim {}, norm {n:.6}", r.dim))
                    } else {
                        Err(format!("norm {n}"))
                    }
                }
                Err(e) => Err(e.to_string()),
            },
        ));
        let blank = png_meta::encode_rgb(64, 64, &[255u8; 64 * 64 * 3], &[]).expect("blank png");
        out.push(check(
            "embed of a blank image is rejected",
            expect_error_shape(
                &http,
                &format!("{base}{EMBED_PATH}"),
                json!({ "image_b64": B64.encode(blank) }),
            )
            .await,
        ));
        out.push(check(
            "embed without image is rejected",
            expect_error_shape(&http, &format!("{base}{EMBED_PATH}"), json!({})).await,
        ));
    }
    Ok(out)
}
