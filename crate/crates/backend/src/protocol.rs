//! JSON bodies of the backend wire protocol.
//!
//! `GET /v1/health`, `POST /v1/generate` and `POST /v1/embed`; every error is
//! a 4xx/5xx status with an [`ErrorBody`].

use serde::{Deserialize, Serialize};

pub const HEALTH_PATH: &str = "/v1/health";
pub const GENERATE_PATH: &str = "/v1/generate";
pub const EMBED_PATH: &str = "/v1/embed";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlType {
    Openpose,
    Lineart,
}

impl ControlType {
    pub fn as_str(self) -> &'static str {
        match self {
            ControlType::Openpose => "openpose",
            ControlType::Lineart => "lineart",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    #[serde(rename = "type")]
    pub control_type: ControlType,
    pub image_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    #[serde(default)]
    pub negative_prompt: String,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub steps: u32,
    pub guidance: f64,
    #[serde(default)]
    pub control: Vec<ControlInput>,
}

impl GenerateRequest {
    /// Every constraint the request breaks.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [("width", self.width), ("height", self.height)] {
            if v == 0 || v % 8 != 0 {
                out.push(format!("{name} must be a positive multiple of 8, got {v}"));
            }
        }
        if self.steps == 0 {
            out.push("steps must be at least 1".into());
        }
        if !(self.guidance.is_finite() && self.guidance > 0.0) {
            out.push(format!("guidance must be positive, got {}", self.guidance));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub image_b64: String,
    pub model_id: String,
    pub seed_used: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub image_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vector: Vec<f32>,
    pub dim: usize,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_field_names_match_the_protocol() {
        let req = GenerateRequest {
            prompt: "p".into(),
            negative_prompt: String::new(),
            seed: u64::MAX,
            width: 512,
            height: 512,
            steps: 30,
            guidance: 7.0,
            control: vec![ControlInput {
                control_type: ControlType::Openpose,
                image_b64: "AA==".into(),
            }],
        };
        let v = serde_json::to_value(&req).unwrap();
        assert_eq!(v["control"][0]["type"], "openpose");
        assert_eq!(v["seed"], u64::MAX);
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(
            keys,
            ["control", "guidance", "height", "negative_prompt", "prompt", "seed", "steps", "width"]
        );
        assert!(req.violations().is_empty());
    }

    #[test]
    fn violations_are_all_reported() {
        let req = GenerateRequest {
            prompt: "p".into(),
            negative_prompt: String::new(),
            seed: 0,
            width: 511,
            height: 0,
            steps: 0,
            guidance: f64::NAN,
            control: vec![],
        };
        assert_eq!(req.violations().len(), 4);
    }
}
