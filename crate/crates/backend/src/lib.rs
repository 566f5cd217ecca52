//! Everything that talks to a diffusion or embedding backend: the wire
//! protocol, an HTTP client, the resumable generation run, and a
//! deterministic mock server for tests and dry runs.

pub mod client;
pub mod conformance;
pub mod embed;
pub mod mock;
pub mod orchestrator;
pub mod protocol;

use std::path::PathBuf;

pub use client::{BackendClient, ClientError, GeneratedImage};
pub use embed::embed_via_service;
pub use mock::{serve, MockConfig, MockServer};
pub use orchestrator::{
    load_pose_assets, run_generation, wait_for_backend, ControlMap, GenerationJob, GenerationSettings, PoseAsset,
    RetryPolicy, RunOptions, RunSummary, IMAGES_DIR, MANIFEST_FILE,
};
pub use protocol::ControlType;

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("invalid options: {}", .0.join("; "))]
    InvalidOptions(Vec<String>),
    #[error("backend unreachable at {url} after {attempts} attempts: {message}")]
    Unreachable { url: String, attempts: u32, message: String },
    #[error("pose asset {pose}: {message}")]
    PoseAsset { pose: String, message: String },
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Manifest(#[from] sig_core::manifest::ManifestError),
    #[error(transparent)]
    Embedding(#[from] sig_core::EmbeddingError),
    #[error("I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
