use std::path::PathBuf;

use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("missing input {path}: {hint}")]
    MissingInput { path: PathBuf, hint: String },
    #[error("I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("conformance failed: {0}")]
    Conformance(String),
    #[error(transparent)]
    Pool(#[from] sig_core::PoolError),
    #[error(transparent)]
    Plan(#[from] sig_core::PlanError),
    #[error(transparent)]
    Manifest(#[from] sig_core::manifest::ManifestError),
    #[error(transparent)]
    Embedding(#[from] sig_core::EmbeddingError),
    #[error(transparent)]
    Analysis(#[from] sig_core::analysis::AnalysisError),
    #[error(transparent)]
    Backend(#[from] sig_backend::BackendError),
    #[error(transparent)]
    Client(#[from] sig_backend::ClientError),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::InvalidConfig(_) => "invalid_config",
            CliError::MissingInput { .. } => "missing_input",
            CliError::Io { .. } => "io",
            CliError::Verification(_) => "verification_failed",
            CliError::Conformance(_) => "conformance_failed",
            CliError::Pool(_) => "pool",
            CliError::Plan(_) => "plan",
            CliError::Manifest(_) => "manifest",
            CliError::Embedding(_) => "embedding",
            CliError::Analysis(_) => "analysis",
            CliError::Backend(sig_backend::BackendError::Unreachable { .. }) => "backend_unreachable",
            CliError::Backend(_) => "backend",
            CliError::Client(_) => "backend",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::InvalidConfig(_) => 2,
            _ => 1,
        }
    }

    /// Single-line JSON for stderr.
    pub fn to_json_line(&self) -> String {
        let mut v = json!({ "error": self.kind(), "message": self.to_string() });
        match self {
            CliError::InvalidConfig(violations) => v["violations"] = json!(violations),
            CliError::MissingInput { path, .. } => v["path"] = json!(path),
            _ => {}
        }
        v.to_string()
    }
}
