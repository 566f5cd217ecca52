//! The JSON run configuration. Relative paths resolve against the directory
//! holding the config file; command-line flags override file values.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sig_backend::{GenerationSettings, RetryPolicy, RunOptions};
use sig_core::analysis::{PairPolicy, DEFAULT_CONSISTENCY_THRESHOLD};
use sig_core::plan::{DEFAULT_TEMPLATE, DEFAULT_TEMPLATE_ID};
use sig_core::{DatasetConfig, OracleParams, PromptTemplate};

use crate::error::CliError;

pub const DEFAULT_BACKEND_URL: &str = "http://127.0.0.1:8000";
pub const BACKEND_URL_ENV: &str = "SIG_BACKEND_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub out_dir: PathBuf,
    /// Name pool CSV; the bundled sample pool when absent.
    pub pool: Option<PathBuf>,
    pub dataset: DatasetConfig,
    /// Template text; overrides `dataset.template_id` when set.
    pub template: Option<String>,
    pub backend_url: Option<String>,
    pub concurrency: usize,
    pub generation: GenerationSettings,
    pub retry: RetryConfig,
    pub attempt_limit: u32,
    /// Holds `<pose>_openpose.png` and optional `<pose>_lineart.png`.
    pub pose_assets_dir: Option<PathBuf>,
    pub embedding: EmbeddingConfig,
    pub analysis: AnalysisConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            pool: None,
            dataset: DatasetConfig::default(),
            template: None,
            backend_url: None,
            concurrency: 4,
            generation: GenerationSettings::default(),
            retry: RetryConfig::default(),
            attempt_limit: 9,
            pose_assets_dir: None,
            embedding: EmbeddingConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryConfig {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub jitter: bool,
}

impl Default for RetryConfig {
    fn default() -> Self {
        let p = RetryPolicy::default();
        Self {
            max_attempts: p.max_attempts,
            base_delay_ms: p.base_delay.as_millis() as u64,
            max_delay_ms: p.max_delay.as_millis() as u64,
            jitter: p.jitter,
        }
    }
}

impl RetryConfig {
    pub fn policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.max_attempts,
            base_delay: Duration::from_millis(self.base_delay_ms),
            max_delay: Duration::from_millis(self.max_delay_ms),
            jitter: self.jitter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    /// Deterministic vectors keyed off the mock backend's PNG metadata.
    Oracle,
    /// `POST /v1/embed` on `service_url` (or the backend URL).
    Service,
    /// An existing EMB1 file at `path`.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub source: EmbeddingSource,
    pub oracle: OracleParams,
    pub service_url: Option<String>,
    pub path: Option<PathBuf>,
    pub concurrency: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            source: EmbeddingSource::Oracle,
            oracle: OracleParams::default(),
            service_url: None,
            path: None,
            concurrency: 4,
        }
    }
}

/// An external dataset compared against the generated one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareDataset {
    pub label: String,
    /// Manifest-shaped JSON Lines listing.
    pub listing: PathBuf,
    pub embeddings: PathBuf,
    /// Replaces `analysis.pairs` for this dataset.
    #[serde(default)]
    pub pairs: Option<PairPolicy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub label: String,
    pub pairs: PairPolicy,
    /// KDE bandwidth; Silverman's rule when absent.
    pub bandwidth: Option<f64>,
    pub consistency_threshold: f64,
    pub compare: Vec<CompareDataset>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            label: "SIG".into(),
            pairs: PairPolicy::default(),
            bandwidth: None,
            consistency_threshold: DEFAULT_CONSISTENCY_THRESHOLD,
            compare: Vec::new(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: Config = serde_json::from_str(&text).map_err(|e| CliError::InvalidConfig(vec![format!(
            "{}: {e}",
            path.display()
        )]))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        for p in [&mut self.pool, &mut self.pose_assets_dir, &mut self.embedding.path]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        for c in &mut self.analysis.compare {
            fix(&mut c.listing);
            fix(&mut c.embeddings);
        }
    }

    /// Every problem with the config at once.
    pub fn violations(&self) -> Vec<String> {
        let mut out: Vec<String> = self.dataset.violations().into_iter().map(|v| format!("dataset: {v}")).collect();
        if self.template.is_none() && self.dataset.template_id != DEFAULT_TEMPLATE_ID {
            out.push(format!(
                "dataset: unknown template_id `{}` (built in: {DEFAULT_TEMPLATE_ID}); set `template` to supply the text",
                self.dataset.template_id
            ));
        }
        if let Some(t) = &self.template {
            if let Err(e) = PromptTemplate::parse(t) {
                out.push(format!("template: {e}"));
            }
        }
        let run = self.run_options();
        out.extend(run.violations().into_iter().map(|v| format!("generation: {v}")));
        out.extend(self.embedding.oracle.violations().into_iter().map(|v| format!("embedding: {v}")));
        if self.embedding.concurrency == 0 {
            out.push("embedding: concurrency must be positive".into());
        }
        if self.embedding.source == EmbeddingSource::File && self.embedding.path.is_none() {
            out.push("embedding: source `file` needs `path`".into());
        }
        let a = &self.analysis;
        if a.label.trim().is_empty() {
            out.push("analysis: label must not be empty".into());
        }
        if let Some(bw) = a.bandwidth {
            if !(bw.is_finite() && bw > 0.0) {
                out.push(format!("analysis: bandwidth must be positive, got {bw}"));
            }
        }
        if !(0.0..=1.0).contains(&a.consistency_threshold) {
            out.push("analysis: consistency_threshold must be within [0, 1]".into());
        }
        let mut labels = vec![a.label.as_str()];
        for c in &a.compare {
            if labels.contains(&c.label.as_str()) {
                out.push(format!("analysis: duplicate dataset label `{}`", c.label));
            }
            labels.push(&c.label);
        }
        out
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(CliError::InvalidConfig(v))
        }
    }

    pub fn template(&self) -> Result<PromptTemplate, CliError> {
        let text = self.template.as_deref().unwrap_or(DEFAULT_TEMPLATE);
        PromptTemplate::parse(text).map_err(|e| CliError::InvalidConfig(vec![format!("template: {e}")]))
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            concurrency: self.concurrency,
            settings: self.generation.clone(),
            retry: self.retry.policy(),
            health_retry: self.retry.policy(),
            attempt_limit: self.attempt_limit,
        }
    }

    /// Flag, then config file, then `SIG_BACKEND_URL`, then the local default.
    pub fn backend_url(&self, flag: Option<&str>) -> String {
        flag.map(str::to_string)
            .or_else(|| self.backend_url.clone())
            .or_else(|| std::env::var(BACKEND_URL_ENV).ok().filter(|s| !s.is_empty()))
            .unwrap_or_else(|| DEFAULT_BACKEND_URL.to_string())
    }
}
