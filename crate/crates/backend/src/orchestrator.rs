use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use futures::stream::{self, StreamExt};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sig_core::manifest::{
    image_file_name, now_timestamp, prompt_fingerprint, verify_record, ManifestAppender, VerifyStatus,
};
use sig_core::png_meta;
use sig_core::seed::sha256_hex;
use sig_core::{IdentitySpec, Manifest, ManifestRecord, PromptBundle, Status};

use crate::client::{BackendClient, ClientError};
use crate::protocol::{ControlInput, ControlType, GenerateRequest};
use crate::BackendError;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const IMAGES_DIR: &str = "images";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlMap {
    control_type: ControlType,
    bytes: Vec<u8>,
    sha256: String,
}

impl ControlMap {
    pub fn new(control_type: ControlType, bytes: Vec<u8>) -> Self {
        let sha256 = sha256_hex(&bytes);
        Self {
            control_type,
            bytes,
            sha256,
        }
    }

    pub fn control_type(&self) -> ControlType {
        self.control_type
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn sha256(&self) -> &str {
        &self.sha256
    }
}

/// Conditioning images shared by every identity rendered in one pose.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoseAsset {
    pose: String,
    control_maps: Vec<ControlMap>,
}

impl PoseAsset {
    /// Needs an openpose map; at most one map per control type.
    pub fn new(pose: impl Into<String>, control_maps: Vec<ControlMap>) -> Result<Self, BackendError> {
        let pose = pose.into();
        let asset_error = |message: String| BackendError::PoseAsset {
            pose: pose.clone(),
            message,
        };
        if !control_maps.iter().any(|m| m.control_type == ControlType::Openpose) {
            return Err(asset_error("no openpose control map".into()));
        }
        let mut seen = Vec::new();
        for m in &control_maps {
            if seen.contains(&m.control_type) {
                return Err(asset_error(format!("duplicate {} map", m.control_type.as_str())));
            }
            seen.push(m.control_type);
        }
        Ok(Self { pose, control_maps })
    }

    /// Reads `<pose>_openpose.png` and, if present, `<pose>_lineart.png`.
    pub fn load(dir: &Path, pose: &str) -> Result<Self, BackendError> {
        let mut maps = Vec::new();
        for control_type in [ControlType::Openpose, ControlType::Lineart] {
            let path = dir.join(format!("{pose}_{}.png", control_type.as_str()));
            if control_type == ControlType::Lineart && !path.exists() {
                continue;
            }
            let bytes = std::fs::read(&path).map_err(|source| BackendError::Io {
                path: path.clone(),
                source,
            })?;
            png_meta::decode(&bytes).map_err(|e| BackendError::PoseAsset {
                pose: pose.to_string(),
                message: format!("{}: {e}", path.display()),
            })?;
            maps.push(ControlMap::new(control_type, bytes));
        }
        Self::new(pose, maps)
    }

    pub fn pose(&self) -> &str {
        &self.pose
    }

    pub fn control_maps(&self) -> &[ControlMap] {
        &self.control_maps
    }

    pub fn control_refs(&self) -> Vec<String> {
        self.control_maps.iter().map(|m| m.sha256.clone()).collect()
    }

    fn wire_controls(&self) -> Vec<ControlInput> {
        self.control_maps
            .iter()
            .map(|m| ControlInput {
                control_type: m.control_type,
                image_b64: B64.encode(&m.bytes),
            })
            .collect()
    }
}

pub fn load_pose_assets(dir: &Path, poses: &[String]) -> Result<BTreeMap<String, PoseAsset>, BackendError> {
    poses
        .iter()
        .map(|p| Ok((p.clone(), PoseAsset::load(dir, p)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSettings {
    pub width: u32,
    pub height: u32,
    pub steps: u32,
    pub guidance: f64,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
            steps: 30,
            guidance: 7.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationJob {
    pub identity_id: String,
    pub pose: String,
    pub positive_prompt: String,
    pub negative_prompt: String,
    pub generation_seed: u64,
    pub width: u32,
    pub height: u32,
    pub steps: u32,
    pub guidance: f64,
    pub control_refs: Vec<String>,
}

impl GenerationJob {
    pub fn new(bundle: &PromptBundle, settings: &GenerationSettings, asset: Option<&PoseAsset>) -> Self {
        Self {
            identity_id: bundle.identity_id.clone(),
            pose: bundle.pose.clone(),
            positive_prompt: bundle.positive_prompt.clone(),
            negative_prompt: bundle.negative_prompt.clone(),
            generation_seed: bundle.generation_seed,
            width: settings.width,
            height: settings.height,
            steps: settings.steps,
            guidance: settings.guidance,
            control_refs: asset.map(PoseAsset::control_refs).unwrap_or_default(),
        }
    }

    pub fn request(&self, control: Vec<ControlInput>) -> GenerateRequest {
        GenerateRequest {
            prompt: self.positive_prompt.clone(),
            negative_prompt: self.negative_prompt.clone(),
            seed: self.generation_seed,
            width: self.width,
            height: self.height,
            steps: self.steps,
            guidance: self.guidance,
            control,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_secs(1),
            max_delay: Duration::from_secs(30),
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// Wait before attempt `attempt + 1`, for `attempt` ≥ 1.
    pub fn delay(&self, attempt: u32) -> Duration {
        let exp = self.base_delay.saturating_mul(1u32 << (attempt - 1).min(16));
        let d = exp.min(self.max_delay);
        if self.jitter {
            d.mul_f64(rand::rng().random_range(0.5..1.5))
        } else {
            d
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub concurrency: usize,
    pub settings: GenerationSettings,
    /// Per job, per run.
    pub retry: RetryPolicy,
    pub health_retry: RetryPolicy,
    /// Failed records whose cumulative attempts reached this are left alone.
    pub attempt_limit: u32,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            concurrency: 4,
            settings: GenerationSettings::default(),
            retry: RetryPolicy::default(),
            health_retry: RetryPolicy::default(),
            attempt_limit: 9,
        }
    }
}

impl RunOptions {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.concurrency == 0 {
            out.push("concurrency must be positive".into());
        }
        if self.retry.max_attempts == 0 || self.health_retry.max_attempts == 0 {
            out.push("retry attempts must be positive".into());
        }
        if self.attempt_limit == 0 {
            out.push("attempt_limit must be positive".into());
        }
        let probe = GenerateRequest {
            prompt: String::new(),
            negative_prompt: String::new(),
            seed: 0,
            width: self.settings.width,
            height: self.settings.height,
            steps: self.settings.steps,
            guidance: self.settings.guidance,
            control: Vec::new(),
        };
        out.extend(probe.violations());
        out
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    pub model_id: Option<String>,
    /// `/v1/generate` calls made by this run.
    pub requests: usize,
    pub generated: usize,
    pub failed: usize,
    pub skipped: usize,
    /// `generated` records whose image was missing or altered on disk.
    pub repaired: usize,
}

/// Health check with bounded, backed-off retries.
pub async fn wait_for_backend(client: &BackendClient, policy: &RetryPolicy) -> Result<String, BackendError> {
    let mut last = None;
    for attempt in 1..=policy.max_attempts {
        match client.health().await {
            Ok(h) => return Ok(h.model_id),
            Err(e) => {
                tracing::warn!(attempt, error = %e, "backend health check failed");
                last = Some(e);
                if attempt < policy.max_attempts {
                    tokio::time::sleep(policy.delay(attempt)).await;
                }
            }
        }
    }
    Err(BackendError::Unreachable {
        url: client.base_url().to_string(),
        attempts: policy.max_attempts,
        message: last.map(|e| e.to_string()).unwrap_or_default(),
    })
}

struct Pending {
    job: GenerationJob,
    record: ManifestRecord,
}

fn base_record(spec: &IdentitySpec, bundle: &PromptBundle, previous: Option<&ManifestRecord>) -> ManifestRecord {
    let now = now_timestamp();
    ManifestRecord {
        identity_id: bundle.identity_id.clone(),
        pose: bundle.pose.clone(),
        demographics: spec.demographics,
        triplet_key: spec.triplet.canonical_key.clone(),
        prompt_fingerprint: prompt_fingerprint(&bundle.positive_prompt, &bundle.negative_prompt),
        generation_seed: bundle.generation_seed,
        model_id: None,
        image_path: format!("{IMAGES_DIR}/{}", image_file_name(&bundle.identity_id, &bundle.pose)),
        image_sha256: None,
        status: Status::Planned,
        attempts: previous.map_or(0, |p| p.attempts),
        last_error: None,
        created_at: previous.map_or_else(|| now.clone(), |p| p.created_at.clone()),
        updated_at: now,
    }
}

async fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), BackendError> {
    let tmp = path.with_extension("png.part");
    let io = |source| BackendError::Io {
        path: path.to_path_buf(),
        source,
    };
    tokio::fs::write(&tmp, bytes).await.map_err(io)?;
    tokio::fs::rename(&tmp, path).await.map_err(io)
}

async fn run_job(
    client: &BackendClient,
    pending: Pending,
    controls: Arc<Vec<ControlInput>>,
    retry: &RetryPolicy,
    out_dir: &Path,
) -> Result<(ManifestRecord, u32), BackendError> {
    let Pending { job, mut record } = pending;
    let request = job.request(controls.as_ref().clone());
    let mut last_error: Option<ClientError> = None;
    let mut calls = 0;
    for attempt in 1..=retry.max_attempts {
        calls = attempt;
        let result = client.generate(&request).await.and_then(|img| {
            if (img.width, img.height) != (job.width, job.height) {
                Err(ClientError::Protocol(format!(
                    "image is {}x{}, requested {}x{}",
                    img.width, img.height, job.width, job.height
                )))
            } else {
                Ok(img)
            }
        });
        match result {
            Ok(img) => {
                write_atomic(&out_dir.join(&record.image_path), &img.png).await?;
                record.status = Status::Generated;
                record.model_id = Some(img.model_id);
                record.image_sha256 = Some(sha256_hex(&img.png));
                record.attempts += attempt;
                record.last_error = None;
                record.updated_at = now_timestamp();
                return Ok((record, attempt));
            }
            Err(e) => {
                tracing::warn!(image = %record.image_id(), attempt, error = %e, "generation attempt failed");
                let retry_more = e.is_retryable() && attempt < retry.max_attempts;
                last_error = Some(e);
                if !retry_more {
                    break;
                }
                tokio::time::sleep(retry.delay(attempt)).await;
            }
        }
    }
    record.status = Status::Failed;
    record.attempts += calls;
    record.last_error = last_error.map(|e| e.to_string());
    record.updated_at = now_timestamp();
    Ok((record, calls))
}

/// Materializes every bundle as `images/<identity_id>_<pose>.png` under
/// `out_dir`, recording progress in `manifest.jsonl`.
///
/// Rerunning skips records already generated whose image still matches its
/// checksum and whose prompt and seed are unchanged. When nothing is pending
/// the backend is not contacted. The backend is health-checked before the
/// manifest is first written, so an unreachable backend leaves it as it was.
/// Poses without an asset are generated without control maps.
pub async fn run_generation(
    plan: &[IdentitySpec],
    bundles: &[PromptBundle],
    poses: &BTreeMap<String, PoseAsset>,
    client: &BackendClient,
    options: &RunOptions,
    out_dir: &Path,
) -> Result<RunSummary, BackendError> {
    let violations = options.violations();
    if !violations.is_empty() {
        return Err(BackendError::InvalidOptions(violations));
    }
    let specs: HashMap<&str, &IdentitySpec> = plan.iter().map(|s| (s.identity_id.as_str(), s)).collect();
    let images_dir = out_dir.join(IMAGES_DIR);
    std::fs::create_dir_all(&images_dir).map_err(|source| BackendError::Io {
        path: images_dir.clone(),
        source,
    })?;
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let mut manifest = Manifest::load_or_default(&manifest_path)?;

    for pose in bundles.iter().map(|b| b.pose.as_str()).collect::<std::collections::BTreeSet<_>>() {
        if !poses.contains_key(pose) {
            tracing::warn!(pose, "no pose asset; generating without control maps");
        }
    }
    let controls: HashMap<&str, Arc<Vec<ControlInput>>> = poses
        .iter()
        .map(|(k, a)| (k.as_str(), Arc::new(a.wire_controls())))
        .collect();
    let no_controls = Arc::new(Vec::new());

    let mut pending = Vec::new();
    let mut fresh = Vec::new();
    let mut skipped = 0;
    let mut repaired = 0;
    for bundle in bundles {
        let spec = specs
            .get(bundle.identity_id.as_str())
            .ok_or_else(|| BackendError::InvalidOptions(vec![format!("bundle for unplanned identity {}", bundle.identity_id)]))?;
        let previous = manifest.get(&bundle.identity_id, &bundle.pose);
        let mut record = base_record(spec, bundle, previous);
        match previous {
            Some(prev) if prev.status == Status::Generated => {
                let unchanged = prev.prompt_fingerprint == record.prompt_fingerprint
                    && prev.generation_seed == record.generation_seed;
                let on_disk = verify_record(prev, out_dir);
                if unchanged && on_disk == VerifyStatus::Ok {
                    skipped += 1;
                    continue;
                }
                repaired += usize::from(unchanged);
                record.last_error = Some(if unchanged {
                    format!("image {on_disk:?} on resume")
                } else {
                    "prompt or seed changed".into()
                });
                fresh.push(record.clone());
            }
            Some(prev) if prev.status == Status::Failed && prev.attempts >= options.attempt_limit => {
                skipped += 1;
                continue;
            }
            Some(prev) if prev.without_timestamps() == record.without_timestamps() => {}
            Some(_) | None => fresh.push(record.clone()),
        }
        let asset = poses.get(&bundle.pose);
        pending.push(Pending {
            job: GenerationJob::new(bundle, &options.settings, asset),
            record,
        });
    }

    let keys: Vec<(String, String)> = bundles
        .iter()
        .map(|b| (b.identity_id.clone(), b.pose.clone()))
        .collect();
    if pending.is_empty() {
        manifest.sort_by_keys(&keys);
        if !manifest.is_empty() || !manifest_path.exists() {
            manifest.write_compact(&manifest_path)?;
        }
        return Ok(RunSummary {
            manifest,
            manifest_path,
            model_id: None,
            requests: 0,
            generated: 0,
            failed: 0,
            skipped,
            repaired,
        });
    }

    let model_id = wait_for_backend(client, &options.health_retry).await?;
    tracing::info!(%model_id, jobs = pending.len(), skipped, "starting generation");

    let mut appender = ManifestAppender::open(&manifest_path)?;
    for record in fresh {
        appender.append(&record)?;
        manifest.upsert(record);
    }

    let mut requests = 0usize;
    let mut generated = 0;
    let mut failed = 0;
    let total = pending.len();
    let mut results = stream::iter(pending)
        .map(|p| {
            let c = controls.get(p.job.pose.as_str()).cloned().unwrap_or_else(|| no_controls.clone());
            run_job(client, p, c, &options.retry, out_dir)
        })
        .buffer_unordered(options.concurrency);
    while let Some(outcome) = results.next().await {
        let (record, calls) = outcome?;
        requests += calls as usize;
        match record.status {
            Status::Generated => generated += 1,
            _ => failed += 1,
        }
        appender.append(&record)?;
        manifest.apply(record)?;
        let done = generated + failed;
        if done % 100 == 0 || done == total {
            tracing::info!(done, total, failed, "generation progress");
        }
    }
    drop(results);

    manifest.sort_by_keys(&keys);
    manifest.write_compact(&manifest_path)?;
    Ok(RunSummary {
        manifest,
        manifest_path,
        model_id: Some(model_id),
        requests,
        generated,
        failed,
        skipped,
        repaired,
    })
}
