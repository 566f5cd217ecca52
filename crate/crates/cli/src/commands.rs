use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;
use sig_backend::conformance::run_conformance;
use sig_backend::{
    embed_via_service, load_pose_assets, run_generation, serve, BackendClient, MockConfig, RunSummary, MANIFEST_FILE,
};
use sig_core::analysis::{
    analyze_dataset, emit_report, images_from_manifest, load_image_listing, DatasetAnalysis, ReportBundle,
};
use sig_core::embedding::{oracle_embed, EmbeddingError};
use sig_core::manifest::{verify_manifest, VerifyStatus};
use sig_core::plan::{read_plan, write_plan};
use sig_core::{
    build_bundles, count_triplets, plan_dataset, EmbeddingMatrix, Gender, IdentitySpec, Manifest, NamePool, Race,
};

use crate::config::{Config, EmbeddingSource};
use crate::error::CliError;

pub const PLAN_FILE: &str = "plan.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.emb1";
pub const REPORT_DIR: &str = "report";
pub const VERIFY_FILE: &str = "verify.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn require(path: PathBuf, hint: &str) -> Result<PathBuf, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::MissingInput {
            path,
            hint: hint.into(),
        })
    }
}

pub fn load_pool(config: &Config) -> Result<NamePool, CliError> {
    match &config.pool {
        Some(path) => Ok(NamePool::load(path)?),
        None => Ok(sig_core::sample_pool()),
    }
}

pub fn cmd_plan(config: &Config) -> Result<PathBuf, CliError> {
    config.validate()?;
    let pool = load_pool(config)?;
    let plan = plan_dataset(&config.dataset, &pool)?;
    // Render every prompt once so template problems surface here.
    build_bundles(&config.dataset, &plan, &config.template()?)?;
    std::fs::create_dir_all(&config.out_dir).map_err(io_err(&config.out_dir))?;
    let path = config.out_dir.join(PLAN_FILE);
    write_plan(&plan, &path)?;
    tracing::info!(
        identities = plan.len(),
        images = plan.len() * config.dataset.poses.len(),
        path = %path.display(),
        "plan written"
    );
    Ok(path)
}

fn load_plan(config: &Config) -> Result<Vec<IdentitySpec>, CliError> {
    let path = require(config.out_dir.join(PLAN_FILE), "run `sig plan` first")?;
    Ok(read_plan(path)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GenerateOutcome {
    DryRun { jobs: usize, pending: usize },
    Ran { generated: usize, failed: usize, skipped: usize, requests: usize },
}

pub async fn cmd_generate(config: &Config, backend_flag: Option<&str>, dry_run: bool) -> Result<GenerateOutcome, CliError> {
    config.validate()?;
    let plan = load_plan(config)?;
    let bundles = build_bundles(&config.dataset, &plan, &config.template()?)?;

    if dry_run {
        let manifest = Manifest::load_or_default(config.out_dir.join(MANIFEST_FILE))?;
        let done = bundles
            .iter()
            .filter(|b| {
                manifest.get(&b.identity_id, &b.pose).is_some_and(|r| {
                    sig_core::manifest::verify_record(r, &config.out_dir) == VerifyStatus::Ok
                })
            })
            .count();
        let pending = bundles.len() - done;
        eprintln!(
            "{}",
            json!({"dry_run": true, "jobs": bundles.len(), "pending": pending, "already_generated": done})
        );
        return Ok(GenerateOutcome::DryRun {
            jobs: bundles.len(),
            pending,
        });
    }

    let poses = match &config.pose_assets_dir {
        Some(dir) => load_pose_assets(dir, &config.dataset.poses)?,
        None => BTreeMap::new(),
    };
    let client = BackendClient::new(&config.backend_url(backend_flag))?;
    let RunSummary {
        generated,
        failed,
        skipped,
        requests,
        repaired,
        manifest_path,
        ..
    } = run_generation(&plan, &bundles, &poses, &client, &config.run_options(), &config.out_dir).await?;
    tracing::info!(generated, failed, skipped, repaired, requests, manifest = %manifest_path.display(), "generation finished");
    if failed > 0 {
        tracing::warn!(failed, "some images failed; rerun `sig generate` to retry them");
    }
    Ok(GenerateOutcome::Ran {
        generated,
        failed,
        skipped,
        requests,
    })
}

fn load_manifest(config: &Config) -> Result<Manifest, CliError> {
    let path = require(config.out_dir.join(MANIFEST_FILE), "run `sig generate` first")?;
    Ok(Manifest::load(path)?)
}

pub fn cmd_verify(config: &Config) -> Result<(), CliError> {
    let manifest = load_manifest(config)?;
    let report = verify_manifest(&manifest, &config.out_dir);
    let count = |s| report.count(s);
    let (ok, missing, mismatch, not_generated) = (
        count(VerifyStatus::Ok),
        count(VerifyStatus::Missing),
        count(VerifyStatus::ChecksumMismatch),
        count(VerifyStatus::NotGenerated),
    );
    let problems: Vec<_> = report
        .entries
        .iter()
        .filter(|e| e.status != VerifyStatus::Ok)
        .map(|e| json!({"image_id": e.image_id, "status": e.status}))
        .collect();
    let path = config.out_dir.join(VERIFY_FILE);
    let body = json!({
        "records": report.entries.len(),
        "ok": ok,
        "missing": missing,
        "checksum_mismatch": mismatch,
        "not_generated": not_generated,
        "problems": problems,
    });
    std::fs::write(&path, serde_json::to_string_pretty(&body).expect("json")).map_err(io_err(&path))?;
    tracing::info!(ok, missing, checksum_mismatch = mismatch, not_generated, "manifest verified");
    if missing + mismatch > 0 {
        return Err(CliError::Verification(format!(
            "{missing} missing, {mismatch} checksum mismatch; see {}",
            path.display()
        )));
    }
    Ok(())
}

fn generated_images(manifest: &Manifest, out_dir: &Path) -> Vec<(String, PathBuf)> {
    manifest
        .generated()
        .map(|r| (r.image_id(), out_dir.join(&r.image_path)))
        .collect()
}

pub async fn cmd_embed(config: &Config, backend_flag: Option<&str>) -> Result<PathBuf, CliError> {
    config.validate()?;
    let manifest = load_manifest(config)?;
    let images = generated_images(&manifest, &config.out_dir);
    let emb = &config.embedding;
    let matrix = match emb.source {
        EmbeddingSource::Oracle => oracle_embed(images.iter().map(|(i, p)| (i.as_str(), p.as_path())), &emb.oracle)?,
        EmbeddingSource::Service => {
            let url = emb.service_url.clone().unwrap_or_else(|| config.backend_url(backend_flag));
            let client = BackendClient::new(&url)?;
            embed_via_service(&images, &client, emb.concurrency, &config.retry.policy()).await?
        }
        EmbeddingSource::File => {
            let path = emb.path.as_ref().expect("validated");
            let source = EmbeddingMatrix::read(require(path.clone(), "embedding.path must name an EMB1 file")?)?;
            let mut subset = EmbeddingMatrix::new(source.dim(), source.model_id());
            for (image_id, _) in &images {
                let row = source.get(image_id).ok_or_else(|| {
                    EmbeddingError::IndexMismatch(format!("{image_id} is not in {}", path.display()))
                })?;
                subset.push(image_id.clone(), row)?;
            }
            subset
        }
    };
    let path = config.out_dir.join(EMBEDDINGS_FILE);
    matrix.write(&path)?;
    tracing::info!(rows = matrix.len(), dim = matrix.dim(), model_id = matrix.model_id(), path = %path.display(), "embeddings written");
    Ok(path)
}

pub fn cmd_analyze(config: &Config) -> Result<ReportBundle, CliError> {
    config.validate()?;
    let emb_path = require(config.out_dir.join(EMBEDDINGS_FILE), "run `sig embed` first")?;
    let manifest = load_manifest(config)?;
    let a = &config.analysis;
    let mut datasets: Vec<DatasetAnalysis> = Vec::new();
    let matrix = EmbeddingMatrix::read(&emb_path)?;
    let images = images_from_manifest(&manifest);
    datasets.push(analyze_dataset(&a.label, &images, &matrix, &a.pairs, a.consistency_threshold)?);
    for c in &a.compare {
        let listing = load_image_listing(&require(c.listing.clone(), "listing for a compared dataset")?)?;
        let m = EmbeddingMatrix::read(require(c.embeddings.clone(), "embeddings for a compared dataset")?)?;
        let policy = c.pairs.as_ref().unwrap_or(&a.pairs);
        datasets.push(analyze_dataset(&c.label, &listing, &m, policy, a.consistency_threshold)?);
    }
    for d in &datasets {
        for w in &d.warnings {
            tracing::warn!(dataset = %d.label, "{w}");
        }
    }
    let bundle = emit_report(&datasets, &a.pairs, a.bandwidth, &config.out_dir.join(REPORT_DIR))?;
    tracing::info!(report = %bundle.report_path.display(), csv = bundle.density_csvs.len(), svg = bundle.svgs.len(), "report written");
    Ok(bundle)
}

/// Per-cell name counts and triplet capacity, as a plain-text table.
pub fn pool_stats_table(pool: &NamePool) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<10} {:<7} {:>6} {:>14}", "race", "gender", "names", "triplets");
    let mut total = 0;
    for race in Race::ALL {
        for gender in Gender::ALL {
            let n = pool.cell_count(race, gender);
            total += n;
            let _ = writeln!(
                out,
                "{:<10} {:<7} {:>6} {:>14}",
                race.as_str(),
                gender.to_string(),
                n,
                count_triplets(n as u64)
            );
        }
    }
    let _ = writeln!(out, "{:<10} {:<7} {:>6} {:>14}", "total", "", total, count_triplets(total as u64));
    out
}

pub fn cmd_pool_stats(config: &Config) -> Result<String, CliError> {
    Ok(pool_stats_table(&load_pool(config)?))
}

pub async fn cmd_mock_serve(config: MockConfig) -> Result<(), CliError> {
    let server = serve(config).await.map_err(|source| CliError::Io {
        path: PathBuf::from("<listener>"),
        source,
    })?;
    eprintln!("{}", json!({"listening": server.url()}));
    tokio::signal::ctrl_c().await.map_err(io_err(Path::new("<signal>")))?;
    tracing::info!("shutting down");
    server.shutdown().await.map_err(io_err(Path::new("<listener>")))
}

pub async fn cmd_conformance(url: &str, with_embed: bool) -> Result<(), CliError> {
    let checks = run_conformance(url, with_embed).await?;
    for c in &checks {
        eprintln!("{}", serde_json::to_string(c).expect("json"));
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(CliError::Conformance(format!("{failed} of {} checks failed", checks.len())));
    }
    Ok(())
}
