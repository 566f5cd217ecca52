#![allow(dead_code)]

use std::collections::BTreeMap;
use std::time::Duration;

use sig_backend::{ControlMap, ControlType, PoseAsset, RetryPolicy, RunOptions};
use sig_core::plan::DEFAULT_TEMPLATE;
use sig_core::{build_bundles, plan_dataset, DatasetConfig, Gender, IdentitySpec, PromptBundle, PromptTemplate, Race};

pub fn small_plan(per_cell: u32, poses: &[&str]) -> (Vec<IdentitySpec>, Vec<PromptBundle>) {
    let config = DatasetConfig {
        races: vec![Race::Asian],
        genders: vec![Gender::Female],
        ages: vec![25],
        poses: poses.iter().map(|p| p.to_string()).collect(),
        identities_per_cell: per_cell,
        master_seed: 7,
        ..DatasetConfig::default()
    };
    let plan = plan_dataset(&config, &sig_core::sample_pool()).unwrap();
    let template = PromptTemplate::parse(DEFAULT_TEMPLATE).unwrap();
    let bundles = build_bundles(&config, &plan, &template).unwrap();
    (plan, bundles)
}

pub fn fast_options(concurrency: usize) -> RunOptions {
    let quick = RetryPolicy {
        max_attempts: 3,
        base_delay: Duration::from_millis(5),
        max_delay: Duration::from_millis(20),
        jitter: true,
    };
    RunOptions {
        concurrency,
        health_retry: quick.clone(),
        retry: quick,
        ..RunOptions::default()
    }
}

pub fn pose_assets(poses: &[&str]) -> BTreeMap<String, PoseAsset> {
    poses
        .iter()
        .map(|p| {
            let png = sig_core::png_meta::encode_rgb(8, 8, &[p.len() as u8; 8 * 8 * 3], &[]).unwrap();
            let asset = PoseAsset::new(*p, vec![ControlMap::new(ControlType::Openpose, png)]).unwrap();
            (p.to_string(), asset)
        })
        .collect()
}

/// An address nothing listens on.
pub async fn dead_url() -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    format!("http://{addr}")
}
