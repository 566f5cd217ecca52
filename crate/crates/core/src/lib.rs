//! Planning, bookkeeping and evaluation for synthetic face-identity datasets.
//!
//! The crate is free of network and ML dependencies: it plans balanced
//! identities from a name pool, renders prompts, records generated images in
//! a manifest, reads and writes embedding matrices, and computes the
//! similarity-score analyses used to evaluate the resulting dataset.

pub mod analysis;
pub mod demographics;
pub mod embedding;
pub mod manifest;
pub mod name_pool;
pub mod plan;
pub mod png_meta;
pub mod seed;
pub mod template;

pub use demographics::{Gender, Race};
pub use embedding::{EmbeddingError, EmbeddingMatrix, OracleParams};
pub use manifest::{Manifest, ManifestRecord, Status};
pub use name_pool::{count_triplets, BlendPolicy, IdentityTriplet, NameEntry, NamePool, PoolError};
pub use plan::{
    build_bundles, build_prompt, plan_dataset, DatasetConfig, DemographicSpec, IdentitySpec, PlanError, PromptBundle,
};
pub use template::{parse_template, PromptTemplate, TemplateError};

/// Bundled sample pool: 26 names for each race × gender cell.
pub const SAMPLE_POOL_CSV: &str = include_str!("../data/sample_pool.csv");

pub fn sample_pool() -> NamePool {
    NamePool::parse(SAMPLE_POOL_CSV).expect("bundled sample pool is valid")
}
