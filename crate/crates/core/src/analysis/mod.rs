//! Verification analysis over embedded datasets: mated and non-mated pair
//! protocols, normalized similarity scores, score densities, distribution
//! comparison, race heatmaps and per-identity consistency.

mod consistency;
mod dataset;
mod heatmap;
mod pairs;
mod report;
mod similarity;
mod stats;
mod svg;

use std::path::PathBuf;

pub use consistency::{identity_consistency_report, ConsistencyReport, IdentityConsistency, DEFAULT_CONSISTENCY_THRESHOLD};
pub use dataset::{images_from_manifest, load_image_listing, ImageMeta};
pub use heatmap::{race_heatmap, RaceHeatmap};
pub use pairs::{build_pairs, MatedPair, NonMatedPair, PairPolicy, PairSet};
pub use report::{analyze_dataset, emit_report, DatasetAnalysis, ReportBundle, REPORT_VERSION};
pub use similarity::{cosine_similarity, similarity_score};
pub use stats::{
    auto_grid, compare_distributions, kde, kde_cdf, ks_statistic, score_pairs, silverman_bandwidth, summarize,
    trapezoid, Comparison, Grid, KdeCurve, PairScores, ScoreDistribution, Summary, ALL_GROUP, BANDWIDTH_FLOOR,
};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("dimension mismatch: {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },
    #[error("zero or non-finite vector")]
    ZeroVector,
    #[error("no embedding for image {0}")]
    MissingEmbedding(String),
    #[error("need at least {needed} scores, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("empty score list")]
    EmptyInput,
    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("no heatmap cell has any pair")]
    EmptyHeatmap,
    #[error("listing {path} line {line}: {message}")]
    Listing { path: PathBuf, line: usize, message: String },
    #[error("I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
