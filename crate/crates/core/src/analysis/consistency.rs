use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{similarity_score, summarize, AnalysisError, ImageMeta, Summary};
use crate::demographics::Race;
use crate::embedding::EmbeddingMatrix;

pub const DEFAULT_CONSISTENCY_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityConsistency {
    pub identity_id: String,
    pub race: Race,
    pub images: usize,
    pub mean_mated: f64,
    pub min_mated: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub threshold: f64,
    pub identities: Vec<IdentityConsistency>,
    pub flagged: usize,
    pub flag_rate: f64,
    /// Every mated score pooled across identities.
    pub aggregate: Option<Summary>,
    pub warnings: Vec<String>,
}

/// Mean and minimum mated score per identity. Identities whose minimum falls
/// below `threshold` are flagged; identities with fewer than two images are
/// excluded with a warning.
pub fn identity_consistency_report(
    images: &[ImageMeta],
    matrix: &EmbeddingMatrix,
    threshold: f64,
) -> Result<ConsistencyReport, AnalysisError> {
    let mut by_identity: BTreeMap<&str, Vec<&ImageMeta>> = BTreeMap::new();
    for img in images {
        by_identity.entry(img.identity_id.as_str()).or_default().push(img);
    }
    let mut identities = Vec::new();
    let mut warnings = Vec::new();
    let mut pooled = Vec::new();
    for (identity, imgs) in by_identity {
        if imgs.len() < 2 {
            warnings.push(format!("identity {identity} has {} image(s); excluded", imgs.len()));
            continue;
        }
        let vectors = imgs
            .iter()
            .map(|i| {
                matrix
                    .get(&i.image_id)
                    .ok_or_else(|| AnalysisError::MissingEmbedding(i.image_id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut scores = Vec::new();
        for a in 0..vectors.len() {
            for b in a + 1..vectors.len() {
                scores.push(similarity_score(vectors[a], vectors[b])?);
            }
        }
        let mean_mated = scores.iter().sum::<f64>() / scores.len() as f64;
        let min_mated = scores.iter().copied().fold(f64::INFINITY, f64::min);
        pooled.extend_from_slice(&scores);
        identities.push(IdentityConsistency {
            identity_id: identity.to_string(),
            race: imgs[0].race,
            images: imgs.len(),
            mean_mated,
            min_mated,
            flagged: min_mated < threshold,
        });
    }
    let flagged = identities.iter().filter(|i| i.flagged).count();
    let flag_rate = if identities.is_empty() {
        0.0
    } else {
        flagged as f64 / identities.len() as f64
    };
    Ok(ConsistencyReport {
        threshold,
        identities,
        flagged,
        flag_rate,
        aggregate: summarize(&pooled),
        warnings,
    })
}
