use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::demographics::Race;
use crate::manifest::{self, Manifest, Status};

/// The per-image facts the analysis needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub image_id: String,
    pub identity_id: String,
    pub race: Race,
    pub pose: String,
}

pub fn images_from_manifest(manifest: &Manifest) -> Vec<ImageMeta> {
    manifest
        .generated()
        .map(|r| ImageMeta {
            image_id: r.image_id(),
            identity_id: r.identity_id.clone(),
            race: r.demographics.race,
            pose: r.pose.clone(),
        })
        .collect()
}

#[derive(Deserialize)]
struct ListingLine {
    identity_id: String,
    pose: String,
    demographics: ListingDemographics,
    #[serde(default)]
    status: Option<Status>,
}

#[derive(Deserialize)]
struct ListingDemographics {
    race: Race,
}

/// Reads a manifest-shaped JSON Lines file, which may come from another
/// dataset. Only `identity_id`, `pose`, `demographics.race` and the optional
/// `status` are read; records with a status other than `generated` are
/// skipped. Later lines for the same image replace earlier ones.
pub fn load_image_listing(path: &Path) -> Result<Vec<ImageMeta>, AnalysisError> {
    let text = fs::read_to_string(path).map_err(|source| AnalysisError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out: Vec<ImageMeta> = Vec::new();
    let mut positions = std::collections::HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ListingLine = serde_json::from_str(line).map_err(|e| AnalysisError::Listing {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let image_id = manifest::image_id(&parsed.identity_id, &parsed.pose);
        let keep = matches!(parsed.status, None | Some(Status::Generated));
        match (positions.get(&image_id).copied(), keep) {
            (Some(pos), true) => {
                out[pos] = ImageMeta {
                    image_id,
                    identity_id: parsed.identity_id,
                    race: parsed.demographics.race,
                    pose: parsed.pose,
                }
            }
            (Some(pos), false) => {
                out.remove(pos);
                positions.remove(&image_id);
                for p in positions.values_mut() {
                    if *p > pos {
                        *p -= 1;
                    }
                }
            }
            (None, true) => {
                positions.insert(image_id.clone(), out.len());
                out.push(ImageMeta {
                    image_id,
                    identity_id: parsed.identity_id,
                    race: parsed.demographics.race,
                    pose: parsed.pose,
                });
            }
            (None, false) => {}
        }
    }
    Ok(out)
}
