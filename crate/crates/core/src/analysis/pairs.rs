use std::collections::{BTreeMap, HashSet};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ImageMeta;
use crate::demographics::Race;
use crate::seed::{self, derive_seed, SigRng};

pub const DEFAULT_NONMATED_CAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairPolicy {
    /// Restrict non-mated comparisons to `frontal_pose` images.
    pub frontal_only: bool,
    /// Sample non-mated pairs within each race; otherwise pool all races.
    pub intra_race: bool,
    /// Upper bound on sampled non-mated pairs per race (or in total when pooled).
    pub cap_per_race: usize,
    pub seed: u64,
    pub frontal_pose: String,
}

impl Default for PairPolicy {
    fn default() -> Self {
        Self {
            frontal_only: true,
            intra_race: true,
            cap_per_race: DEFAULT_NONMATED_CAP,
            seed: 0,
            frontal_pose: "front".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatedPair {
    pub image_a: String,
    pub image_b: String,
    pub identity_id: String,
    pub race: Race,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NonMatedPair {
    pub image_a: String,
    pub image_b: String,
    /// Shared race of both images; `None` for a cross-race pair.
    pub race: Option<Race>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSet {
    pub mated: Vec<MatedPair>,
    pub nonmated: Vec<NonMatedPair>,
    pub policy: PairPolicy,
    pub warnings: Vec<String>,
}

/// Mated pairs are every 2-subset of each identity's images. Non-mated pairs
/// are drawn without replacement from pairs of images with different
/// identities, per race unless the policy pools races, up to the cap.
pub fn build_pairs(images: &[ImageMeta], policy: &PairPolicy) -> PairSet {
    let mut warnings = Vec::new();

    let mut by_identity: BTreeMap<&str, Vec<&ImageMeta>> = BTreeMap::new();
    for img in images {
        by_identity.entry(img.identity_id.as_str()).or_default().push(img);
    }
    let mut mated = Vec::new();
    for (identity, imgs) in &by_identity {
        for i in 0..imgs.len() {
            for j in i + 1..imgs.len() {
                mated.push(MatedPair {
                    image_a: imgs[i].image_id.clone(),
                    image_b: imgs[j].image_id.clone(),
                    identity_id: identity.to_string(),
                    race: imgs[i].race,
                });
            }
        }
    }

    let eligible: Vec<&ImageMeta> = images
        .iter()
        .filter(|img| !policy.frontal_only || img.pose == policy.frontal_pose)
        .collect();
    let mut nonmated = Vec::new();
    if policy.intra_race {
        for race in Race::ALL {
            let group: Vec<&ImageMeta> = eligible.iter().copied().filter(|i| i.race == race).collect();
            if group.is_empty() {
                continue;
            }
            let mut rng = seed::rng(derive_seed(policy.seed, &format!("nonmated/{race}")));
            let picked = sample_distinct_identity_pairs(&group, policy.cap_per_race, &mut rng);
            if picked.is_empty() {
                warnings.push(format!("race {race}: no non-mated pairs available"));
            }
            nonmated.extend(picked.into_iter().map(|(a, b)| NonMatedPair {
                image_a: group[a].image_id.clone(),
                image_b: group[b].image_id.clone(),
                race: Some(race),
            }));
        }
    } else {
        let mut rng = seed::rng(derive_seed(policy.seed, "nonmated/pooled"));
        let picked = sample_distinct_identity_pairs(&eligible, policy.cap_per_race, &mut rng);
        if picked.is_empty() {
            warnings.push("no non-mated pairs available".into());
        }
        nonmated.extend(picked.into_iter().map(|(a, b)| NonMatedPair {
            image_a: eligible[a].image_id.clone(),
            image_b: eligible[b].image_id.clone(),
            race: (eligible[a].race == eligible[b].race).then_some(eligible[a].race),
        }));
    }

    PairSet {
        mated,
        nonmated,
        policy: policy.clone(),
        warnings,
    }
}

/// Up to `cap` distinct index pairs `(i, j)`, `i < j`, whose images belong to
/// different identities, sorted.
pub(crate) fn sample_distinct_identity_pairs(items: &[&ImageMeta], cap: usize, rng: &mut SigRng) -> Vec<(usize, usize)> {
    let n = items.len();
    let mut per_identity: BTreeMap<&str, u64> = BTreeMap::new();
    for item in items {
        *per_identity.entry(item.identity_id.as_str()).or_default() += 1;
    }
    let all = n as u64 * n.saturating_sub(1) as u64 / 2;
    let same: u64 = per_identity.values().map(|k| k * k.saturating_sub(1) / 2).sum();
    let valid = all - same;
    if valid == 0 || cap == 0 {
        return Vec::new();
    }

    let enumerate = || {
        let mut v = Vec::with_capacity(valid as usize);
        for i in 0..n {
            for j in i + 1..n {
                if items[i].identity_id != items[j].identity_id {
                    v.push((i, j));
                }
            }
        }
        v
    };

    let cap = cap as u64;
    if valid <= cap {
        return enumerate();
    }
    let mut picked = if valid <= cap.saturating_mul(2) {
        let candidates = enumerate();
        index::sample(rng, candidates.len(), cap as usize)
            .into_iter()
            .map(|k| candidates[k])
            .collect::<Vec<_>>()
    } else {
        // Sparse: rejection sampling keeps memory at O(cap).
        let mut seen = HashSet::with_capacity(cap as usize);
        let mut out = Vec::with_capacity(cap as usize);
        while (out.len() as u64) < cap {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a == b || items[a].identity_id == items[b].identity_id {
                continue;
            }
            let pair = (a.min(b), a.max(b));
            if seen.insert(pair) {
                out.push(pair);
            }
        }
        out
    };
    picked.sort_unstable();
    picked
}
