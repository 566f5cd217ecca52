use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::pairs::{sample_distinct_identity_pairs, PairPolicy};
use super::{similarity_score, AnalysisError, ImageMeta};
use crate::demographics::Race;
use crate::embedding::EmbeddingMatrix;
use crate::seed::{self, derive_seed};

/// Mean non-mated score for every pair of races, indexed in [`Race::ALL`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaceHeatmap {
    pub races: Vec<Race>,
    pub mean: Vec<Vec<Option<f64>>>,
    pub counts: Vec<Vec<usize>>,
    pub empty_cells: Vec<(Race, Race)>,
}

impl RaceHeatmap {
    pub fn get(&self, a: Race, b: Race) -> Option<f64> {
        self.mean[a.index()][b.index()]
    }
}

/// Diagonal cells use intra-race non-mated pairs; off-diagonal cells sample
/// pairs with one image from each race. Both are capped by the policy and
/// restricted to frontal images when the policy says so. Each unordered cell
/// is computed once and mirrored.
pub fn race_heatmap(
    images: &[ImageMeta],
    matrix: &EmbeddingMatrix,
    policy: &PairPolicy,
) -> Result<RaceHeatmap, AnalysisError> {
    let groups: Vec<Vec<&ImageMeta>> = Race::ALL
        .iter()
        .map(|&race| {
            images
                .iter()
                .filter(|i| i.race == race && (!policy.frontal_only || i.pose == policy.frontal_pose))
                .collect()
        })
        .collect();

    let k = Race::ALL.len();
    let mut mean = vec![vec![None; k]; k];
    let mut counts = vec![vec![0usize; k]; k];
    let mut empty_cells = Vec::new();
    for a in 0..k {
        for b in a..k {
            let mut rng = seed::rng(derive_seed(
                policy.seed,
                &format!("heatmap/{}/{}", Race::ALL[a], Race::ALL[b]),
            ));
            let pairs: Vec<(&ImageMeta, &ImageMeta)> = if a == b {
                sample_distinct_identity_pairs(&groups[a], policy.cap_per_race, &mut rng)
                    .into_iter()
                    .map(|(i, j)| (groups[a][i], groups[a][j]))
                    .collect()
            } else {
                let (ga, gb) = (&groups[a], &groups[b]);
                let total = ga.len() * gb.len();
                let chosen: Vec<usize> = if total <= policy.cap_per_race {
                    (0..total).collect()
                } else {
                    let mut v = index::sample(&mut rng, total, policy.cap_per_race).into_vec();
                    v.sort_unstable();
                    v
                };
                chosen
                    .into_iter()
                    .map(|c| (ga[c / gb.len()], gb[c % gb.len()]))
                    .filter(|(x, y)| x.identity_id != y.identity_id)
                    .collect()
            };
            if pairs.is_empty() {
                empty_cells.push((Race::ALL[a], Race::ALL[b]));
                if a != b {
                    empty_cells.push((Race::ALL[b], Race::ALL[a]));
                }
                continue;
            }
            let mut sum = 0.0;
            for (x, y) in &pairs {
                let va = matrix
                    .get(&x.image_id)
                    .ok_or_else(|| AnalysisError::MissingEmbedding(x.image_id.clone()))?;
                let vb = matrix
                    .get(&y.image_id)
                    .ok_or_else(|| AnalysisError::MissingEmbedding(y.image_id.clone()))?;
                sum += similarity_score(va, vb)?;
            }
            let m = sum / pairs.len() as f64;
            mean[a][b] = Some(m);
            mean[b][a] = Some(m);
            counts[a][b] = pairs.len();
            counts[b][a] = pairs.len();
        }
    }
    if empty_cells.len() == k * k {
        return Err(AnalysisError::EmptyHeatmap);
    }
    empty_cells.sort();
    Ok(RaceHeatmap {
        races: Race::ALL.to_vec(),
        mean,
        counts,
        empty_cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(identity: &str, race: Race, pose: &str) -> ImageMeta {
        ImageMeta {
            image_id: format!("{identity}_{pose}"),
            identity_id: identity.into(),
            race,
            pose: pose.into(),
        }
    }

    fn unit(dim: usize, axis: usize) -> Vec<f32> {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        v
    }

    #[test]
    fn single_race_leaves_other_cells_empty() {
        let images: Vec<ImageMeta> = (0..3).map(|i| image(&format!("a{i}"), Race::Asian, "front")).collect();
        let mut m = EmbeddingMatrix::new(4, "t");
        for (i, img) in images.iter().enumerate() {
            m.push(img.image_id.clone(), &unit(4, i)).unwrap();
        }
        let h = race_heatmap(&images, &m, &PairPolicy::default()).unwrap();
        assert_eq!(h.get(Race::Asian, Race::Asian), Some(0.5));
        assert_eq!(h.counts[Race::Asian.index()][Race::Asian.index()], 3);
        assert_eq!(h.empty_cells.len(), 15);
        assert!(h.get(Race::Asian, Race::Indian).is_none());
    }

    #[test]
    fn cross_race_cells_are_symmetric() {
        let images = vec![
            image("a0", Race::African, "front"),
            image("a1", Race::African, "front"),
            image("i0", Race::Indian, "front"),
            image("i0", Race::Indian, "left"),
        ];
        let mut m = EmbeddingMatrix::new(2, "t");
        m.push("a0_front", &[1.0, 0.0]).unwrap();
        m.push("a1_front", &[1.0, 1.0]).unwrap();
        m.push("i0_front", &[0.0, 1.0]).unwrap();
        m.push("i0_left", &[-1.0, 0.0]).unwrap();
        let h = race_heatmap(&images, &m, &PairPolicy::default()).unwrap();
        let ai = h.get(Race::African, Race::Indian).unwrap();
        assert_eq!(ai, h.get(Race::Indian, Race::African).unwrap());
        let expected = (0.5 + (1.0 + 0.5f64.sqrt()) / 2.0) / 2.0;
        assert!((ai - expected).abs() < 1e-6);
        // single frontal Indian image: no intra-race pair
        assert!(h.empty_cells.contains(&(Race::Indian, Race::Indian)));
    }

    #[test]
    fn all_empty_is_an_error() {
        let images = vec![image("a0", Race::African, "left")];
        let mut m = EmbeddingMatrix::new(2, "t");
        m.push("a0_left", &[1.0, 0.0]).unwrap();
        assert!(matches!(
            race_heatmap(&images, &m, &PairPolicy::default()),
            Err(AnalysisError::EmptyHeatmap)
        ));
    }

    #[test]
    fn missing_embedding_is_named() {
        let images = vec![image("a0", Race::African, "front"), image("a1", Race::African, "front")];
        let mut m = EmbeddingMatrix::new(2, "t");
        m.push("a0_front", &[1.0, 0.0]).unwrap();
        match race_heatmap(&images, &m, &PairPolicy::default()) {
            Err(AnalysisError::MissingEmbedding(id)) => assert_eq!(id, "a1_front"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
