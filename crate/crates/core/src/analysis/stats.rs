use std::collections::BTreeMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{similarity_score, AnalysisError, PairSet};
use crate::embedding::EmbeddingMatrix;

pub const ALL_GROUP: &str = "all";
pub const BANDWIDTH_FLOOR: f64 = 1e-3;

// Kernel support beyond this many bandwidths is dropped (weight < 1e-13).
const KERNEL_REACH: f64 = 8.0;
// Automatic grids extend this many bandwidths past the data.
const GRID_MARGIN: f64 = 6.0;
const GRID_STEPS_PER_BANDWIDTH: f64 = 4.0;
const GRID_MIN_POINTS: usize = 256;
const GRID_MAX_POINTS: usize = 200_001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub q05: f64,
    pub q95: f64,
    pub min: f64,
    pub max: f64,
    /// Mean raw cosine similarity, `2 * mean - 1`.
    pub mean_cosine: f64,
}

/// Sample statistics; `std` uses the `n - 1` denominator and quantiles
/// interpolate linearly between order statistics.
pub fn summarize(scores: &[f64]) -> Option<Summary> {
    if scores.is_empty() {
        return None;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    Some(Summary {
        n,
        mean,
        std: sample_std(&sorted, mean),
        median: quantile_sorted(&sorted, 0.5),
        q05: quantile_sorted(&sorted, 0.05),
        q95: quantile_sorted(&sorted, 0.95),
        min: sorted[0],
        max: sorted[n - 1],
        mean_cosine: 2.0 * mean - 1.0,
    })
}

fn sample_std(xs: &[f64], mean: f64) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule, `1.06 * sd * n^(-1/5)`, floored at [`BANDWIDTH_FLOOR`].
pub fn silverman_bandwidth(scores: &[f64]) -> f64 {
    let n = scores.len();
    if n < 2 {
        return BANDWIDTH_FLOOR;
    }
    let mean = scores.iter().sum::<f64>() / n as f64;
    let h = 1.06 * sample_std(scores, mean) * (n as f64).powf(-0.2);
    if h.is_finite() {
        h.max(BANDWIDTH_FLOOR)
    } else {
        BANDWIDTH_FLOOR
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Grid {
    pub fn points(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.lo];
        }
        let step = (self.hi - self.lo) / (self.n - 1) as f64;
        (0..self.n).map(|i| self.lo + step * i as f64).collect()
    }

    fn validate(&self) -> Result<(), AnalysisError> {
        if self.n < 2 || !(self.lo.is_finite() && self.hi.is_finite()) || self.hi <= self.lo {
            return Err(AnalysisError::InvalidGrid(format!(
                "lo={} hi={} n={}",
                self.lo, self.hi, self.n
            )));
        }
        Ok(())
    }
}

/// A grid covering every `(min, max, bandwidth)` span with a margin of six
/// bandwidths and a spacing of at most a quarter of the smallest bandwidth,
/// so the trapezoid rule integrates each curve to well within 1e-3.
pub fn auto_grid(spans: &[(f64, f64, f64)]) -> Grid {
    let lo = spans
        .iter()
        .map(|(min, _, h)| min - GRID_MARGIN * h)
        .fold(f64::INFINITY, f64::min);
    let hi = spans
        .iter()
        .map(|(_, max, h)| max + GRID_MARGIN * h)
        .fold(f64::NEG_INFINITY, f64::max);
    let h_min = spans.iter().map(|s| s.2).fold(f64::INFINITY, f64::min);
    if !(lo.is_finite() && hi.is_finite() && h_min.is_finite()) {
        return Grid { lo: 0.0, hi: 1.0, n: GRID_MIN_POINTS };
    }
    let steps = ((hi - lo) / (h_min / GRID_STEPS_PER_BANDWIDTH)).ceil() as usize;
    Grid {
        lo,
        hi,
        n: (steps + 1).clamp(GRID_MIN_POINTS, GRID_MAX_POINTS),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeCurve {
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

impl KdeCurve {
    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }

    /// Grid point with the highest density.
    pub fn mode(&self) -> f64 {
        let (i, _) = self
            .density
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
        self.grid[i]
    }
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| (xs[1] - xs[0]) * (ys[0] + ys[1]) / 2.0)
        .sum()
}

/// Running trapezoid integral of the curve, one value per grid point.
pub fn kde_cdf(curve: &KdeCurve) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(curve.grid.len());
    out.push(0.0);
    for (xs, ys) in curve.grid.windows(2).zip(curve.density.windows(2)) {
        acc += (xs[1] - xs[0]) * (ys[0] + ys[1]) / 2.0;
        out.push(acc);
    }
    out
}

/// Gaussian-kernel density estimate on a uniform grid.
///
/// Without a bandwidth, Silverman's rule is used. Without a grid, one is
/// derived with [`auto_grid`].
pub fn kde(scores: &[f64], bandwidth: Option<f64>, grid: Option<Grid>) -> Result<KdeCurve, AnalysisError> {
    if scores.len() < 2 {
        return Err(AnalysisError::InsufficientData {
            needed: 2,
            got: scores.len(),
        });
    }
    let h = match bandwidth {
        Some(h) if h.is_finite() && h > 0.0 => h,
        Some(h) => return Err(AnalysisError::InvalidBandwidth(h)),
        None => silverman_bandwidth(scores),
    };
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let grid = match grid {
        Some(g) => {
            g.validate()?;
            g
        }
        None => auto_grid(&[(sorted[0], sorted[sorted.len() - 1], h)]),
    };
    let points = grid.points();
    let norm = 1.0 / (sorted.len() as f64 * h * (2.0 * PI).sqrt());
    let density = points
        .par_iter()
        .map(|&x| {
            let start = sorted.partition_point(|&s| s < x - KERNEL_REACH * h);
            let end = sorted.partition_point(|&s| s <= x + KERNEL_REACH * h);
            let sum: f64 = sorted[start..end]
                .iter()
                .map(|&s| {
                    let z = (x - s) / h;
                    (-0.5 * z * z).exp()
                })
                .sum();
            sum * norm
        })
        .collect();
    Ok(KdeCurve {
        bandwidth: h,
        grid: points,
        density,
    })
}

/// Two-sample Kolmogorov–Smirnov statistic: the largest gap between the two
/// empirical CDFs, evaluated at every observed value.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64, AnalysisError> {
    if a.is_empty() || b.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < na && j < nb {
        let x = if a[i].total_cmp(&b[j]).is_le() { a[i] } else { b[j] };
        while i < na && a[i].total_cmp(&x).is_le() {
            i += 1;
        }
        while j < nb && b[j].total_cmp(&x).is_le() {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub ks_stat: f64,
    pub mean_shift: f64,
    /// `∫ min(kde_a, kde_b)` on a shared grid; absent when either side has
    /// fewer than two scores.
    pub overlap_coefficient: Option<f64>,
}

pub fn compare_distributions(a: &[f64], b: &[f64], bandwidth: Option<f64>) -> Result<Comparison, AnalysisError> {
    let ks_stat = ks_statistic(a, b)?;
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let mean_shift = mean(a) - mean(b);
    let overlap_coefficient = if a.len() >= 2 && b.len() >= 2 {
        let ha = bandwidth.unwrap_or_else(|| silverman_bandwidth(a));
        let hb = bandwidth.unwrap_or_else(|| silverman_bandwidth(b));
        let span = |xs: &[f64], h| {
            let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi, h)
        };
        let grid = auto_grid(&[span(a, ha), span(b, hb)]);
        let ka = kde(a, Some(ha), Some(grid))?;
        let kb = kde(b, Some(hb), Some(grid))?;
        let mins: Vec<f64> = ka.density.iter().zip(&kb.density).map(|(x, y)| x.min(*y)).collect();
        Some(trapezoid(&ka.grid, &mins))
    } else {
        None
    };
    Ok(Comparison {
        ks_stat,
        mean_shift,
        overlap_coefficient,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    pub group: String,
    pub scores: Vec<f64>,
    pub summary: Option<Summary>,
}

impl ScoreDistribution {
    pub fn new(group: impl Into<String>, scores: Vec<f64>) -> Self {
        let summary = summarize(&scores);
        Self {
            group: group.into(),
            scores,
            summary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScores {
    pub mated: BTreeMap<String, ScoreDistribution>,
    pub nonmated: BTreeMap<String, ScoreDistribution>,
}

fn lookup<'m>(matrix: &'m EmbeddingMatrix, id: &str) -> Result<&'m [f32], AnalysisError> {
    matrix.get(id).ok_or_else(|| AnalysisError::MissingEmbedding(id.to_string()))
}

/// Scores every pair and groups the results by race plus an `all` group.
/// Cross-race non-mated pairs only contribute to `all`.
pub fn score_pairs(pairs: &PairSet, matrix: &EmbeddingMatrix) -> Result<PairScores, AnalysisError> {
    let mated: Vec<(String, f64)> = pairs
        .mated
        .par_iter()
        .map(|p| {
            let s = similarity_score(lookup(matrix, &p.image_a)?, lookup(matrix, &p.image_b)?)?;
            Ok((p.race.to_string(), s))
        })
        .collect::<Result<_, AnalysisError>>()?;
    let nonmated: Vec<(Option<String>, f64)> = pairs
        .nonmated
        .par_iter()
        .map(|p| {
            let s = similarity_score(lookup(matrix, &p.image_a)?, lookup(matrix, &p.image_b)?)?;
            Ok((p.race.map(|r| r.to_string()), s))
        })
        .collect::<Result<_, AnalysisError>>()?;

    let group = |rows: Vec<(Option<String>, f64)>| {
        let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut all = Vec::with_capacity(rows.len());
        for (g, s) in rows {
            if let Some(g) = g {
                groups.entry(g).or_default().push(s);
            }
            all.push(s);
        }
        groups.insert(ALL_GROUP.into(), all);
        groups
            .into_iter()
            .map(|(g, s)| (g.clone(), ScoreDistribution::new(g, s)))
            .collect()
    };
    Ok(PairScores {
        mated: group(mated.into_iter().map(|(g, s)| (Some(g), s)).collect()),
        nonmated: group(nonmated),
    })
}
