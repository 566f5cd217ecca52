use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use super::svg::{self, Series};
use super::{
    build_pairs, compare_distributions, identity_consistency_report, kde, race_heatmap, score_pairs,
    silverman_bandwidth, AnalysisError, ConsistencyReport, ImageMeta, KdeCurve, PairPolicy, PairScores, RaceHeatmap,
    ALL_GROUP,
};
use crate::demographics::Race;
use crate::embedding::EmbeddingMatrix;

pub const REPORT_VERSION: u32 = 1;

/// Everything computed for one embedded dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetAnalysis {
    pub label: String,
    pub model_id: String,
    pub image_count: usize,
    pub identity_count: usize,
    pub mated_pairs: usize,
    pub nonmated_pairs: usize,
    pub scores: PairScores,
    pub heatmap: Option<RaceHeatmap>,
    pub consistency: ConsistencyReport,
    pub warnings: Vec<String>,
}

pub fn analyze_dataset(
    label: &str,
    images: &[ImageMeta],
    matrix: &EmbeddingMatrix,
    policy: &PairPolicy,
    consistency_threshold: f64,
) -> Result<DatasetAnalysis, AnalysisError> {
    let pairs = build_pairs(images, policy);
    let scores = score_pairs(&pairs, matrix)?;
    let mut warnings = pairs.warnings.clone();
    let heatmap = match race_heatmap(images, matrix, policy) {
        Ok(h) => Some(h),
        Err(AnalysisError::EmptyHeatmap) => {
            warnings.push("race heatmap has no populated cell".into());
            None
        }
        Err(e) => return Err(e),
    };
    let consistency = identity_consistency_report(images, matrix, consistency_threshold)?;
    let identity_count = images.iter().map(|i| i.identity_id.as_str()).collect::<BTreeSet<_>>().len();
    Ok(DatasetAnalysis {
        label: label.to_string(),
        model_id: matrix.model_id().to_string(),
        image_count: images.len(),
        identity_count,
        mated_pairs: pairs.mated.len(),
        nonmated_pairs: pairs.nonmated.len(),
        scores,
        heatmap,
        consistency,
        warnings,
    })
}

#[derive(Debug, Clone)]
pub struct ReportBundle {
    pub report_path: PathBuf,
    pub density_csvs: Vec<PathBuf>,
    pub svgs: Vec<PathBuf>,
    pub report: Value,
}

fn safe_label(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.') { c } else { '_' })
        .collect()
}

fn write(path: &Path, contents: &[u8]) -> Result<(), AnalysisError> {
    fs::write(path, contents).map_err(|source| AnalysisError::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct CurveSet {
    labels: Vec<String>,
    curves: Vec<KdeCurve>,
}

/// KDE of each dataset's scores for `group`, all on one shared grid.
fn curves_for<'a, F>(datasets: &'a [DatasetAnalysis], pick: F, bandwidth: Option<f64>) -> Result<CurveSet, AnalysisError>
where
    F: Fn(&'a DatasetAnalysis) -> Option<&'a [f64]>,
{
    let chosen: Vec<(&str, &[f64])> = datasets
        .iter()
        .filter_map(|d| pick(d).filter(|s| s.len() >= 2).map(|s| (d.label.as_str(), s)))
        .collect();
    let spans: Vec<(f64, f64, f64)> = chosen
        .iter()
        .map(|(_, s)| {
            let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi, bandwidth.unwrap_or_else(|| silverman_bandwidth(s)))
        })
        .collect();
    let grid = super::auto_grid(&spans);
    let curves = chosen
        .iter()
        .zip(&spans)
        .map(|((_, s), span)| kde(s, Some(span.2), Some(grid)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CurveSet {
        labels: chosen.iter().map(|(l, _)| l.to_string()).collect(),
        curves,
    })
}

fn density_csv(set: &CurveSet) -> String {
    let mut out = String::from("grid");
    for l in &set.labels {
        out.push(',');
        out.push_str(&safe_label(l));
    }
    out.push('\n');
    let grid = &set.curves[0].grid;
    for (i, x) in grid.iter().enumerate() {
        out.push_str(&x.to_string());
        for c in &set.curves {
            out.push(',');
            out.push_str(&c.density[i].to_string());
        }
        out.push('\n');
    }
    out
}

/// Writes `report.json`, one density CSV and SVG per race for non-mated
/// scores (`density_<race>.*`), one for pooled mated scores
/// (`mated_density.*`) and a heatmap SVG per dataset.
///
/// Groups with fewer than two scores produce no curve and are listed under
/// `empty_groups` in the report.
pub fn emit_report(
    datasets: &[DatasetAnalysis],
    policy: &PairPolicy,
    bandwidth: Option<f64>,
    out_dir: &Path,
) -> Result<ReportBundle, AnalysisError> {
    fs::create_dir_all(out_dir).map_err(|source| AnalysisError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut density_csvs = Vec::new();
    let mut svgs = Vec::new();
    let mut curve_log = Vec::new();
    let mut empty_groups = Vec::new();

    for d in datasets {
        for group in Race::ALL.iter().map(|r| r.to_string()).chain([ALL_GROUP.to_string()]) {
            let n = d.scores.nonmated.get(&group).map_or(0, |s| s.scores.len());
            if n < 2 {
                empty_groups.push(json!({"dataset": d.label, "kind": "nonmated", "group": group, "n": n}));
            }
        }
        let n = d.scores.mated.get(ALL_GROUP).map_or(0, |s| s.scores.len());
        if n < 2 {
            empty_groups.push(json!({"dataset": d.label, "kind": "mated", "group": ALL_GROUP, "n": n}));
        }
    }

    let mut plots: Vec<(String, String, CurveSet)> = Vec::new();
    for race in Race::ALL {
        let group = race.to_string();
        let set = curves_for(
            datasets,
            |d| d.scores.nonmated.get(&group).map(|s| s.scores.as_slice()),
            bandwidth,
        )?;
        plots.push((
            format!("density_{}", group.to_lowercase()),
            format!("Non-mated frontal scores: {group}"),
            set,
        ));
    }
    let mated = curves_for(
        datasets,
        |d| d.scores.mated.get(ALL_GROUP).map(|s| s.scores.as_slice()),
        bandwidth,
    )?;
    plots.push(("mated_density".into(), "Mated scores (same identity)".into(), mated));

    for (stem, title, set) in &plots {
        if set.curves.is_empty() {
            continue;
        }
        let csv_path = out_dir.join(format!("{stem}.csv"));
        write(&csv_path, density_csv(set).as_bytes())?;
        density_csvs.push(csv_path);
        let series: Vec<Series<'_>> = set
            .labels
            .iter()
            .zip(&set.curves)
            .map(|(label, c)| Series {
                label,
                x: &c.grid,
                y: &c.density,
            })
            .collect();
        let svg_path = out_dir.join(format!("{stem}.svg"));
        write(&svg_path, svg::line_plot(title, "similarity score", &series).as_bytes())?;
        svgs.push(svg_path);
        for (label, c) in set.labels.iter().zip(&set.curves) {
            curve_log.push(json!({
                "file": format!("{stem}.csv"),
                "dataset": label,
                "bandwidth": c.bandwidth,
                "grid_points": c.grid.len(),
                "integral": c.integral(),
            }));
        }
    }

    for d in datasets {
        if let Some(h) = &d.heatmap {
            let labels: Vec<&str> = h.races.iter().map(|r| r.as_str()).collect();
            let path = out_dir.join(format!("heatmap_{}.svg", safe_label(&d.label)));
            write(
                &path,
                svg::heatmap(&format!("Mean non-mated score by race: {}", d.label), &labels, &h.mean).as_bytes(),
            )?;
            svgs.push(path);
        }
    }

    let mut comparisons = Vec::new();
    for i in 0..datasets.len() {
        for j in i + 1..datasets.len() {
            let (a, b) = (&datasets[i], &datasets[j]);
            let mut groups: Vec<(&str, &BTreeMap<String, super::ScoreDistribution>, String)> = Race::ALL
                .iter()
                .map(|r| ("nonmated", &a.scores.nonmated, r.to_string()))
                .collect();
            groups.push(("nonmated", &a.scores.nonmated, ALL_GROUP.into()));
            groups.push(("mated", &a.scores.mated, ALL_GROUP.into()));
            for (kind, _, group) in groups {
                let pick = |d: &DatasetAnalysis| {
                    let m = if kind == "mated" { &d.scores.mated } else { &d.scores.nonmated };
                    m.get(&group).map(|s| s.scores.clone()).unwrap_or_default()
                };
                let (sa, sb) = (pick(a), pick(b));
                if sa.is_empty() || sb.is_empty() {
                    continue;
                }
                let c = compare_distributions(&sa, &sb, bandwidth)?;
                comparisons.push(json!({
                    "a": a.label, "b": b.label, "kind": kind, "group": group,
                    "ks_stat": c.ks_stat, "mean_shift": c.mean_shift,
                    "overlap_coefficient": c.overlap_coefficient,
                }));
            }
        }
    }

    let dataset_json: Vec<Value> = datasets
        .iter()
        .map(|d| {
            let summaries = |m: &BTreeMap<String, super::ScoreDistribution>| -> Value {
                m.iter().map(|(g, s)| (g.clone(), json!(s.summary))).collect::<serde_json::Map<_, _>>().into()
            };
            json!({
                "label": d.label,
                "model_id": d.model_id,
                "image_count": d.image_count,
                "identity_count": d.identity_count,
                "pairs": {"mated": d.mated_pairs, "nonmated": d.nonmated_pairs},
                "nonmated": summaries(&d.scores.nonmated),
                "mated": summaries(&d.scores.mated),
                "heatmap": d.heatmap,
                "consistency": {
                    "threshold": d.consistency.threshold,
                    "identities": d.consistency.identities.len(),
                    "flagged": d.consistency.flagged,
                    "flag_rate": d.consistency.flag_rate,
                    "aggregate": d.consistency.aggregate,
                    "flagged_identities": d.consistency.identities.iter()
                        .filter(|i| i.flagged).map(|i| &i.identity_id).collect::<Vec<_>>(),
                },
                "warnings": d.warnings.iter().chain(&d.consistency.warnings).collect::<Vec<_>>(),
            })
        })
        .collect();

    let name = |p: &PathBuf| p.file_name().map(|f| f.to_string_lossy().into_owned());
    let report = json!({
        "report_version": REPORT_VERSION,
        "score": "(1 + cosine) / 2",
        "policy": policy,
        "bandwidth": bandwidth.map_or(json!("silverman"), |b| json!(b)),
        "datasets": dataset_json,
        "comparisons": comparisons,
        "curves": curve_log,
        "empty_groups": empty_groups,
        "files": {
            "density_csv": density_csvs.iter().filter_map(name).collect::<Vec<_>>(),
            "svg": svgs.iter().filter_map(name).collect::<Vec<_>>(),
        },
    });
    let report_path = out_dir.join("report.json");
    write(
        &report_path,
        serde_json::to_string_pretty(&report).expect("report serializes").as_bytes(),
    )?;
    Ok(ReportBundle {
        report_path,
        density_csvs,
        svgs,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(n: usize, race: Race) -> Vec<ImageMeta> {
        (0..n)
            .flat_map(|i| {
                ["left", "front"].map(move |pose| ImageMeta {
                    image_id: format!("{race}{i}_{pose}"),
                    identity_id: format!("{race}{i}"),
                    race,
                    pose: pose.into(),
                })
            })
            .collect()
    }

    fn matrix_for(images: &[ImageMeta]) -> EmbeddingMatrix {
        let mut m = EmbeddingMatrix::new(8, "t");
        for (k, img) in images.iter().enumerate() {
            let mut v = vec![0.1f32; 8];
            v[k % 8] += 1.0;
            m.push(img.image_id.clone(), &v).unwrap();
        }
        m
    }

    #[test]
    fn report_for_single_race_notes_empty_groups() {
        let imgs = images(4, Race::Asian);
        let m = matrix_for(&imgs);
        let policy = PairPolicy::default();
        let d = analyze_dataset("sig", &imgs, &m, &policy, 0.6).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let bundle = emit_report(&[d], &policy, None, dir.path()).unwrap();
        assert_eq!(bundle.density_csvs.len(), 2);
        assert!(dir.path().join("density_asian.csv").exists());
        assert!(dir.path().join("mated_density.csv").exists());
        assert!(dir.path().join("heatmap_sig.svg").exists());
        let empty = bundle.report["empty_groups"].as_array().unwrap();
        assert_eq!(empty.len(), 3);
        let header = fs::read_to_string(dir.path().join("density_asian.csv")).unwrap();
        assert!(header.starts_with("grid,sig\n"));
        let parsed: Value = serde_json::from_slice(&fs::read(&bundle.report_path).unwrap()).unwrap();
        assert_eq!(parsed["report_version"], 1);
    }

    #[test]
    fn zero_pairs_still_produce_a_report() {
        let imgs = images(1, Race::Indian);
        let m = matrix_for(&imgs);
        let policy = PairPolicy::default();
        let d = analyze_dataset("lonely", &imgs, &m, &policy, 0.6).unwrap();
        assert_eq!(d.nonmated_pairs, 0);
        assert!(d.heatmap.is_none());
        let dir = tempfile::tempdir().unwrap();
        let bundle = emit_report(&[d], &policy, None, dir.path()).unwrap();
        assert!(bundle.density_csvs.is_empty());
        assert_eq!(bundle.report["empty_groups"].as_array().unwrap().len(), 6);
    }

    #[test]
    fn unwritable_out_dir_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let result = emit_report(&[], &PairPolicy::default(), None, &blocker.join("sub"));
        assert!(matches!(result, Err(AnalysisError::Io { .. })));
    }
}
