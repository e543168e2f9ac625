//! Plot-ready data files (and SVG renderings) read back from stage outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, PipelineError, Result};
use crate::io::{read_csv, write_csv, write_text};
use crate::stages::{CdfRow, EstimateRow, TopkSummaryRow, TruthCdfRow, TOPK_STATISTICS};
use crate::svg::{chart, Series, Style};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    Cdf,
    Topk,
    ValidationScatter,
}

impl PlotKind {
    pub const ALL: [PlotKind; 3] = [PlotKind::Cdf, PlotKind::Topk, PlotKind::ValidationScatter];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::Cdf => "cdf",
            PlotKind::Topk => "topk",
            PlotKind::ValidationScatter => "validation_scatter",
        }
    }
}

impl FromStr for PlotKind {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| PipelineError::Argument(format!("unknown plot kind {s:?}; expected cdf, topk or validation_scatter")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub threshold: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopkPoint {
    pub k: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub dataset: String,
    pub policy: String,
    pub true_value: f64,
    pub estimate: f64,
}

/// Groups by key, keeping first-appearance order.
fn group_by<T, K: PartialEq + Clone>(items: &[T], key: impl Fn(&T) -> K) -> Vec<(K, Vec<&T>)> {
    let mut groups: Vec<(K, Vec<&T>)> = Vec::new();
    for it in items {
        let k = key(it);
        match groups.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(it),
            None => groups.push((k, vec![it])),
        }
    }
    groups
}

fn plots_dir(out: &Path, kind: PlotKind) -> PathBuf {
    out.join("plots").join(kind.name())
}

fn need(path: PathBuf, producer: &'static str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(PipelineError::MissingUpstream {
            stage: "report",
            producer,
            path,
        })
    }
}

/// One `<estimator>__<statistic>.csv` per (estimator, statistic) under
/// `dir/<behavior>/<criterion>/`. Returns the data files written.
pub fn topk_series(rows: &[TopkSummaryRow], statistics: &[&str], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for ((behavior, criterion, estimator, statistic), pts) in
        group_by(rows, |r| (r.behavior.clone(), r.criterion.clone(), r.estimator.clone(), r.statistic.clone()))
    {
        if !statistics.contains(&statistic.as_str()) {
            continue;
        }
        let path = dir
            .join(&behavior)
            .join(&criterion)
            .join(format!("{estimator}__{statistic}.csv"));
        let points: Vec<TopkPoint> = pts
            .iter()
            .map(|r| TopkPoint {
                k: r.k,
                mean: r.mean,
                std: r.std,
            })
            .collect();
        write_csv(&path, &points)?;
        written.push(path);
    }
    Ok(written)
}

pub fn emit_plot_data(out: &Path, kind: PlotKind) -> Result<Vec<PathBuf>> {
    let dir = plots_dir(out, kind);
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
    }
    let mut written = Vec::new();
    match kind {
        PlotKind::Cdf => {
            let rows: Vec<CdfRow> = read_csv(&need(out.join("cdope/cdf.csv"), "cdope")?)?;
            let truth: Vec<TruthCdfRow> = read_csv(&need(out.join("cdope/truth_cdf.csv"), "cdope")?)?;
            let first: Vec<CdfRow> = rows.into_iter().filter(|r| r.dataset_index == 0).collect();
            for ((dataset, policy), group) in group_by(&first, |r| (r.dataset.clone(), r.policy.clone())) {
                let mut series = Vec::new();
                let base = dir.join(&dataset).join(&policy);
                for (estimator, pts) in group_by(&group, |r| r.estimator.clone()) {
                    let points: Vec<CdfPoint> = pts
                        .iter()
                        .map(|r| CdfPoint {
                            threshold: r.threshold,
                            value: r.value,
                        })
                        .collect();
                    let path = base.join(format!("{estimator}.csv"));
                    write_csv(&path, &points)?;
                    written.push(path);
                    series.push(Series {
                        name: estimator,
                        points: points.iter().map(|p| (p.threshold, p.value)).collect(),
                    });
                }
                let on_policy: Vec<CdfPoint> = truth
                    .iter()
                    .filter(|t| t.policy == policy)
                    .map(|t| CdfPoint {
                        threshold: t.threshold,
                        value: t.value,
                    })
                    .collect();
                let path = base.join("on_policy.csv");
                write_csv(&path, &on_policy)?;
                written.push(path);
                series.push(Series {
                    name: "on_policy".into(),
                    points: on_policy.iter().map(|p| (p.threshold, p.value)).collect(),
                });
                let svg = dir.join(&dataset).join(format!("{policy}.svg"));
                write_text(&svg, &chart(&format!("CDF of return: {policy} ({dataset})"), "return threshold", "F(m)", &series, Style::Lines, false))?;
                written.push(svg);
            }
        }
        PlotKind::Topk => {
            let rows: Vec<TopkSummaryRow> = read_csv(&need(out.join("ops/topk_summary.csv"), "ops")?)?;
            written.extend(topk_series(&rows, &TOPK_STATISTICS, &dir)?);
            for ((behavior, criterion, statistic), group) in
                group_by(&rows, |r| (r.behavior.clone(), r.criterion.clone(), r.statistic.clone()))
            {
                let series: Vec<Series> = group_by(&group, |r| r.estimator.clone())
                    .into_iter()
                    .map(|(estimator, pts)| Series {
                        name: estimator,
                        points: pts.iter().filter_map(|r| r.mean.map(|m| (r.k as f64, m))).collect(),
                    })
                    .collect();
                let svg = dir.join(&behavior).join(&criterion).join(format!("{statistic}.svg"));
                let title = format!("{statistic}@k by {criterion} ({behavior})");
                write_text(&svg, &chart(&title, "k", &statistic, &series, Style::Lines, false))?;
                written.push(svg);
            }
        }
        PlotKind::ValidationScatter => {
            let rows: Vec<EstimateRow> = read_csv(&need(out.join("ope/estimates.csv"), "ope")?)?;
            for (estimator, group) in group_by(&rows, |r| r.estimator.clone()) {
                let points: Vec<ScatterPoint> = group
                    .iter()
                    .map(|r| ScatterPoint {
                        dataset: r.dataset.clone(),
                        policy: r.policy.clone(),
                        true_value: r.true_value,
                        estimate: r.estimate,
                    })
                    .collect();
                let path = dir.join(format!("{estimator}.csv"));
                write_csv(&path, &points)?;
                written.push(path);
                let series = [Series {
                    name: estimator.clone(),
                    points: points.iter().map(|p| (p.true_value, p.estimate)).collect(),
                }];
                let svg = dir.join(format!("{estimator}.svg"));
                write_text(&svg, &chart(&format!("true vs estimated value: {estimator}"), "J(pi)", "estimate", &series, Style::Points, true))?;
                written.push(svg);
            }
        }
    }
    Ok(written)
}

pub fn emit_all(out: &Path) -> Result<Vec<PathBuf>> {
    let mut all = Vec::new();
    for kind in PlotKind::ALL {
        all.extend(emit_plot_data(out, kind)?);
    }
    Ok(all)
}
