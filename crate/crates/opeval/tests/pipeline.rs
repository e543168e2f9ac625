use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use opeval::config::{ExperimentConfig, WeightConfig};
use opeval::io::{read_csv, write_csv};
use opeval::pipeline::{RunManifest, StageStatus};
use opeval::report::{emit_plot_data, CdfPoint, PlotKind, ScatterPoint};
use opeval::stages::{CdfRow, EstimateRow, RankingRow};
use opeval::{Pipeline, PipelineError, Stage};
use opeval_core::par::Execution;

fn tiny() -> ExperimentConfig {
    let mut c = ExperimentConfig::default_config();
    c.data.n_datasets = 2;
    c.data.n_trajectories = 120;
    c.cdope.truth_rollouts = 500;
    c.fitting.weights = WeightConfig::Oracle;
    c
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    files_under(root)
        .into_iter()
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| {
            let bytes = std::fs::read(root.join(&p)).unwrap();
            (p, bytes)
        })
        .collect()
}

fn statuses(m: &RunManifest) -> Vec<StageStatus> {
    m.stages.iter().map(|s| s.status).collect()
}

#[test]
fn run_writes_every_stage_then_caches() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(tiny(), dir.path(), Execution::Parallel);
    let first = p.run().unwrap();
    assert_eq!(statuses(&first), vec![StageStatus::Ran; 5]);
    for f in [
        "collect/truth.csv",
        "collect/datasets.csv",
        "fit/fit_summary.csv",
        "ope/estimates.csv",
        "cdope/cdf.csv",
        "cdope/risk.csv",
        "ops/metrics.csv",
        "ops/topk.csv",
        "ops/ranking.csv",
        "manifest.json",
    ] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let before = snapshot(dir.path());
    let second = p.run().unwrap();
    assert_eq!(statuses(&second), vec![StageStatus::Cached; 5]);
    assert_eq!(before, snapshot(dir.path()));
    assert_eq!(first.seeds, second.seeds);
}

#[test]
fn config_change_reruns_only_affected_stages() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    Pipeline::new(cfg.clone(), dir.path(), Execution::Parallel).run().unwrap();

    cfg.ops.relative_safety = 0.9;
    let m = Pipeline::new(cfg.clone(), dir.path(), Execution::Parallel).run().unwrap();
    use StageStatus::*;
    assert_eq!(statuses(&m), vec![Cached, Cached, Cached, Cached, Ran]);

    cfg.cdope.grid.n_partition = 10;
    let m = Pipeline::new(cfg.clone(), dir.path(), Execution::Parallel).run().unwrap();
    assert_eq!(statuses(&m), vec![Cached, Cached, Cached, Ran, Ran]);

    cfg.seed += 1;
    let m = Pipeline::new(cfg, dir.path(), Execution::Parallel).run().unwrap();
    assert_eq!(statuses(&m), vec![Ran; 5]);
}

#[test]
fn deleted_artifact_forces_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(tiny(), dir.path(), Execution::Parallel);
    p.run().unwrap();
    let est = dir.path().join("ope/estimates.csv");
    let bytes = std::fs::read(&est).unwrap();
    std::fs::remove_file(&est).unwrap();
    let m = p.run().unwrap();
    use StageStatus::*;
    assert_eq!(statuses(&m), vec![Cached, Cached, Ran, Cached, Cached]);
    assert_eq!(std::fs::read(&est).unwrap(), bytes);
}

#[test]
fn sequential_and_parallel_agree() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    Pipeline::new(tiny(), a.path(), Execution::Sequential).run().unwrap();
    Pipeline::new(tiny(), b.path(), Execution::Parallel).run().unwrap();
    assert_eq!(snapshot(a.path()), snapshot(b.path()));
}

#[test]
fn stage_without_upstream_names_the_producer() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(tiny(), dir.path(), Execution::Parallel);
    let err = p.run_stage(Stage::Ope).unwrap_err();
    match &err {
        PipelineError::MissingUpstream { producer, .. } => assert_eq!(*producer, "fit"),
        other => panic!("unexpected error {other}"),
    }
    assert!(err.to_string().contains("opeval fit"), "{err}");
    assert_eq!(err.exit_code(), 3);

    p.run_stage(Stage::Collect).unwrap();
    p.run_stage(Stage::Cdope).unwrap();
    let err = p.run_stage(Stage::Ops).unwrap_err();
    assert!(err.to_string().contains("opeval ope"), "{err}");
}

#[test]
fn stage_outputs_have_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    Pipeline::new(cfg.clone(), dir.path(), Execution::Parallel).run().unwrap();
    let n_candidates = cfg.candidate_names().len();
    let n_datasets = cfg.behaviors.len() * cfg.data.n_datasets;

    let est: Vec<EstimateRow> = read_csv(&dir.path().join("ope/estimates.csv")).unwrap();
    assert_eq!(est.len(), n_datasets * n_candidates * cfg.estimators.len());
    assert!(est.iter().all(|r| r.lower <= r.estimate && r.estimate <= r.upper));

    let cdf: Vec<CdfRow> = read_csv(&dir.path().join("cdope/cdf.csv")).unwrap();
    let mut per: BTreeMap<(String, String, String), usize> = BTreeMap::new();
    for r in &cdf {
        *per.entry((r.dataset.clone(), r.policy.clone(), r.estimator.clone())).or_default() += 1;
    }
    assert_eq!(per.len(), n_datasets * n_candidates * cfg.cdope.estimators.len());
    assert!(per.values().all(|&c| c == 21));

    // rankings by the lower quartile list candidates by descending estimate
    let ranking: Vec<RankingRow> = read_csv(&dir.path().join("ops/ranking.csv")).unwrap();
    let mut groups: BTreeMap<(String, String), Vec<&RankingRow>> = BTreeMap::new();
    for r in ranking.iter().filter(|r| r.criterion == "lower_quartile_0.3") {
        groups.entry((r.dataset.clone(), r.estimator.clone())).or_default().push(r);
    }
    assert!(!groups.is_empty());
    for rows in groups.values() {
        assert_eq!(rows.len(), n_candidates);
        for w in rows.windows(2) {
            assert_eq!(w[1].rank, w[0].rank + 1);
            assert!(w[0].estimated >= w[1].estimated);
        }
    }
}

#[test]
fn cdf_plot_data_matches_stage_output() {
    let dir = tempfile::tempdir().unwrap();
    Pipeline::new(tiny(), dir.path(), Execution::Parallel).run().unwrap();
    let rows: Vec<CdfRow> = read_csv(&dir.path().join("cdope/cdf.csv")).unwrap();
    let first = &rows[0];
    let path = dir
        .path()
        .join("plots/cdf")
        .join(&first.dataset)
        .join(&first.policy)
        .join(format!("{}.csv", first.estimator));
    let pts: Vec<CdfPoint> = read_csv(&path).unwrap();
    let expect: Vec<CdfPoint> = rows
        .iter()
        .filter(|r| r.dataset == first.dataset && r.policy == first.policy && r.estimator == first.estimator)
        .map(|r| CdfPoint {
            threshold: r.threshold,
            value: r.value,
        })
        .collect();
    assert_eq!(pts, expect);
    assert!(path.with_file_name("on_policy.csv").is_file());
}

#[test]
fn perfect_estimator_scatters_on_the_diagonal() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<EstimateRow> = (0..6)
        .map(|i| {
            let j = 1.0 + 0.37 * i as f64;
            EstimateRow {
                dataset: format!("b__d{:02}", i % 2),
                behavior: "b".into(),
                dataset_index: i % 2,
                policy: format!("p{i}"),
                estimator: "perfect".into(),
                estimate: j,
                lower: j,
                upper: j,
                true_value: j,
            }
        })
        .collect();
    write_csv(&dir.path().join("ope/estimates.csv"), &rows).unwrap();
    let written = emit_plot_data(dir.path(), PlotKind::ValidationScatter).unwrap();
    assert_eq!(written.len(), 2);
    let pts: Vec<ScatterPoint> = read_csv(&dir.path().join("plots/validation_scatter/perfect.csv")).unwrap();
    assert_eq!(pts.len(), 6);
    assert!(pts.iter().all(|p| p.estimate == p.true_value));
}

#[test]
fn report_without_outputs_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let err = emit_plot_data(dir.path(), PlotKind::Topk).unwrap_err();
    assert!(err.to_string().contains("opeval ops"), "{err}");
}

#[test]
fn csv_round_trip_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let rows = vec![
        EstimateRow {
            dataset: "b__d00".into(),
            behavior: "b".into(),
            dataset_index: 0,
            policy: "p".into(),
            estimator: "dr".into(),
            estimate: 0.1 + 0.2,
            lower: -1e-300,
            upper: 5.551115123125783e-17,
            true_value: std::f64::consts::PI,
        },
        EstimateRow {
            dataset: "b, with comma".into(),
            behavior: "b".into(),
            dataset_index: 1,
            policy: "\"quoted\"".into(),
            estimator: "tis".into(),
            estimate: 1e17,
            lower: f64::MIN_POSITIVE,
            upper: 123456.789,
            true_value: -0.0,
        },
    ];
    let path = dir.path().join("x/rows.csv");
    write_csv(&path, &rows).unwrap();
    let back: Vec<EstimateRow> = read_csv(&path).unwrap();
    assert_eq!(back, rows);
}
