//! Stage bodies and the row types of their CSV outputs.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use opeval_core::cdope::{
    cdf_cvar, cdf_interquartile, cdf_mean_variance, estimate_cdf, CdfEstimate, CdfRewardModel, RewardGrid,
};
use opeval_core::data::{collect_multi, on_policy_returns, LoggedDataset};
use opeval_core::fitting::{
    empirical_marginal_weights, fit_alm, fit_fqe, fit_mql, fit_mwl, oracle_marginal_weights, FitLog, FittedQ,
    FqeOptions, KernelOptions, MarginalWeights,
};
use opeval_core::mdp::{exact_policy_value, MdpSpec};
use opeval_core::ope::confidence::{analytic_j_max, confidence_interval, JMax};
use opeval_core::ope::{CrossFitNuisance, OpeInputs};
use opeval_core::ops::{
    aggregate, metric_error_rates, metric_mse, metric_rank_correlation, metric_regret_at_k, select_by,
    topk_statistics, Criterion, PolicyPanel, PolicyRecord, POLICY_VALUE,
};
use opeval_core::par;
use opeval_core::policy::TabularPolicy;
use opeval_core::rng::{derive_seed, name_hash};

use crate::config::{JMaxConfig, NamedPolicy, OpsCriterion, PolicyRole, QConfig, WeightConfig};
use crate::error::{PipelineError, Result};
use crate::io::{read_csv, read_json, write_csv, write_json, write_text};
use crate::pipeline::{Pipeline, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub dataset: String,
    pub behavior: String,
    pub dataset_index: usize,
    pub seed: u64,
    pub n_trajectories: usize,
    pub mean_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub policy: String,
    pub role: PolicyRole,
    pub true_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub policy: String,
    pub fitted_q: FittedQ,
    pub weights: MarginalWeights,
    pub weight_fit_log: Option<FitLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummaryRow {
    pub dataset: String,
    pub policy: String,
    pub q_iterations: usize,
    pub q_residual: f64,
    pub q_converged: bool,
    pub w_iterations: Option<usize>,
    pub w_residual: Option<f64>,
    pub w_converged: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub dataset: String,
    pub behavior: String,
    pub dataset_index: usize,
    pub policy: String,
    pub estimator: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub true_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfRow {
    pub dataset: String,
    pub behavior: String,
    pub dataset_index: usize,
    pub policy: String,
    pub estimator: String,
    pub threshold: f64,
    pub raw: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfRecord {
    pub dataset: String,
    pub policy: String,
    pub estimate: CdfEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub dataset: String,
    pub behavior: String,
    pub dataset_index: usize,
    pub policy: String,
    pub estimator: String,
    pub mean: f64,
    pub variance: f64,
    pub cvar: f64,
    pub lower_quartile: f64,
    pub median: f64,
    pub upper_quartile: f64,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthCdfRow {
    pub policy: String,
    pub threshold: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRiskRow {
    pub policy: String,
    pub role: PolicyRole,
    pub mean: f64,
    pub variance: f64,
    pub cvar: f64,
    pub lower_quartile: f64,
    pub median: f64,
    pub upper_quartile: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub dataset: String,
    pub behavior: String,
    pub dataset_index: usize,
    pub estimator: String,
    pub metric: String,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummaryRow {
    pub behavior: String,
    pub estimator: String,
    pub metric: String,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopkCsvRow {
    pub dataset: String,
    pub behavior: String,
    pub dataset_index: usize,
    pub estimator: String,
    pub criterion: String,
    pub k: usize,
    pub best: f64,
    pub worst: f64,
    pub mean: f64,
    pub std: f64,
    pub safety_violation_rate: f64,
    pub sharpe_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopkSummaryRow {
    pub behavior: String,
    pub estimator: String,
    pub criterion: String,
    pub k: usize,
    pub statistic: String,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub dataset: String,
    pub behavior: String,
    pub dataset_index: usize,
    pub estimator: String,
    pub criterion: String,
    pub rank: usize,
    pub policy: String,
    pub estimated: f64,
    pub true_value: f64,
}

pub const TOPK_STATISTICS: [&str; 6] = ["best", "worst", "mean", "std", "safety_violation_rate", "sharpe_ratio"];

/// Everything the collect stage persisted.
pub(crate) struct Collected {
    pub mdp: MdpSpec,
    pub policies: Vec<NamedPolicy>,
    pub datasets: Vec<DatasetRow>,
    pub truth: Vec<TruthRow>,
}

impl Collected {
    pub fn load(p: &Pipeline) -> Result<Self> {
        let dir = p.stage_dir(Stage::Collect);
        let mdp_text = std::fs::read_to_string(dir.join("mdp.json"))
            .map_err(|e| PipelineError::Io(format!("{}: {e}", dir.join("mdp.json").display())))?;
        Ok(Self {
            mdp: MdpSpec::from_json(&mdp_text).map_err(PipelineError::stage("collect"))?,
            policies: read_json(&dir.join("policies.json"))?,
            datasets: read_csv(&dir.join("datasets.csv"))?,
            truth: read_csv(&dir.join("truth.csv"))?,
        })
    }

    pub fn dataset(&self, p: &Pipeline, row: &DatasetRow) -> Result<LoggedDataset> {
        let path = p.stage_dir(Stage::Collect).join("datasets").join(format!("{}.json", row.dataset));
        LoggedDataset::load(&path).map_err(PipelineError::stage("collect"))
    }

    pub fn policy(&self, name: &str) -> &TabularPolicy {
        &self.policies.iter().find(|p| p.policy.name == name).expect("policy listed by collect").policy
    }

    pub fn candidates(&self) -> impl Iterator<Item = &TabularPolicy> {
        self.policies.iter().filter(|p| p.role == PolicyRole::Candidate).map(|p| &p.policy)
    }

    pub fn true_value(&self, name: &str) -> f64 {
        self.truth.iter().find(|t| t.policy == name).expect("truth covers every policy").true_value
    }
}

fn stem(behavior: &str, index: usize) -> String {
    format!("{behavior}__d{index:02}")
}

pub(crate) fn collect(p: &Pipeline) -> Result<Vec<PathBuf>> {
    let st = PipelineError::stage("collect");
    let cfg = &p.config;
    let dir = p.stage_dir(Stage::Collect);
    let mdp = cfg.mdp().map_err(&st)?;
    let policies = cfg.policies(&mdp).map_err(&st)?;
    let behaviors: Vec<TabularPolicy> = policies
        .iter()
        .filter(|n| n.role == PolicyRole::Behavior)
        .map(|n| n.policy.clone())
        .collect();
    let datasets = collect_multi(
        &mdp,
        &behaviors,
        cfg.data.n_datasets,
        cfg.data.n_trajectories,
        p.stage_seed(Stage::Collect),
        p.exec,
    )
    .map_err(&st)?;

    let mut written = Vec::new();
    let mdp_path = dir.join("mdp.json");
    write_text(&mdp_path, &(mdp.to_json().map_err(&st)? + "\n"))?;
    written.push(mdp_path);
    let pol_path = dir.join("policies.json");
    write_json(&pol_path, &policies)?;
    written.push(pol_path);

    let mut rows = Vec::with_capacity(datasets.len());
    for (k, ds) in datasets.iter().enumerate() {
        let b = &behaviors[k / cfg.data.n_datasets];
        let idx = k % cfg.data.n_datasets;
        let name = stem(&b.name, idx);
        let manifest = ds.save(&dir.join("datasets"), &name).map_err(&st)?;
        written.push(manifest.with_extension("bin"));
        written.push(manifest);
        rows.push(DatasetRow {
            dataset: name,
            behavior: b.name.clone(),
            dataset_index: idx,
            seed: ds.seed,
            n_trajectories: ds.n_trajectories,
            mean_return: ds.mean_return(),
        });
    }
    let ds_path = dir.join("datasets.csv");
    write_csv(&ds_path, &rows)?;
    written.push(ds_path);

    let truth = policies
        .iter()
        .map(|n| {
            Ok(TruthRow {
                policy: n.policy.name.clone(),
                role: n.role,
                true_value: exact_policy_value(&mdp, &n.policy)?,
            })
        })
        .collect::<opeval_core::Result<Vec<_>>>()
        .map_err(&st)?;
    let truth_path = dir.join("truth.csv");
    write_csv(&truth_path, &truth)?;
    written.push(truth_path);
    Ok(written)
}

fn fit_one(p: &Pipeline, c: &Collected, ds: &LoggedDataset, behavior: &TabularPolicy, pi: &TabularPolicy) -> opeval_core::Result<FitRecord> {
    let fitting = &p.config.fitting;
    let fitted_q = match fitting.q {
        QConfig::Fqe { mode } => fit_fqe(ds, pi, &FqeOptions { mode, ..FqeOptions::default() })?,
        QConfig::Mql { bandwidth } => fit_mql(ds, pi, &KernelOptions { bandwidth, ..KernelOptions::default() })?,
    };
    let (weights, weight_fit_log) = match fitting.weights {
        WeightConfig::Oracle => (oracle_marginal_weights(&c.mdp, pi, behavior)?, None),
        WeightConfig::Empirical => (empirical_marginal_weights(ds, pi, &c.mdp)?, None),
        WeightConfig::Alm { preset } => {
            let fit = fit_alm(ds, pi, &preset.hyperparams())?;
            (fit.weights, Some(fit.fit_log))
        }
        WeightConfig::Mwl { bandwidth } => {
            let (w, log) = fit_mwl(ds, pi, &KernelOptions { bandwidth, ..KernelOptions::default() })?;
            (w, Some(log))
        }
    };
    Ok(FitRecord {
        policy: pi.name.clone(),
        fitted_q,
        weights,
        weight_fit_log,
    })
}

pub(crate) fn fit(p: &Pipeline) -> Result<Vec<PathBuf>> {
    let st = PipelineError::stage("fit");
    let c = Collected::load(p)?;
    let dir = p.stage_dir(Stage::Fit);
    let candidates: Vec<&TabularPolicy> = c.candidates().collect();
    let mut written = Vec::new();
    let mut summary = Vec::new();
    for row in &c.datasets {
        let ds = c.dataset(p, row)?;
        let behavior = c.policy(&row.behavior);
        let fits = par::try_map(p.exec, &candidates, |pi| fit_one(p, &c, &ds, behavior, pi)).map_err(&st)?;
        for f in &fits {
            let log = &f.fitted_q.fit_log;
            summary.push(FitSummaryRow {
                dataset: row.dataset.clone(),
                policy: f.policy.clone(),
                q_iterations: log.iterations,
                q_residual: log.residual,
                q_converged: log.converged,
                w_iterations: f.weight_fit_log.as_ref().map(|l| l.iterations),
                w_residual: f.weight_fit_log.as_ref().map(|l| l.residual),
                w_converged: f.weight_fit_log.as_ref().map(|l| l.converged),
            });
        }
        let path = dir.join(format!("{}.json", row.dataset));
        write_json(&path, &fits)?;
        written.push(path);
    }
    let sum_path = dir.join("fit_summary.csv");
    write_csv(&sum_path, &summary)?;
    written.push(sum_path);
    Ok(written)
}

fn cell_seed(p: &Pipeline, stage: Stage, dataset: &str, policy: &str, extra: u64) -> u64 {
    derive_seed(p.stage_seed(stage), &[name_hash(dataset), name_hash(policy), extra])
}

pub(crate) fn ope(p: &Pipeline) -> Result<Vec<PathBuf>> {
    let st = PipelineError::stage("ope");
    let cfg = &p.config;
    let c = Collected::load(p)?;
    let dir = p.stage_dir(Stage::Ope);
    let nuisance = CrossFitNuisance {
        mdp: c.mdp.clone(),
        fqe: FqeOptions::default(),
    };
    let r_max = c.mdp.reward_range[1].abs().max(c.mdp.reward_range[0].abs());
    let mut rows = Vec::new();
    for row in &c.datasets {
        let ds = c.dataset(p, row)?;
        let fit_path = p.stage_dir(Stage::Fit).join(format!("{}.json", row.dataset));
        if !fit_path.exists() {
            return Err(PipelineError::MissingUpstream {
                stage: "ope",
                producer: "fit",
                path: fit_path,
            });
        }
        let fits: Vec<FitRecord> = read_json(&fit_path)?;
        let cells: Vec<(&FitRecord, usize)> = fits
            .iter()
            .flat_map(|f| (0..cfg.estimators.len()).map(move |e| (f, e)))
            .collect();
        let out = par::try_map(p.exec, &cells, |&(f, e)| -> opeval_core::Result<EstimateRow> {
            let est = &cfg.estimators[e];
            let pi = c.policy(&f.policy);
            let name = est.name();
            let truth = c.true_value(&f.policy);
            let inputs = OpeInputs::new(&ds, pi)?
                .with_q(&f.fitted_q)
                .with_weights(&f.weights)
                .with_ground_truth(truth)
                .with_nuisance_provider(&nuisance, cell_seed(p, Stage::Ope, &row.dataset, &f.policy, 0));
            let point = est.estimate(&inputs)?;
            let j_max = match cfg.confidence.j_max {
                JMaxConfig::DataMax => JMax::DataMax,
                JMaxConfig::Fixed { value } => JMax::Fixed { value },
                JMaxConfig::Analytic => JMax::Fixed {
                    value: analytic_j_max(&inputs, r_max),
                },
            };
            let ci = confidence_interval(
                &point.per_trajectory_values,
                cfg.confidence.method,
                cfg.confidence.alpha,
                j_max,
                cfg.confidence.bootstrap_samples,
                cell_seed(p, Stage::Ope, &row.dataset, &f.policy, name_hash(&name)),
            )?;
            Ok(EstimateRow {
                dataset: row.dataset.clone(),
                behavior: row.behavior.clone(),
                dataset_index: row.dataset_index,
                policy: f.policy.clone(),
                estimator: name,
                estimate: point.value,
                lower: ci.lower,
                upper: ci.upper,
                true_value: truth,
            })
        })
        .map_err(&st)?;
        rows.extend(out);
    }
    let path = dir.join("estimates.csv");
    write_csv(&path, &rows)?;
    Ok(vec![path])
}

struct Risk {
    mean: f64,
    variance: f64,
    cvar: f64,
    iq: (f64, f64, f64),
}

fn risk(cdf: &CdfEstimate, cvar_alpha: f64, quartile_alpha: f64) -> opeval_core::Result<Risk> {
    let (mean, variance) = cdf_mean_variance(cdf)?;
    Ok(Risk {
        mean,
        variance,
        cvar: cdf_cvar(cdf, cvar_alpha, true)?,
        iq: cdf_interquartile(cdf, quartile_alpha)?,
    })
}

fn empirical_cdf(grid: &RewardGrid, returns: &[f64], name: &str) -> CdfEstimate {
    let p = 1.0 / returns.len() as f64;
    let atoms: Vec<(f64, f64)> = returns.iter().map(|&g| (g, p)).collect();
    let values = grid.cdf_of_atoms(&atoms);
    CdfEstimate {
        grid: grid.clone(),
        raw: values.clone(),
        values,
        estimator_name: name.to_string(),
        corrected: true,
        warning: None,
    }
}

pub(crate) fn cdope(p: &Pipeline) -> Result<Vec<PathBuf>> {
    let st = PipelineError::stage("cdope");
    let cfg = &p.config;
    let ops = &cfg.ops;
    let c = Collected::load(p)?;
    let dir = p.stage_dir(Stage::Cdope);
    let grid = cfg.cdope.grid.grid().map_err(&st)?;

    let truths = par::try_map(p.exec, &c.policies, |n| -> opeval_core::Result<(TruthRiskRow, Vec<TruthCdfRow>)> {
        let seed = derive_seed(p.stage_seed(Stage::Cdope), &[name_hash(&n.policy.name)]);
        let returns = on_policy_returns(&c.mdp, &n.policy, cfg.cdope.truth_rollouts, seed)?;
        let cdf = empirical_cdf(&grid, &returns, "on_policy");
        let r = risk(&cdf, ops.cvar_alpha, ops.quartile_alpha)?;
        let rows = grid
            .thresholds
            .iter()
            .zip(&cdf.values)
            .map(|(&m, &v)| TruthCdfRow {
                policy: n.policy.name.clone(),
                threshold: m,
                value: v,
            })
            .collect();
        Ok((
            TruthRiskRow {
                policy: n.policy.name.clone(),
                role: n.role,
                mean: r.mean,
                variance: r.variance,
                cvar: r.cvar,
                lower_quartile: r.iq.0,
                median: r.iq.1,
                upper_quartile: r.iq.2,
            },
            rows,
        ))
    })
    .map_err(&st)?;
    let (truth_risk, truth_cdf): (Vec<_>, Vec<_>) = truths.into_iter().unzip();
    let truth_cdf: Vec<TruthCdfRow> = truth_cdf.into_iter().flatten().collect();

    let candidates: Vec<&TabularPolicy> = c.candidates().collect();
    let mut cdf_rows = Vec::new();
    let mut risk_rows = Vec::new();
    let mut records = Vec::new();
    for row in &c.datasets {
        let ds = c.dataset(p, row)?;
        let model = CdfRewardModel::fit(&ds, &grid);
        let cells: Vec<(&TabularPolicy, usize)> = candidates
            .iter()
            .flat_map(|&pi| (0..cfg.cdope.estimators.len()).map(move |e| (pi, e)))
            .collect();
        let out = par::try_map(p.exec, &cells, |&(pi, e)| -> opeval_core::Result<(CdfEstimate, Risk)> {
            let inputs = OpeInputs::new(&ds, pi)?;
            let est = estimate_cdf(&inputs, &grid, cfg.cdope.estimators[e], Some(&model))?;
            let r = risk(&est, ops.cvar_alpha, ops.quartile_alpha)?;
            Ok((est, r))
        })
        .map_err(&st)?;
        for ((pi, _), (est, r)) in cells.iter().zip(out) {
            for j in 0..grid.len() {
                cdf_rows.push(CdfRow {
                    dataset: row.dataset.clone(),
                    behavior: row.behavior.clone(),
                    dataset_index: row.dataset_index,
                    policy: pi.name.clone(),
                    estimator: est.estimator_name.clone(),
                    threshold: grid.thresholds[j],
                    raw: est.raw[j],
                    value: est.values[j],
                });
            }
            risk_rows.push(RiskRow {
                dataset: row.dataset.clone(),
                behavior: row.behavior.clone(),
                dataset_index: row.dataset_index,
                policy: pi.name.clone(),
                estimator: est.estimator_name.clone(),
                mean: r.mean,
                variance: r.variance,
                cvar: r.cvar,
                lower_quartile: r.iq.0,
                median: r.iq.1,
                upper_quartile: r.iq.2,
                warning: est.warning.clone(),
            });
            records.push(CdfRecord {
                dataset: row.dataset.clone(),
                policy: pi.name.clone(),
                estimate: est,
            });
        }
    }
    let paths = [
        dir.join("cdf.csv"),
        dir.join("cdf.json"),
        dir.join("risk.csv"),
        dir.join("truth_cdf.csv"),
        dir.join("truth_risk.csv"),
    ];
    write_csv(&paths[0], &cdf_rows)?;
    write_json(&paths[1], &records)?;
    write_csv(&paths[2], &risk_rows)?;
    write_csv(&paths[3], &truth_cdf)?;
    write_csv(&paths[4], &truth_risk)?;
    Ok(paths.to_vec())
}

pub(crate) fn criteria(p: &Pipeline) -> Vec<Criterion> {
    let cfg = &p.config;
    cfg.ops
        .criteria
        .iter()
        .map(|c| match c {
            OpsCriterion::PolicyValue => Criterion::PolicyValue,
            OpsCriterion::PolicyValueLowerBound => Criterion::PolicyValueLowerBound {
                alpha: cfg.confidence.alpha,
                method: cfg.confidence.method,
            },
            OpsCriterion::LowerQuartile => Criterion::LowerQuartile {
                alpha: cfg.ops.quartile_alpha,
            },
            OpsCriterion::Cvar => Criterion::Cvar {
                alpha: cfg.ops.cvar_alpha,
            },
        })
        .collect()
}

pub(crate) fn ops(p: &Pipeline) -> Result<Vec<PathBuf>> {
    let st = PipelineError::stage("ops");
    let cfg = &p.config;
    let c = Collected::load(p)?;
    let dir = p.stage_dir(Stage::Ops);
    let estimates: Vec<EstimateRow> = read_csv(&p.stage_dir(Stage::Ope).join("estimates.csv"))?;
    let risks: Vec<RiskRow> = read_csv(&p.stage_dir(Stage::Cdope).join("risk.csv"))?;
    let truth_risk: Vec<TruthRiskRow> = read_csv(&p.stage_dir(Stage::Cdope).join("truth_risk.csv"))?;
    let criteria = criteria(p);
    let lb_key = Criterion::PolicyValueLowerBound {
        alpha: cfg.confidence.alpha,
        method: cfg.confidence.method,
    }
    .key();
    let lq_key = Criterion::LowerQuartile {
        alpha: cfg.ops.quartile_alpha,
    }
    .key();
    let cvar_key = Criterion::Cvar { alpha: cfg.ops.cvar_alpha }.key();
    let truth_of = |name: &str| truth_risk.iter().find(|t| t.policy == name).expect("truth risk covers every policy");
    let estimator_order: Vec<String> = cfg
        .estimators
        .iter()
        .map(|e| e.name())
        .chain(cfg.cdope.estimators.iter().map(|e| e.name().to_string()))
        .collect();

    let mut metric_rows = Vec::new();
    let mut topk_rows = Vec::new();
    let mut ranking_rows = Vec::new();
    for row in &c.datasets {
        let mut records: Vec<PolicyRecord> = c
            .candidates()
            .map(|pi| {
                let t = truth_of(&pi.name);
                PolicyRecord::new(pi.name.clone(), c.true_value(&pi.name))
                    .with_truth(&lq_key, t.lower_quartile)
                    .with_truth(&cvar_key, t.cvar)
            })
            .collect();
        let index: BTreeMap<String, usize> = records.iter().enumerate().map(|(i, r)| (r.name.clone(), i)).collect();
        for e in estimates.iter().filter(|e| e.dataset == row.dataset) {
            let r = &mut records[index[&e.policy]];
            r.insert_estimate(&e.estimator, POLICY_VALUE, e.estimate);
            r.insert_estimate(&e.estimator, &lb_key, e.lower);
        }
        for e in risks.iter().filter(|e| e.dataset == row.dataset) {
            let r = &mut records[index[&e.policy]];
            r.insert_estimate(&e.estimator, POLICY_VALUE, e.mean);
            r.insert_estimate(&e.estimator, &lq_key, e.lower_quartile);
            r.insert_estimate(&e.estimator, &cvar_key, e.cvar);
        }
        let bt = truth_of(&row.behavior);
        let mut panel = PolicyPanel::new(records, c.true_value(&row.behavior)).map_err(&st)?;
        panel.behavior_truth.insert(lq_key.clone(), bt.lower_quartile);
        panel.behavior_truth.insert(cvar_key.clone(), bt.cvar);
        panel.relative_safety = cfg.ops.relative_safety;

        let has_key = |est: &str, key: &str| panel.policies[0].estimates.get(est).is_some_and(|m| m.contains_key(key));
        let metric = |estimator: &str, metric: String, value: Option<f64>| MetricRow {
            dataset: row.dataset.clone(),
            behavior: row.behavior.clone(),
            dataset_index: row.dataset_index,
            estimator: estimator.to_string(),
            metric,
            value,
        };
        for est in &estimator_order {
            if !has_key(est, POLICY_VALUE) {
                continue;
            }
            metric_rows.push(metric(est, "mse".into(), Some(metric_mse(&panel, est).map_err(&st)?)));
            metric_rows.push(metric(est, "rank_correlation".into(), metric_rank_correlation(&panel, est).map_err(&st)?));
            for &k in &cfg.ops.regret_k {
                metric_rows.push(metric(est, format!("regret@{k}"), Some(metric_regret_at_k(&panel, est, k).map_err(&st)?)));
            }
            let rates = metric_error_rates(&panel, est).map_err(&st)?;
            metric_rows.push(metric(est, "type1_error_rate".into(), rates.type1));
            metric_rows.push(metric(est, "type2_error_rate".into(), rates.type2));

            for crit in &criteria {
                if !has_key(est, &crit.key()) {
                    continue;
                }
                let report = topk_statistics(&panel, est, crit).map_err(&st)?;
                for r in report.rows {
                    topk_rows.push(TopkCsvRow {
                        dataset: row.dataset.clone(),
                        behavior: row.behavior.clone(),
                        dataset_index: row.dataset_index,
                        estimator: est.clone(),
                        criterion: report.criterion.clone(),
                        k: r.k,
                        best: r.best,
                        worst: r.worst,
                        mean: r.mean,
                        std: r.std,
                        safety_violation_rate: r.safety_violation_rate,
                        sharpe_ratio: r.sharpe_ratio,
                    });
                }
                for r in select_by(&panel, est, crit).map_err(&st)? {
                    ranking_rows.push(RankingRow {
                        dataset: row.dataset.clone(),
                        behavior: row.behavior.clone(),
                        dataset_index: row.dataset_index,
                        estimator: est.clone(),
                        criterion: crit.key(),
                        rank: r.rank,
                        policy: r.name,
                        estimated: r.estimated,
                        true_value: r.true_value,
                    });
                }
            }
        }
    }

    let behaviors: Vec<&str> = cfg.behaviors.iter().map(|b| b.name.as_str()).collect();
    let mut metric_summary = Vec::new();
    let mut metric_groups: BTreeMap<(usize, usize, String), Vec<Option<f64>>> = BTreeMap::new();
    let mut metric_order: Vec<String> = Vec::new();
    for m in &metric_rows {
        if !metric_order.contains(&m.metric) {
            metric_order.push(m.metric.clone());
        }
        let b = behaviors.iter().position(|&b| b == m.behavior).expect("known behavior");
        let e = estimator_order.iter().position(|e| *e == m.estimator).expect("known estimator");
        metric_groups.entry((b, e, m.metric.clone())).or_default().push(m.value);
    }
    for (bi, b) in behaviors.iter().enumerate() {
        for (ei, e) in estimator_order.iter().enumerate() {
            for m in &metric_order {
                if let Some(vals) = metric_groups.get(&(bi, ei, m.clone())) {
                    let a = aggregate(vals);
                    metric_summary.push(MetricSummaryRow {
                        behavior: b.to_string(),
                        estimator: e.clone(),
                        metric: m.clone(),
                        mean: a.mean,
                        std: a.std,
                        count: a.count,
                    });
                }
            }
        }
    }

    let mut topk_groups: BTreeMap<(usize, usize, usize, usize), Vec<&TopkCsvRow>> = BTreeMap::new();
    let crit_keys: Vec<String> = criteria.iter().map(|c| c.key()).collect();
    for r in &topk_rows {
        let b = behaviors.iter().position(|&b| b == r.behavior).expect("known behavior");
        let e = estimator_order.iter().position(|e| *e == r.estimator).expect("known estimator");
        let c = crit_keys.iter().position(|c| *c == r.criterion).expect("known criterion");
        topk_groups.entry((b, e, c, r.k)).or_default().push(r);
    }
    let mut topk_summary = Vec::new();
    for ((b, e, c, k), rows) in &topk_groups {
        for stat in TOPK_STATISTICS {
            let vals: Vec<Option<f64>> = rows
                .iter()
                .map(|r| match stat {
                    "best" => Some(r.best),
                    "worst" => Some(r.worst),
                    "mean" => Some(r.mean),
                    "std" => Some(r.std),
                    "safety_violation_rate" => Some(r.safety_violation_rate),
                    _ => r.sharpe_ratio,
                })
                .collect();
            let a = aggregate(&vals);
            topk_summary.push(TopkSummaryRow {
                behavior: behaviors[*b].to_string(),
                estimator: estimator_order[*e].clone(),
                criterion: crit_keys[*c].clone(),
                k: *k,
                statistic: stat.to_string(),
                mean: a.mean,
                std: a.std,
                count: a.count,
            });
        }
    }

    let paths = [
        dir.join("metrics.csv"),
        dir.join("metrics_summary.csv"),
        dir.join("topk.csv"),
        dir.join("topk_summary.csv"),
        dir.join("ranking.csv"),
    ];
    write_csv(&paths[0], &metric_rows)?;
    write_csv(&paths[1], &metric_summary)?;
    write_csv(&paths[2], &topk_rows)?;
    write_csv(&paths[3], &topk_summary)?;
    write_csv(&paths[4], &ranking_rows)?;
    Ok(paths.to_vec())
}
