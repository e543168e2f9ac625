//! Policy selection from estimates and metrics that score an estimator's
//! selections against true values.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, OpeError, Result};
use crate::ope::confidence::ConfidenceMethod;

pub const POLICY_VALUE: &str = "policy_value";

/// What candidates are ranked by.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Criterion {
    PolicyValue,
    PolicyValueLowerBound { alpha: f64, method: ConfidenceMethod },
    LowerQuartile { alpha: f64 },
    Cvar { alpha: f64 },
}

impl Criterion {
    /// Column holding the estimated statistic.
    pub fn key(&self) -> String {
        match self {
            Criterion::PolicyValue => POLICY_VALUE.to_string(),
            Criterion::PolicyValueLowerBound { alpha, method } => format!("lower_bound_{}_{alpha}", method.name()),
            Criterion::LowerQuartile { alpha } => format!("lower_quartile_{alpha}"),
            Criterion::Cvar { alpha } => format!("cvar_{alpha}"),
        }
    }

    /// Column holding the true statistic the selection is judged on.
    pub fn true_key(&self) -> String {
        match self {
            Criterion::PolicyValueLowerBound { .. } => POLICY_VALUE.to_string(),
            _ => self.key(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecord {
    pub name: String,
    /// True statistics keyed by [`Criterion::true_key`]; always has `policy_value`.
    pub truth: BTreeMap<String, f64>,
    /// `estimates[estimator][criterion key]`.
    pub estimates: BTreeMap<String, BTreeMap<String, f64>>,
}

impl PolicyRecord {
    pub fn new(name: impl Into<String>, true_value: f64) -> Self {
        Self {
            name: name.into(),
            truth: BTreeMap::from([(POLICY_VALUE.to_string(), true_value)]),
            estimates: BTreeMap::new(),
        }
    }

    pub fn with_estimate(mut self, estimator: &str, key: &str, value: f64) -> Self {
        self.insert_estimate(estimator, key, value);
        self
    }

    pub fn insert_estimate(&mut self, estimator: &str, key: &str, value: f64) {
        self.estimates
            .entry(estimator.to_string())
            .or_default()
            .insert(key.to_string(), value);
    }

    pub fn with_truth(mut self, key: &str, value: f64) -> Self {
        self.truth.insert(key.to_string(), value);
        self
    }

    pub fn true_value(&self) -> f64 {
        self.truth[POLICY_VALUE]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyPanel {
    pub policies: Vec<PolicyRecord>,
    /// Behavior-policy statistics keyed like [`PolicyRecord::truth`].
    pub behavior_truth: BTreeMap<String, f64>,
    pub relative_safety: f64,
}

pub const DEFAULT_RELATIVE_SAFETY: f64 = 1.0;

impl PolicyPanel {
    pub fn new(policies: Vec<PolicyRecord>, behavior_value: f64) -> Result<Self> {
        let panel = Self {
            policies,
            behavior_truth: BTreeMap::from([(POLICY_VALUE.to_string(), behavior_value)]),
            relative_safety: DEFAULT_RELATIVE_SAFETY,
        };
        panel.validate()?;
        Ok(panel)
    }

    pub fn validate(&self) -> Result<()> {
        if self.policies.len() < 2 {
            return arg_err("a panel needs at least two policies");
        }
        let mut names = BTreeSet::new();
        for p in &self.policies {
            if !names.insert(p.name.as_str()) {
                return arg_err(format!("duplicate policy name {}", p.name));
            }
            if !p.truth.contains_key(POLICY_VALUE) {
                return Err(OpeError::Configuration(format!("policy {} has no true value", p.name)));
            }
        }
        if !self.behavior_truth.contains_key(POLICY_VALUE) {
            return Err(OpeError::Configuration("behavior value missing".into()));
        }
        for est in self.estimators() {
            for p in &self.policies {
                if !p.estimates.contains_key(&est) {
                    return Err(OpeError::Configuration(format!("estimator {est} has no entry for {}", p.name)));
                }
            }
        }
        Ok(())
    }

    pub fn estimators(&self) -> BTreeSet<String> {
        self.policies.iter().flat_map(|p| p.estimates.keys().cloned()).collect()
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn baseline(&self, key: &str) -> Result<f64> {
        self.behavior_truth
            .get(key)
            .copied()
            .ok_or_else(|| OpeError::Configuration(format!("behavior statistic {key} missing")))
    }

    pub fn safety_threshold(&self, key: &str) -> Result<f64> {
        Ok(self.relative_safety * self.baseline(key)?)
    }

    fn estimated(&self, estimator: &str, key: &str) -> Result<Vec<f64>> {
        self.policies
            .iter()
            .map(|p| {
                p.estimates
                    .get(estimator)
                    .and_then(|m| m.get(key))
                    .copied()
                    .ok_or_else(|| OpeError::Configuration(format!("no {key} estimate from {estimator} for {}", p.name)))
            })
            .collect()
    }

    fn true_stat(&self, key: &str) -> Result<Vec<f64>> {
        self.policies
            .iter()
            .map(|p| {
                p.truth
                    .get(key)
                    .copied()
                    .ok_or_else(|| OpeError::Configuration(format!("no true {key} for {}", p.name)))
            })
            .collect()
    }

    fn names(&self) -> Vec<&str> {
        self.policies.iter().map(|p| p.name.as_str()).collect()
    }
}

/// Indices sorted by descending value, ties by ascending name.
pub fn rank_order(names: &[&str], values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then_with(|| names[a].cmp(names[b])));
    idx
}

pub fn metric_mse(panel: &PolicyPanel, estimator: &str) -> Result<f64> {
    let est = panel.estimated(estimator, POLICY_VALUE)?;
    let truth = panel.true_stat(POLICY_VALUE)?;
    Ok(est.iter().zip(&truth).map(|(e, t)| (e - t).powi(2)).sum::<f64>() / est.len() as f64)
}

/// Ascending ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of average ranks; `None` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

pub fn metric_rank_correlation(panel: &PolicyPanel, estimator: &str) -> Result<Option<f64>> {
    Ok(spearman(&panel.true_stat(POLICY_VALUE)?, &panel.estimated(estimator, POLICY_VALUE)?))
}

pub fn metric_regret_at_k(panel: &PolicyPanel, estimator: &str, k: usize) -> Result<f64> {
    if k < 1 || k > panel.len() {
        return arg_err(format!("k must lie in 1..={}, got {k}", panel.len()));
    }
    let truth = panel.true_stat(POLICY_VALUE)?;
    let order = rank_order(&panel.names(), &panel.estimated(estimator, POLICY_VALUE)?);
    let best = truth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let best_k = order[..k].iter().map(|&i| truth[i]).fold(f64::NEG_INFINITY, f64::max);
    Ok(best - best_k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRates {
    /// Unsafe policies judged safe, over unsafe policies.
    pub type1: Option<f64>,
    /// Safe policies judged unsafe, over safe policies.
    pub type2: Option<f64>,
}

pub fn metric_error_rates(panel: &PolicyPanel, estimator: &str) -> Result<ErrorRates> {
    let threshold = panel.safety_threshold(POLICY_VALUE)?;
    let truth = panel.true_stat(POLICY_VALUE)?;
    let est = panel.estimated(estimator, POLICY_VALUE)?;
    let (mut fp, mut unsafe_n, mut fn_, mut safe_n) = (0usize, 0usize, 0usize, 0usize);
    for (&t, &e) in truth.iter().zip(&est) {
        if t < threshold {
            unsafe_n += 1;
            fp += usize::from(e >= threshold);
        } else {
            safe_n += 1;
            fn_ += usize::from(e < threshold);
        }
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    Ok(ErrorRates {
        type1: ratio(fp, unsafe_n),
        type2: ratio(fn_, safe_n),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopkRow {
    pub k: usize,
    pub best: f64,
    pub worst: f64,
    pub mean: f64,
    pub std: f64,
    pub safety_violation_rate: f64,
    /// `None` when `std` is zero.
    pub sharpe_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopkReport {
    pub estimator: String,
    pub criterion: String,
    pub rows: Vec<TopkRow>,
}

/// Top-k statistics for every k, computed on true values of the policies the
/// estimator ranks highest under `criterion`.
pub fn topk_statistics(panel: &PolicyPanel, estimator: &str, criterion: &Criterion) -> Result<TopkReport> {
    let true_key = criterion.true_key();
    let truth = panel.true_stat(&true_key)?;
    let order = rank_order(&panel.names(), &panel.estimated(estimator, &criterion.key())?);
    let baseline = panel.baseline(&true_key)?;
    let threshold = panel.safety_threshold(&true_key)?;
    let mut rows = Vec::with_capacity(order.len());
    for k in 1..=order.len() {
        let vals: Vec<f64> = order[..k].iter().map(|&i| truth[i]).collect();
        let kf = k as f64;
        let best = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let worst = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = vals.iter().sum::<f64>() / kf;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / kf).sqrt();
        let violations = vals.iter().filter(|&&v| v < threshold).count();
        rows.push(TopkRow {
            k,
            best,
            worst,
            mean,
            std,
            safety_violation_rate: violations as f64 / kf,
            sharpe_ratio: (std > 0.0).then(|| (best - baseline) / std),
        });
    }
    Ok(TopkReport {
        estimator: estimator.to_string(),
        criterion: criterion.key(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPolicy {
    pub rank: usize,
    pub name: String,
    pub estimated: f64,
    pub true_value: f64,
}

pub fn select_by(panel: &PolicyPanel, estimator: &str, criterion: &Criterion) -> Result<Vec<RankedPolicy>> {
    let est = panel.estimated(estimator, &criterion.key())?;
    let truth = panel.true_stat(&criterion.true_key())?;
    let names = panel.names();
    Ok(rank_order(&names, &est)
        .into_iter()
        .enumerate()
        .map(|(r, i)| RankedPolicy {
            rank: r + 1,
            name: names[i].to_string(),
            estimated: est[i],
            true_value: truth[i],
        })
        .collect())
}

/// Mean and sample standard deviation over datasets, skipping undefined values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub count: usize,
}

pub fn aggregate(values: &[Option<f64>]) -> Aggregate {
    let xs: Vec<f64> = values.iter().flatten().copied().collect();
    if xs.is_empty() {
        return Aggregate {
            mean: None,
            std: None,
            count: 0,
        };
    }
    let m = crate::stats::mean(&xs);
    let std = if xs.len() > 1 { crate::stats::sample_std(&xs) } else { 0.0 };
    Aggregate {
        mean: Some(m),
        std: Some(std),
        count: xs.len(),
    }
}
