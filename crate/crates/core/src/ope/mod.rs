//! Point estimators of the policy value and their confidence intervals.
//!
//! Notation: `w_t = π(a_t|s_t)/π_b(a_t|s_t)`, `w_{0:t} = Π_{t'≤t} w_{t'}`,
//! `V̂_t(s) = Σ_a π(a|s) Q̂_t(s,a)`. The value of the state after the last
//! step of an episode is zero. Self-normalized variants divide weights by
//! their sum over trajectories at the same step.
//!
//! Every estimator returns a per-trajectory decomposition whose mean is the
//! estimate; for self-normalized estimators trajectory `i` stores `n` times
//! its normalized contribution.

mod basic;
pub mod confidence;
mod drl;
pub mod kernels;
mod marginal;
mod sope;

use serde::{Deserialize, Serialize};

pub use basic::{estimate_dm, estimate_dr, estimate_pdis, estimate_tis};
pub use confidence::{confidence_interval, ConfidenceInterval, ConfidenceMethod, JMax};
pub use drl::{estimate_drl, estimate_drl_with_folds, fold_assignment, CrossFitNuisance, NuisanceProvider};
pub use marginal::{estimate_state_action_marginal, estimate_state_marginal, MarginalVariant};
pub use sope::{estimate_sope, sope_weight_schedule, SopeLevel};

use crate::data::LoggedDataset;
use crate::error::{OpeError, Result};
use crate::fitting::{FittedQ, MarginalWeights};
use crate::mdp::QTable;
use crate::policy::TabularPolicy;
use crate::stats::mean;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointEstimate {
    pub value: f64,
    pub estimator_name: String,
    pub per_trajectory_values: Vec<f64>,
}

impl PointEstimate {
    pub(crate) fn from_contributions(name: impl Into<String>, per_trajectory_values: Vec<f64>) -> Self {
        Self {
            value: mean(&per_trajectory_values),
            estimator_name: name.into(),
            per_trajectory_values,
        }
    }
}

/// Everything an estimator may read for one dataset and evaluation policy.
#[derive(Clone)]
pub struct OpeInputs<'a> {
    pub dataset: &'a LoggedDataset,
    pub eval_policy: &'a TabularPolicy,
    pub fitted_q: Option<&'a FittedQ>,
    pub marginal_weights: Option<&'a MarginalWeights>,
    /// Kept for reporting; estimators never read it.
    pub ground_truth: Option<f64>,
    pub nuisance_provider: Option<&'a (dyn NuisanceProvider + Sync)>,
    pub seed: u64,
    /// `w_t` per logged step, trajectory-major.
    ratios: Vec<f64>,
    /// `w_{0:t}` per logged step.
    cumulative: Vec<f64>,
    discounts: Vec<f64>,
}

impl<'a> OpeInputs<'a> {
    pub fn new(dataset: &'a LoggedDataset, eval_policy: &'a TabularPolicy) -> Result<Self> {
        dataset.validate()?;
        eval_policy.check_dims(dataset.n_states, dataset.n_actions)?;
        let ratios: Vec<f64> = dataset
            .steps
            .iter()
            .map(|st| eval_policy.prob(st.state, st.action) / st.behavior_propensity)
            .collect();
        let mut cumulative = Vec::with_capacity(ratios.len());
        for traj in ratios.chunks_exact(dataset.horizon) {
            let mut acc = 1.0;
            for &w in traj {
                acc *= w;
                cumulative.push(acc);
            }
        }
        if cumulative.iter().any(|w| !w.is_finite()) {
            return Err(OpeError::Support("non-finite importance weight".into()));
        }
        Ok(Self {
            dataset,
            eval_policy,
            fitted_q: None,
            marginal_weights: None,
            ground_truth: None,
            nuisance_provider: None,
            seed: 0,
            ratios,
            cumulative,
            discounts: dataset.discounts(),
        })
    }

    pub fn with_q(mut self, q: &'a FittedQ) -> Self {
        self.fitted_q = Some(q);
        self
    }

    pub fn with_weights(mut self, w: &'a MarginalWeights) -> Self {
        self.marginal_weights = Some(w);
        self
    }

    pub fn with_ground_truth(mut self, j: f64) -> Self {
        self.ground_truth = Some(j);
        self
    }

    pub fn with_nuisance_provider(mut self, p: &'a (dyn NuisanceProvider + Sync), seed: u64) -> Self {
        self.nuisance_provider = Some(p);
        self.seed = seed;
        self
    }

    pub fn n(&self) -> usize {
        self.dataset.n_trajectories
    }

    pub fn horizon(&self) -> usize {
        self.dataset.horizon
    }

    #[inline]
    pub fn ratio(&self, i: usize, t: usize) -> f64 {
        self.ratios[i * self.dataset.horizon + t]
    }

    #[inline]
    pub fn cumulative(&self, i: usize, t: usize) -> f64 {
        self.cumulative[i * self.dataset.horizon + t]
    }

    /// `w_{0:t}` for all steps, trajectory-major.
    pub fn cumulative_weights(&self) -> &[f64] {
        &self.cumulative
    }

    /// `w_t` for all steps, trajectory-major.
    pub fn step_ratios(&self) -> &[f64] {
        &self.ratios
    }

    /// Trajectory-wise weights `w_{0:T-1}`.
    pub fn trajectory_weights(&self) -> Vec<f64> {
        let h = self.dataset.horizon;
        (0..self.n()).map(|i| self.cumulative[i * h + h - 1]).collect()
    }

    pub fn discounts(&self) -> &[f64] {
        &self.discounts
    }

    pub(crate) fn require_q(&self, estimator: &str) -> Result<&'a FittedQ> {
        self.fitted_q
            .ok_or_else(|| OpeError::Configuration(format!("{estimator} needs a fitted Q-function")))
    }

    pub(crate) fn require_weights(&self, estimator: &str) -> Result<&'a MarginalWeights> {
        self.marginal_weights
            .ok_or_else(|| OpeError::Configuration(format!("{estimator} needs marginal importance weights")))
    }
}

pub(crate) fn state_value(policy: &TabularPolicy, q: &QTable, s: usize) -> f64 {
    policy.state_value(q, s)
}

/// Divides each column (time step) of a trajectory-major weight array by its
/// sum over trajectories.
pub(crate) fn normalize_per_step(weights: &[f64], n: usize, horizon: usize, what: &str) -> Result<Vec<f64>> {
    let mut sums = vec![0.0; horizon];
    for (k, w) in weights.iter().enumerate() {
        sums[k % horizon] += w;
    }
    if let Some(t) = sums.iter().position(|&s| s == 0.0) {
        return Err(OpeError::AllZeroWeights(format!("{what}: every weight at step {t} is zero")));
    }
    debug_assert_eq!(weights.len(), n * horizon);
    Ok(weights.iter().enumerate().map(|(k, w)| w / sums[k % horizon]).collect())
}

/// The estimator catalogue, as named in configuration files and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimator {
    Dm,
    Tis,
    Pdis,
    Dr,
    Sntis,
    Snpdis,
    Sndr,
    SmIs,
    SmDr,
    SmSnis,
    SmSndr,
    SamIs,
    SamDr,
    SamSnis,
    SamSndr,
    Drl { k_folds: usize },
    SopeIs { k_recent: usize, level: SopeLevel },
    SopeDr { k_recent: usize, level: SopeLevel },
}

impl Estimator {
    /// Every estimator, with DRL at two folds and SOPE at `k_recent`.
    pub fn full_list(k_recent: usize) -> Vec<Estimator> {
        use Estimator::*;
        vec![
            Dm,
            Tis,
            Pdis,
            Dr,
            Sntis,
            Snpdis,
            Sndr,
            SmIs,
            SmDr,
            SmSnis,
            SmSndr,
            SamIs,
            SamDr,
            SamSnis,
            SamSndr,
            Drl { k_folds: 2 },
            SopeIs { k_recent, level: SopeLevel::StateAction },
            SopeDr { k_recent, level: SopeLevel::StateAction },
        ]
    }

    pub fn name(&self) -> String {
        use Estimator::*;
        match self {
            Dm => "dm".into(),
            Tis => "tis".into(),
            Pdis => "pdis".into(),
            Dr => "dr".into(),
            Sntis => "sntis".into(),
            Snpdis => "snpdis".into(),
            Sndr => "sndr".into(),
            SmIs => "sm_is".into(),
            SmDr => "sm_dr".into(),
            SmSnis => "sm_snis".into(),
            SmSndr => "sm_sndr".into(),
            SamIs => "sam_is".into(),
            SamDr => "sam_dr".into(),
            SamSnis => "sam_snis".into(),
            SamSndr => "sam_sndr".into(),
            Drl { k_folds } => format!("drl_k{k_folds}"),
            SopeIs { k_recent, level } => format!("sope_{}_is_k{k_recent}", level.tag()),
            SopeDr { k_recent, level } => format!("sope_{}_dr_k{k_recent}", level.tag()),
        }
    }

    pub fn needs_q(&self) -> bool {
        use Estimator::*;
        matches!(self, Dm | Dr | Sndr | SmDr | SmSndr | SamDr | SamSndr | SopeDr { .. })
    }

    pub fn needs_weights(&self) -> bool {
        use Estimator::*;
        matches!(
            self,
            SmIs | SmDr | SmSnis | SmSndr | SamIs | SamDr | SamSnis | SamSndr | SopeIs { .. } | SopeDr { .. }
        )
    }

    pub fn estimate(&self, inputs: &OpeInputs<'_>) -> Result<PointEstimate> {
        use Estimator::*;
        use MarginalVariant::{Dr as MDr, Is as MIs};
        let mut est = match *self {
            Dm => estimate_dm(inputs),
            Tis => estimate_tis(inputs, false),
            Pdis => estimate_pdis(inputs, false),
            Dr => estimate_dr(inputs, false),
            Sntis => estimate_tis(inputs, true),
            Snpdis => estimate_pdis(inputs, true),
            Sndr => estimate_dr(inputs, true),
            SmIs => estimate_state_marginal(inputs, MIs, false),
            SmDr => estimate_state_marginal(inputs, MDr, false),
            SmSnis => estimate_state_marginal(inputs, MIs, true),
            SmSndr => estimate_state_marginal(inputs, MDr, true),
            SamIs => estimate_state_action_marginal(inputs, MIs, false),
            SamDr => estimate_state_action_marginal(inputs, MDr, false),
            SamSnis => estimate_state_action_marginal(inputs, MIs, true),
            SamSndr => estimate_state_action_marginal(inputs, MDr, true),
            Drl { k_folds } => {
                let provider = inputs.nuisance_provider.ok_or_else(|| {
                    OpeError::Configuration("drl needs a nuisance provider for cross-fitting".into())
                })?;
                estimate_drl(inputs, k_folds, inputs.seed, provider)
            }
            SopeIs { k_recent, level } => estimate_sope(inputs, k_recent, level, MIs),
            SopeDr { k_recent, level } => estimate_sope(inputs, k_recent, level, MDr),
        }?;
        est.estimator_name = self.name();
        Ok(est)
    }
}
