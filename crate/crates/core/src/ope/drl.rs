//! Double reinforcement learning with cross-fitted nuisances.
//!
//! Trajectory `i` in fold `j` contributes
//! `Σ_t γ^t (ρ^j(s_t,a_t)(r_t − Q^j_t(s_t,a_t)) + ρ^j(s_{t-1},a_{t-1}) V^j_t(s_t))`
//! with `ρ^j(s_{-1},a_{-1}) = 1`, where `ρ^j, Q^j` are fitted on every fold
//! except `j`.

use rand::seq::SliceRandom;

use super::{state_value, OpeInputs, PointEstimate};
use crate::data::LoggedDataset;
use crate::error::{arg_err, Result};
use crate::fitting::{empirical_marginal_weights, fit_fqe, FittedQ, FqeOptions, MarginalWeights};
use crate::mdp::MdpSpec;
use crate::policy::TabularPolicy;
use crate::rng::rng_from_seed;

/// Fits the DRL nuisances on a training split.
pub trait NuisanceProvider {
    fn nuisances(&self, train: &LoggedDataset, policy: &TabularPolicy) -> Result<(MarginalWeights, FittedQ)>;
}

/// Empirical marginal weights and FQE on the training split.
#[derive(Debug, Clone)]
pub struct CrossFitNuisance {
    pub mdp: MdpSpec,
    pub fqe: FqeOptions,
}

impl NuisanceProvider for CrossFitNuisance {
    fn nuisances(&self, train: &LoggedDataset, policy: &TabularPolicy) -> Result<(MarginalWeights, FittedQ)> {
        Ok((
            empirical_marginal_weights(train, policy, &self.mdp)?,
            fit_fqe(train, policy, &self.fqe)?,
        ))
    }
}

/// Fold index per trajectory: a seeded shuffle dealt round-robin.
pub fn fold_assignment(n: usize, k_folds: usize, seed: u64) -> Result<Vec<usize>> {
    if k_folds < 2 {
        return arg_err("drl needs at least 2 folds");
    }
    if k_folds > n {
        return arg_err(format!("{k_folds} folds leave some fold without trajectories (n = {n})"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let mut folds = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        folds[i] = pos % k_folds;
    }
    Ok(folds)
}

pub fn estimate_drl(
    inputs: &OpeInputs<'_>,
    k_folds: usize,
    seed: u64,
    provider: &(dyn NuisanceProvider + Sync),
) -> Result<PointEstimate> {
    let folds = fold_assignment(inputs.n(), k_folds, seed)?;
    estimate_drl_with_folds(inputs, &folds, provider)
}

pub fn estimate_drl_with_folds(
    inputs: &OpeInputs<'_>,
    folds: &[usize],
    provider: &(dyn NuisanceProvider + Sync),
) -> Result<PointEstimate> {
    let n = inputs.n();
    if folds.len() != n {
        return arg_err("fold assignment length differs from the number of trajectories");
    }
    let k = folds.iter().max().map_or(0, |m| m + 1);
    let mut per = vec![0.0; n];
    for j in 0..k {
        let held: Vec<usize> = (0..n).filter(|&i| folds[i] == j).collect();
        let train: Vec<usize> = (0..n).filter(|&i| folds[i] != j).collect();
        if held.is_empty() || train.is_empty() {
            return arg_err(format!("fold {j} has no trajectories"));
        }
        let (rho, q) = provider.nuisances(&inputs.dataset.subset(&train), inputs.eval_policy)?;
        for i in held {
            per[i] = drl_contribution(inputs, i, &rho, &q);
        }
    }
    Ok(PointEstimate::from_contributions(format!("drl_k{k}"), per))
}

pub(crate) fn drl_contribution(inputs: &OpeInputs<'_>, i: usize, rho: &MarginalWeights, q: &FittedQ) -> f64 {
    let g = inputs.discounts();
    let traj = inputs.dataset.trajectory(i);
    let mut prev_rho = 1.0;
    let mut total = 0.0;
    for (t, st) in traj.iter().enumerate() {
        let qt = q.q.at(t);
        let r = rho.state_action(st.state, st.action);
        let v = state_value(inputs.eval_policy, qt, st.state);
        total += g[t] * (r * (st.reward - qt.get(st.state, st.action)) + prev_rho * v);
        prev_rho = r;
    }
    total
}
