//! Nuisance fitting: Q-functions and marginal importance weights.
//!
//! Every learner here works on discounted, normalized tuple statistics. A
//! logged tuple at step `t` carries weight `c_t = γ^t / (n Z)` with
//! `Z = Σ_{t<T} γ^t`, so the weights of a dataset sum to one and their
//! per-cell totals form the empirical discounted occupancy of the behavior
//! policy.

pub mod alm;
pub mod fqe;
pub mod kernel;
pub mod marginal;

use serde::{Deserialize, Serialize};

pub use alm::{fit_alm, AlmFit, AlmHyperparams, AlmPreset, AlmProblem, LambdaMode};
pub use fqe::{fit_fqe, FqeMode, FqeOptions};
pub use kernel::{fit_mql, fit_mwl, KernelOptions, MAX_KERNEL_TUPLES};
pub use marginal::{empirical_marginal_weights, oracle_marginal_weights, MarginalWeights, WeightSource};

use crate::data::LoggedDataset;
use crate::error::{OpeError, Result};
use crate::mdp::{discount_mass, QFunction};
use crate::policy::TabularPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitLog {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedQ {
    pub q: QFunction,
    pub fit_log: FitLog,
}

/// Per-cell aggregates of the logged tuples; cells are `s * n_actions + a`.
#[derive(Debug, Clone)]
pub(crate) struct TupleStats {
    pub n_states: usize,
    pub n_actions: usize,
    pub discount: f64,
    /// Σ c_t over tuples in the cell.
    pub weight: Vec<f64>,
    /// Σ c_t r_t.
    pub reward: Vec<f64>,
    /// `[cell][s']`: Σ c_t over non-final tuples moving to s'.
    pub next_nonterminal: Vec<Vec<f64>>,
    /// `[cell][s']`: Σ c_t over all tuples moving to s'.
    pub next_all: Vec<Vec<f64>>,
    /// Per state: fraction of trajectories starting there, divided by Z.
    pub init: Vec<f64>,
    /// Squared-weight aggregates per `(cell, s')`: Σ c², Σ c² r, Σ c² r²,
    /// and Σ c² over non-final tuples.
    pub sq: Vec<Vec<[f64; 4]>>,
    pub n_tuples: usize,
}

impl TupleStats {
    pub fn new(ds: &LoggedDataset) -> Result<Self> {
        ds.validate()?;
        let (ns, na) = (ds.n_states, ds.n_actions);
        let cells = ns * na;
        let z = discount_mass(ds.discount, ds.horizon);
        let scale = 1.0 / (ds.n_trajectories as f64 * z);
        let mut st = TupleStats {
            n_states: ns,
            n_actions: na,
            discount: ds.discount,
            weight: vec![0.0; cells],
            reward: vec![0.0; cells],
            next_nonterminal: vec![vec![0.0; ns]; cells],
            next_all: vec![vec![0.0; ns]; cells],
            init: vec![0.0; ns],
            sq: vec![vec![[0.0; 4]; ns]; cells],
            n_tuples: ds.steps.len(),
        };
        let g = ds.discounts();
        for traj in ds.trajectories() {
            st.init[traj[0].state] += scale;
            for (t, step) in traj.iter().enumerate() {
                let c = g[t] * scale;
                let x = step.state * na + step.action;
                st.weight[x] += c;
                st.reward[x] += c * step.reward;
                st.next_all[x][step.next_state] += c;
                let e = &mut st.sq[x][step.next_state];
                e[0] += c * c;
                e[1] += c * c * step.reward;
                e[2] += c * c * step.reward * step.reward;
                if t + 1 < ds.horizon {
                    st.next_nonterminal[x][step.next_state] += c;
                    e[3] += c * c;
                }
            }
        }
        Ok(st)
    }

    pub fn cells(&self) -> usize {
        self.n_states * self.n_actions
    }

    /// Σ_a weight(s, a).
    pub fn state_weight(&self) -> Vec<f64> {
        self.weight
            .chunks_exact(self.n_actions)
            .map(|r| r.iter().sum())
            .collect()
    }
}

/// V(s) = Σ_a π(a|s) q[s * n_actions + a].
pub(crate) fn policy_state_values(policy: &TabularPolicy, q: &[f64], n_actions: usize) -> Vec<f64> {
    q.chunks_exact(n_actions)
        .enumerate()
        .map(|(s, row)| row.iter().zip(policy.row(s)).map(|(v, p)| v * p).sum())
        .collect()
}

pub(crate) fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| v.is_nan()) {
        return Err(OpeError::Divergence(format!("NaN in {what}")));
    }
    Ok(())
}
