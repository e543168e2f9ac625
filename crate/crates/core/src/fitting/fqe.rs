//! Tabular fitted Q evaluation.
//!
//! The empirical Bellman operator averages `r + γ Σ_a' π(a'|s') Q(s', a')`
//! over the logged tuples of each `(s, a)`. Pairs that never appear in the
//! data get `Q = 0`.

use serde::{Deserialize, Serialize};

use super::{FitLog, FittedQ};
use crate::data::LoggedDataset;
use crate::error::{arg_err, OpeError, Result};
use crate::mdp::{QFunction, QTable};
use crate::policy::TabularPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FqeMode {
    /// One table per step, swept backward from `T-1`; the episode ends after
    /// the last step. Works for any discount.
    #[default]
    TimeIndexed,
    /// Single table iterated to a fixed point; requires `γ < 1` and always
    /// bootstraps from the next state.
    Stationary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FqeOptions {
    pub mode: FqeMode,
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for FqeOptions {
    fn default() -> Self {
        Self {
            mode: FqeMode::TimeIndexed,
            tolerance: 1e-10,
            max_iters: 100_000,
        }
    }
}

/// Per-(s,a) transition statistics from a set of tuples.
struct CellModel {
    count: Vec<f64>,
    reward_sum: Vec<f64>,
    next: Vec<Vec<f64>>,
}

impl CellModel {
    fn new(ns: usize, na: usize) -> Self {
        Self {
            count: vec![0.0; ns * na],
            reward_sum: vec![0.0; ns * na],
            next: vec![vec![0.0; ns]; ns * na],
        }
    }

    fn add(&mut self, x: usize, r: f64, s2: usize) {
        self.count[x] += 1.0;
        self.reward_sum[x] += r;
        self.next[x][s2] += 1.0;
    }

    fn backup(&self, gamma: f64, v_next: Option<&[f64]>, ns: usize, na: usize) -> QTable {
        let mut q = QTable::zeros(ns, na);
        for x in 0..ns * na {
            let n = self.count[x];
            if n == 0.0 {
                continue;
            }
            let future = v_next.map_or(0.0, |v| {
                self.next[x].iter().zip(v).map(|(c, v)| c * v).sum::<f64>()
            });
            q.values[x] = (self.reward_sum[x] + gamma * future) / n;
        }
        q
    }
}

fn values(policy: &TabularPolicy, q: &QTable) -> Vec<f64> {
    (0..q.n_states).map(|s| policy.state_value(q, s)).collect()
}

pub fn fit_fqe(ds: &LoggedDataset, policy: &TabularPolicy, opts: &FqeOptions) -> Result<FittedQ> {
    ds.validate()?;
    policy.check_dims(ds.n_states, ds.n_actions)?;
    if !(opts.tolerance > 0.0) {
        return arg_err("FQE tolerance must be positive");
    }
    let (ns, na, gamma) = (ds.n_states, ds.n_actions, ds.discount);
    match opts.mode {
        FqeMode::TimeIndexed => {
            let mut models: Vec<CellModel> = (0..ds.horizon).map(|_| CellModel::new(ns, na)).collect();
            for traj in ds.trajectories() {
                for (t, st) in traj.iter().enumerate() {
                    models[t].add(st.state * na + st.action, st.reward, st.next_state);
                }
            }
            let mut tables = Vec::with_capacity(ds.horizon);
            let mut v_next: Option<Vec<f64>> = None;
            for model in models.iter().rev() {
                let q = model.backup(gamma, v_next.as_deref(), ns, na);
                v_next = Some(values(policy, &q));
                tables.push(q);
            }
            tables.reverse();
            Ok(FittedQ {
                q: QFunction::TimeIndexed(tables),
                fit_log: FitLog {
                    iterations: ds.horizon,
                    residual: 0.0,
                    converged: true,
                },
            })
        }
        FqeMode::Stationary => {
            if gamma >= 1.0 {
                return arg_err("stationary FQE needs discount < 1; use the time-indexed mode");
            }
            let mut model = CellModel::new(ns, na);
            for st in &ds.steps {
                model.add(st.state * na + st.action, st.reward, st.next_state);
            }
            let mut q = QTable::zeros(ns, na);
            let mut residual = f64::INFINITY;
            for it in 1..=opts.max_iters {
                let next = model.backup(gamma, Some(&values(policy, &q)), ns, na);
                residual = next.sup_distance(&q);
                q = next;
                if !residual.is_finite() {
                    return Err(OpeError::Divergence("FQE iterate is not finite".into()));
                }
                if residual < opts.tolerance {
                    return Ok(FittedQ {
                        q: QFunction::Stationary(q),
                        fit_log: FitLog {
                            iterations: it,
                            residual,
                            converged: true,
                        },
                    });
                }
            }
            Err(OpeError::NonConvergence {
                iterations: opts.max_iters,
                residual,
            })
        }
    }
}
