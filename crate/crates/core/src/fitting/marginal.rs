//! Marginal importance weights ρ(s) = d^π(s)/d^{π_b}(s) and
//! ρ(s,a) = d^π(s,a)/d^{π_b}(s,a), from exact occupancies or from data.

use serde::{Deserialize, Serialize};

use super::TupleStats;
use crate::data::LoggedDataset;
use crate::error::{OpeError, Result};
use crate::mdp::{exact_occupancy, MdpSpec, QTable};
use crate::policy::TabularPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    Oracle,
    Empirical,
    Alm,
    Mwl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalWeights {
    pub rho_state: Vec<f64>,
    pub rho_state_action: QTable,
    pub source: WeightSource,
}

impl MarginalWeights {
    pub fn ones(n_states: usize, n_actions: usize, source: WeightSource) -> Self {
        Self {
            rho_state: vec![1.0; n_states],
            rho_state_action: QTable::filled(n_states, n_actions, 1.0),
            source,
        }
    }

    #[inline]
    pub fn state(&self, s: usize) -> f64 {
        self.rho_state[s]
    }

    #[inline]
    pub fn state_action(&self, s: usize, a: usize) -> f64 {
        self.rho_state_action.get(s, a)
    }
}

fn ratio(num: f64, den: f64, what: impl FnOnce() -> String) -> Result<f64> {
    if den > 0.0 {
        Ok(num / den)
    } else if num > 0.0 {
        Err(OpeError::Support(what()))
    } else {
        Ok(0.0)
    }
}

/// Ratios of exact occupancies. Cells unreachable under both policies get 0.
pub fn oracle_marginal_weights(
    mdp: &MdpSpec,
    eval: &TabularPolicy,
    behavior: &TabularPolicy,
) -> Result<MarginalWeights> {
    let de = exact_occupancy(mdp, eval)?;
    let db = exact_occupancy(mdp, behavior)?;
    let rho_state = (0..mdp.n_states)
        .map(|s| {
            ratio(de.d_state[s], db.d_state[s], || {
                format!("behavior never reaches state {s}, which the evaluation policy visits")
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rho_sa = QTable::zeros(mdp.n_states, mdp.n_actions);
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let r = ratio(de.d_state_action[s][a], db.d_state_action[s][a], || {
                format!("behavior never takes ({s}, {a}), which the evaluation policy visits")
            })?;
            rho_sa.set(s, a, r);
        }
    }
    Ok(MarginalWeights {
        rho_state,
        rho_state_action: rho_sa,
        source: WeightSource::Oracle,
    })
}

/// Exact d^π over a smoothed empirical behavior occupancy.
///
/// The denominator is `(ĉ + κ) / (1 + κ·cells)` where `ĉ` is the normalized
/// discounted visitation count and `κ = 1/(nT)`, so every weight is finite.
pub fn empirical_marginal_weights(
    ds: &LoggedDataset,
    eval: &TabularPolicy,
    mdp: &MdpSpec,
) -> Result<MarginalWeights> {
    let stats = TupleStats::new(ds)?;
    eval.check_dims(ds.n_states, ds.n_actions)?;
    let de = exact_occupancy(mdp, eval)?;
    let kappa = 1.0 / stats.n_tuples as f64;
    let smooth = |c: f64, cells: usize| (c + kappa) / (1.0 + kappa * cells as f64);

    let ns = ds.n_states;
    let cells = stats.cells();
    let rho_state = stats
        .state_weight()
        .iter()
        .zip(&de.d_state)
        .map(|(&c, &d)| d / smooth(c, ns))
        .collect();
    let mut rho_sa = QTable::zeros(ns, ds.n_actions);
    for s in 0..ns {
        for a in 0..ds.n_actions {
            let c = stats.weight[s * ds.n_actions + a];
            rho_sa.set(s, a, de.d_state_action[s][a] / smooth(c, cells));
        }
    }
    Ok(MarginalWeights {
        rho_state,
        rho_state_action: rho_sa,
        source: WeightSource::Empirical,
    })
}
