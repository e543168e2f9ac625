//! Marginalized importance sampling: state (SM) and state-action (SAM)
//! weights, IS and DR forms.

use serde::{Deserialize, Serialize};

use super::basic::{sn_weights, weighted_rewards};
use super::{state_value, OpeInputs, PointEstimate};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginalVariant {
    Is,
    Dr,
}

/// `Σ_t γ^t u_t (r_t + γ V̂_{t+1}(s_{t+1}) − Q̂_t(s_t,a_t))` per trajectory plus
/// the initial-state baseline `V̂_0(s_0)`; `V̂_T ≡ 0`.
pub(crate) fn weighted_td(inputs: &OpeInputs<'_>, weights: &[f64], name: &str) -> Result<Vec<f64>> {
    let fitted = inputs.require_q(name)?;
    let pi = inputs.eval_policy;
    let (h, gamma) = (inputs.horizon(), inputs.dataset.discount);
    let g = inputs.discounts();
    Ok(inputs
        .dataset
        .trajectories()
        .enumerate()
        .map(|(i, traj)| {
            let baseline = state_value(pi, fitted.q.at(0), traj[0].state);
            let residuals: f64 = traj
                .iter()
                .enumerate()
                .map(|(t, st)| {
                    let q = fitted.q.at(t);
                    let next = if t + 1 < h {
                        state_value(pi, fitted.q.at(t + 1), st.next_state)
                    } else {
                        0.0
                    };
                    g[t] * (weights[i * h + t] * (st.reward + gamma * next - q.get(st.state, st.action)))
                })
                .sum();
            baseline + residuals
        })
        .collect())
}

pub(crate) fn marginal_estimate(
    inputs: &OpeInputs<'_>,
    weights: Vec<f64>,
    variant: MarginalVariant,
    self_normalized: bool,
    name: String,
) -> Result<PointEstimate> {
    let weights = if self_normalized {
        sn_weights(inputs, &weights, &name)?
    } else {
        weights
    };
    let per = match variant {
        MarginalVariant::Is => weighted_rewards(inputs, &weights),
        MarginalVariant::Dr => weighted_td(inputs, &weights, &name)?,
    };
    Ok(PointEstimate::from_contributions(name, per))
}

fn name(prefix: &str, variant: MarginalVariant, sn: bool) -> String {
    let v = match variant {
        MarginalVariant::Is => "is",
        MarginalVariant::Dr => "dr",
    };
    format!("{prefix}_{}{v}", if sn { "sn" } else { "" })
}

/// Weights `ρ(s_t) w_t`.
pub fn estimate_state_marginal(
    inputs: &OpeInputs<'_>,
    variant: MarginalVariant,
    self_normalized: bool,
) -> Result<PointEstimate> {
    let name = name("sm", variant, self_normalized);
    let rho = inputs.require_weights(&name)?;
    let weights = inputs
        .dataset
        .steps
        .iter()
        .zip(inputs.step_ratios())
        .map(|(st, &w)| rho.state(st.state) * w)
        .collect();
    marginal_estimate(inputs, weights, variant, self_normalized, name)
}

/// Weights `ρ(s_t, a_t)`.
pub fn estimate_state_action_marginal(
    inputs: &OpeInputs<'_>,
    variant: MarginalVariant,
    self_normalized: bool,
) -> Result<PointEstimate> {
    let name = name("sam", variant, self_normalized);
    let rho = inputs.require_weights(&name)?;
    let weights = inputs
        .dataset
        .steps
        .iter()
        .map(|st| rho.state_action(st.state, st.action))
        .collect();
    marginal_estimate(inputs, weights, variant, self_normalized, name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::collect;
    use crate::error::OpeError;
    use crate::fitting::{oracle_marginal_weights, FitLog, FittedQ};
    use crate::mdp::{exact_q_function, make_random_mdp, MdpSpec, QFunction, QTable};
    use crate::ope::estimate_dm;
    use crate::policy::TabularPolicy;

    fn per_step_average(ds: &crate::data::LoggedDataset) -> f64 {
        ds.mean_return()
    }

    #[test]
    fn identity_oracle_weights_give_mean_return() {
        let mdp = make_random_mdp(4, 2, 6, 0.9, 2).unwrap();
        let pi = TabularPolicy::uniform("u", 4, 2);
        let ds = collect(&mdp, &pi, 100, 1).unwrap();
        let w = oracle_marginal_weights(&mdp, &pi, &pi).unwrap();
        let inputs = OpeInputs::new(&ds, &pi).unwrap().with_weights(&w);
        for sn in [false, true] {
            let sm = estimate_state_marginal(&inputs, MarginalVariant::Is, sn).unwrap();
            let sam = estimate_state_action_marginal(&inputs, MarginalVariant::Is, sn).unwrap();
            assert!((sm.value - per_step_average(&ds)).abs() < 1e-10);
            assert!((sam.value - per_step_average(&ds)).abs() < 1e-10);
        }
    }

    #[test]
    fn dr_with_zero_q_collapses_to_is() {
        let mdp = make_random_mdp(3, 2, 5, 0.9, 4).unwrap();
        let b = TabularPolicy::uniform("u", 3, 2);
        let e = TabularPolicy::new("e", vec![vec![0.3, 0.7]; 3]).unwrap();
        let ds = collect(&mdp, &b, 50, 1).unwrap();
        let w = oracle_marginal_weights(&mdp, &e, &b).unwrap();
        let q = FittedQ {
            q: QFunction::Stationary(QTable::zeros(3, 2)),
            fit_log: FitLog { iterations: 0, residual: 0.0, converged: true },
        };
        let inputs = OpeInputs::new(&ds, &e).unwrap().with_weights(&w).with_q(&q);
        let is = estimate_state_marginal(&inputs, MarginalVariant::Is, false).unwrap();
        let dr = estimate_state_marginal(&inputs, MarginalVariant::Dr, false).unwrap();
        assert!((is.value - dr.value).abs() < 1e-14);
    }

    #[test]
    fn sam_dr_with_exact_nuisances_equals_dm() {
        let mdp = MdpSpec::chain2().with_horizon(4).with_discount(0.9);
        let b = TabularPolicy::uniform("u", 2, 2);
        let e = TabularPolicy::new("e", vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let ds = collect(&mdp, &b, 60, 3).unwrap();
        let w = oracle_marginal_weights(&mdp, &e, &b).unwrap();
        let q = FittedQ {
            q: exact_q_function(&mdp, &e, true).unwrap(),
            fit_log: FitLog { iterations: 0, residual: 0.0, converged: true },
        };
        let inputs = OpeInputs::new(&ds, &e).unwrap().with_weights(&w).with_q(&q);
        let dr = estimate_state_action_marginal(&inputs, MarginalVariant::Dr, false).unwrap();
        let dm = estimate_dm(&inputs).unwrap();
        for (a, b) in dr.per_trajectory_values.iter().zip(&dm.per_trajectory_values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_factorization_makes_sam_equal_sm() {
        for seed in 0..5 {
            let mdp = make_random_mdp(4, 3, 6, 0.9, seed).unwrap();
            let b = TabularPolicy::uniform("u", 4, 3);
            let e = TabularPolicy::new("e", vec![vec![0.5, 0.3, 0.2], vec![0.1, 0.1, 0.8], vec![0.3, 0.3, 0.4], vec![0.6, 0.2, 0.2]]).unwrap();
            let ds = collect(&mdp, &b, 80, seed).unwrap();
            let w = oracle_marginal_weights(&mdp, &e, &b).unwrap();
            let inputs = OpeInputs::new(&ds, &e).unwrap().with_weights(&w);
            let sm = estimate_state_marginal(&inputs, MarginalVariant::Is, false).unwrap();
            let sam = estimate_state_action_marginal(&inputs, MarginalVariant::Is, false).unwrap();
            assert!((sm.value - sam.value).abs() < 1e-10);
        }
    }

    #[test]
    fn missing_weights_is_configuration_error() {
        let ds = collect(&MdpSpec::chain2(), &TabularPolicy::uniform("u", 2, 2), 4, 0).unwrap();
        let pi = TabularPolicy::uniform("u", 2, 2);
        let inputs = OpeInputs::new(&ds, &pi).unwrap();
        assert!(matches!(
            estimate_state_marginal(&inputs, MarginalVariant::Is, false),
            Err(OpeError::Configuration(_))
        ));
    }
}
