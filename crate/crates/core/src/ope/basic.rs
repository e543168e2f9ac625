//! DM, TIS, PDIS and DR with their self-normalized forms.

use super::{normalize_per_step, state_value, OpeInputs, PointEstimate};
use crate::error::{OpeError, Result};

/// Average of `V̂_0(s_0)` over logged initial states.
pub fn estimate_dm(inputs: &OpeInputs<'_>) -> Result<PointEstimate> {
    let q = inputs.require_q("dm")?.q.at(0);
    let per = inputs
        .dataset
        .trajectories()
        .map(|traj| state_value(inputs.eval_policy, q, traj[0].state))
        .collect();
    Ok(PointEstimate::from_contributions("dm", per))
}

/// Trajectory-wise importance sampling.
pub fn estimate_tis(inputs: &OpeInputs<'_>, self_normalized: bool) -> Result<PointEstimate> {
    let n = inputs.n() as f64;
    let mut weights = inputs.trajectory_weights();
    if self_normalized {
        let total: f64 = weights.iter().sum();
        if total == 0.0 {
            return Err(OpeError::AllZeroWeights("sntis: every trajectory weight is zero".into()));
        }
        weights.iter_mut().for_each(|w| *w = n * *w / total);
    }
    let per = inputs
        .dataset
        .discounted_returns()
        .iter()
        .zip(&weights)
        .map(|(g, w)| w * g)
        .collect();
    Ok(PointEstimate::from_contributions(if self_normalized { "sntis" } else { "tis" }, per))
}

/// `Σ_t γ^t (u_t r_t)` per trajectory for a trajectory-major weight array `u`.
pub(crate) fn weighted_rewards(inputs: &OpeInputs<'_>, weights: &[f64]) -> Vec<f64> {
    let h = inputs.horizon();
    let g = inputs.discounts();
    inputs
        .dataset
        .trajectories()
        .enumerate()
        .map(|(i, traj)| {
            traj.iter()
                .enumerate()
                .map(|(t, st)| g[t] * (weights[i * h + t] * st.reward))
                .sum()
        })
        .collect()
}

/// Scales per-step-normalized weights by `n` so trajectory contributions
/// average to the estimate.
pub(crate) fn sn_weights(inputs: &OpeInputs<'_>, weights: &[f64], what: &str) -> Result<Vec<f64>> {
    let n = inputs.n();
    let normalized = normalize_per_step(weights, n, inputs.horizon(), what)?;
    Ok(normalized.into_iter().map(|w| n as f64 * w).collect())
}

/// Per-decision importance sampling.
pub fn estimate_pdis(inputs: &OpeInputs<'_>, self_normalized: bool) -> Result<PointEstimate> {
    let name = if self_normalized { "snpdis" } else { "pdis" };
    let per = if self_normalized {
        let w = sn_weights(inputs, inputs.cumulative_weights(), name)?;
        weighted_rewards(inputs, &w)
    } else {
        weighted_rewards(inputs, inputs.cumulative_weights())
    };
    Ok(PointEstimate::from_contributions(name, per))
}

/// Per-decision doubly robust estimator with `w_{0:-1} = 1`.
pub fn estimate_dr(inputs: &OpeInputs<'_>, self_normalized: bool) -> Result<PointEstimate> {
    let name = if self_normalized { "sndr" } else { "dr" };
    let fitted = inputs.require_q(name)?;
    let (n, h) = (inputs.n(), inputs.horizon());
    let current: Vec<f64>;
    let previous: Vec<f64>;
    // w_{0:t-1}, trajectory-major
    let shifted: Vec<f64> = (0..n * h)
        .map(|k| if k % h == 0 { 1.0 } else { inputs.cumulative_weights()[k - 1] })
        .collect();
    if self_normalized {
        current = sn_weights(inputs, inputs.cumulative_weights(), name)?;
        previous = sn_weights(inputs, &shifted, name)?;
    } else {
        current = inputs.cumulative_weights().to_vec();
        previous = shifted;
    }
    let g = inputs.discounts();
    let per = inputs
        .dataset
        .trajectories()
        .enumerate()
        .map(|(i, traj)| {
            traj.iter()
                .enumerate()
                .map(|(t, st)| {
                    let q = fitted.q.at(t);
                    let k = i * h + t;
                    let v = state_value(inputs.eval_policy, q, st.state);
                    g[t] * (current[k] * (st.reward - q.get(st.state, st.action)) + previous[k] * v)
                })
                .sum()
        })
        .collect();
    Ok(PointEstimate::from_contributions(name, per))
}
