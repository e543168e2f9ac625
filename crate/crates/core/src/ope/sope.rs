//! Interpolation between per-decision and marginal importance weights.
//!
//! For `t < k` the weight is `w_{0:t}`. Otherwise it is
//! `ρ(s_{t-k}, a_{t-k}) · Π_{t'=t-k+1..t} w_{t'}` at the state-action level and
//! `ρ(s_{t-k}) · Π_{t'=t-k..t} w_{t'}` at the state level.

use serde::{Deserialize, Serialize};

use super::marginal::{marginal_estimate, MarginalVariant};
use super::{OpeInputs, PointEstimate};
use crate::error::{arg_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SopeLevel {
    State,
    StateAction,
}

impl SopeLevel {
    pub fn tag(self) -> &'static str {
        match self {
            SopeLevel::State => "sm",
            SopeLevel::StateAction => "sam",
        }
    }
}

/// Trajectory-major weight array of the interpolated schedule.
pub fn sope_weight_schedule(inputs: &OpeInputs<'_>, k_recent: usize, level: SopeLevel) -> Result<Vec<f64>> {
    let h = inputs.horizon();
    if k_recent > h {
        return arg_err(format!("k_recent = {k_recent} exceeds the horizon {h}"));
    }
    let rho = if k_recent < h {
        Some(inputs.require_weights("sope")?)
    } else {
        None
    };
    let ds = inputs.dataset;
    let mut out = Vec::with_capacity(ds.steps.len());
    for i in 0..inputs.n() {
        for t in 0..h {
            if t < k_recent {
                out.push(inputs.cumulative(i, t));
                continue;
            }
            let rho = rho.expect("weights present when k_recent < horizon");
            let anchor = ds.step(i, t - k_recent);
            let w = match level {
                SopeLevel::StateAction => {
                    let tail = (t + 1 - k_recent..=t).fold(1.0, |acc, u| acc * inputs.ratio(i, u));
                    rho.state_action(anchor.state, anchor.action) * tail
                }
                SopeLevel::State => {
                    let tail = (t - k_recent..=t).fold(1.0, |acc, u| acc * inputs.ratio(i, u));
                    rho.state(anchor.state) * tail
                }
            };
            out.push(w);
        }
    }
    Ok(out)
}

pub fn estimate_sope(
    inputs: &OpeInputs<'_>,
    k_recent: usize,
    level: SopeLevel,
    variant: MarginalVariant,
) -> Result<PointEstimate> {
    let weights = sope_weight_schedule(inputs, k_recent, level)?;
    let v = match variant {
        MarginalVariant::Is => "is",
        MarginalVariant::Dr => "dr",
    };
    let name = format!("sope_{}_{v}_k{k_recent}", level.tag());
    marginal_estimate(inputs, weights, variant, false, name)
}
