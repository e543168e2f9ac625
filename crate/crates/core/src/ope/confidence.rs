//! Confidence intervals from per-trajectory estimator values.
//!
//! Radii around the sample mean:
//!
//! ```text
//! hoeffding            J_max √(ln(1/α) / 2n)
//! empirical bernstein  7 J_max ln(2/α) / 3(n−1) + √(2 V̂ ln(2/α) / (n−1))
//! ttest                t_{1−α, n−1} σ̂ / √n
//! ```
//!
//! `V̂` and `σ̂` use the `n − 1` denominator. The bootstrap interval is the
//! `(α/2, 1−α/2)` percentile range of resampled means.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::ope::OpeInputs;
use crate::rng::rng_from_seed;
use crate::stats::{mean, sample_std, sample_variance, sorted_quantile, t_quantile};

pub const DEFAULT_BOOTSTRAP_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceMethod {
    Hoeffding,
    EmpiricalBernstein,
    Ttest,
    Bootstrap,
}

impl ConfidenceMethod {
    pub fn name(self) -> &'static str {
        match self {
            ConfidenceMethod::Hoeffding => "hoeffding",
            ConfidenceMethod::EmpiricalBernstein => "empirical_bernstein",
            ConfidenceMethod::Ttest => "ttest",
            ConfidenceMethod::Bootstrap => "bootstrap",
        }
    }
}

/// Range bound used by the Hoeffding and Bernstein radii.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JMax {
    /// Largest absolute per-trajectory value.
    DataMax,
    /// A caller-supplied bound, e.g. `r_max · Σγ^t · max cumulative weight`.
    Fixed { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    pub method: ConfidenceMethod,
}

/// `r_max · Σγ^t · max_{i,t} w_{0:t}`, a bound that holds for every
/// importance-weighted per-trajectory value in `inputs`.
pub fn analytic_j_max(inputs: &OpeInputs<'_>, r_max: f64) -> f64 {
    let w = inputs.cumulative_weights().iter().copied().fold(0.0, f64::max);
    r_max.abs() * inputs.discounts().iter().sum::<f64>() * w
}

pub fn hoeffding_radius(j_max: f64, n: usize, alpha: f64) -> f64 {
    j_max * ((1.0 / alpha).ln() / (2.0 * n as f64)).sqrt()
}

pub fn bernstein_radius(j_max: f64, variance: f64, n: usize, alpha: f64) -> f64 {
    let m = (n - 1) as f64;
    let l = (2.0 / alpha).ln();
    7.0 * j_max * l / (3.0 * m) + (2.0 * variance * l / m).sqrt()
}

pub fn ttest_radius(std: f64, n: usize, alpha: f64) -> f64 {
    t_quantile(1.0 - alpha, (n - 1) as f64) * std / (n as f64).sqrt()
}

pub fn confidence_interval(
    values: &[f64],
    method: ConfidenceMethod,
    alpha: f64,
    j_max: JMax,
    bootstrap_b: usize,
    seed: u64,
) -> Result<ConfidenceInterval> {
    let n = values.len();
    if n < 2 {
        return arg_err("confidence intervals need at least 2 values");
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return arg_err(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    let bound = match j_max {
        JMax::DataMax => values.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
        JMax::Fixed { value } if value >= 0.0 && value.is_finite() => value,
        JMax::Fixed { value } => return arg_err(format!("J_max must be finite and nonnegative, got {value}")),
    };
    let mu = mean(values);
    let (lower, upper) = match method {
        ConfidenceMethod::Hoeffding => {
            let r = hoeffding_radius(bound, n, alpha);
            (mu - r, mu + r)
        }
        ConfidenceMethod::EmpiricalBernstein => {
            let r = bernstein_radius(bound, sample_variance(values), n, alpha);
            (mu - r, mu + r)
        }
        ConfidenceMethod::Ttest => {
            let r = ttest_radius(sample_std(values), n, alpha);
            (mu - r, mu + r)
        }
        ConfidenceMethod::Bootstrap => {
            if bootstrap_b < 2 {
                return arg_err("bootstrap needs at least 2 resamples");
            }
            let mut rng = rng_from_seed(seed);
            let mut means: Vec<f64> = (0..bootstrap_b)
                .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
                .collect();
            means.sort_by(f64::total_cmp);
            (sorted_quantile(&means, alpha / 2.0), sorted_quantile(&means, 1.0 - alpha / 2.0))
        }
    };
    Ok(ConfidenceInterval {
        mean: mu,
        lower,
        upper,
        alpha,
        method,
    })
}
