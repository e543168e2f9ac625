//! Kernel smoothing of importance weights for continuous actions.
//!
//! The smoothed weight at a logged action `a_t` is
//! `∫ π(a|s_t)/π_b(a_t|s_t) · K((a − a_t)/h)/h da` over the action interval,
//! evaluated with composite Simpson on 1025 nodes over the part of the
//! interval where the scaled kernel is nonzero.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};

pub const SIMPSON_NODES: usize = 1025;
/// Half-width, in bandwidths, over which the Gaussian kernel is integrated.
const GAUSSIAN_REACH: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Gaussian,
    Epanechnikov,
    Triangular,
    Cosine,
    Uniform,
}

impl Kernel {
    pub const ALL: [Kernel; 5] = [
        Kernel::Gaussian,
        Kernel::Epanechnikov,
        Kernel::Triangular,
        Kernel::Cosine,
        Kernel::Uniform,
    ];

    pub fn eval(self, x: f64) -> f64 {
        use std::f64::consts::PI;
        let inside = x.abs() <= 1.0;
        match self {
            Kernel::Gaussian => (-0.5 * x * x).exp() / (2.0 * PI).sqrt(),
            Kernel::Epanechnikov if inside => 0.75 * (1.0 - x * x),
            Kernel::Triangular if inside => 1.0 - x.abs(),
            Kernel::Cosine if inside => PI / 4.0 * (PI / 2.0 * x).cos(),
            Kernel::Uniform if inside => 0.5,
            _ => 0.0,
        }
    }

    /// Half-width of the region integrated over, in units of the bandwidth.
    pub fn reach(self) -> f64 {
        match self {
            Kernel::Gaussian => GAUSSIAN_REACH,
            _ => 1.0,
        }
    }
}

/// Composite Simpson rule with `nodes` (odd, ≥ 3) equally spaced points.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, nodes: usize) -> f64 {
    assert!(nodes >= 3 && nodes % 2 == 1, "Simpson needs an odd node count");
    if b <= a {
        return 0.0;
    }
    let m = nodes - 1;
    let h = (b - a) / m as f64;
    let mut acc = f(a) + f(b);
    for i in 1..m {
        let coef = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += coef * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

pub fn kernel_smoothed_weight(
    eval_density: impl Fn(f64) -> f64,
    logged_action: f64,
    behavior_density: f64,
    bandwidth: f64,
    kernel: Kernel,
    action_range: (f64, f64),
) -> Result<f64> {
    if !(bandwidth > 0.0) {
        return arg_err(format!("bandwidth must be positive, got {bandwidth}"));
    }
    if !(behavior_density > 0.0) {
        return arg_err(format!("behavior density must be positive, got {behavior_density}"));
    }
    // Integrate in kernel units so the support edges land exactly on ±reach.
    let r = kernel.reach();
    let lo = ((action_range.0 - logged_action) / bandwidth).max(-r);
    let hi = ((action_range.1 - logged_action) / bandwidth).min(r);
    let integrand = |u: f64| eval_density(logged_action + bandwidth * u) * kernel.eval(u);
    Ok(simpson(integrand, lo, hi, SIMPSON_NODES) / behavior_density)
}
