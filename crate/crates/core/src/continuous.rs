//! Finite-state MDPs with a one-dimensional continuous action.
//!
//! The mean reward `r(s, a)` interpolates linearly between per-state values
//! at shared action knots. Transitions depend on which of `n_bins`
//! equal-width action bins contains `a`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, OpeError, Result};
use crate::ope::kernels::{kernel_smoothed_weight, simpson, Kernel, SIMPSON_NODES};
use crate::ope::PointEstimate;
use crate::rng::{rng_from_seed, sample_categorical};
use crate::stats::{normal_cdf, normal_quantile};

const ROW_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousActionMdpSpec {
    pub n_states: usize,
    pub action_low: f64,
    pub action_high: f64,
    /// Increasing knots; the first and last equal the action bounds.
    pub reward_knots: Vec<f64>,
    /// `reward_values[s][k]` is `r(s, reward_knots[k])`.
    pub reward_values: Vec<Vec<f64>>,
    /// `transition[s][bin][s']`.
    pub transition: Vec<Vec<Vec<f64>>>,
    pub initial_dist: Vec<f64>,
    pub horizon: usize,
    pub discount: f64,
}

fn check_row(p: &[f64], what: &str) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > ROW_TOL {
        return arg_err(format!("{what} is not a probability vector"));
    }
    Ok(())
}

impl ContinuousActionMdpSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.action_low < self.action_high) {
            return arg_err("action_low must be below action_high");
        }
        if self.horizon == 0 || !(self.discount > 0.0 && self.discount <= 1.0) {
            return arg_err("horizon must be positive and discount in (0, 1]");
        }
        let k = &self.reward_knots;
        if k.len() < 2 || k[0] != self.action_low || k[k.len() - 1] != self.action_high || k.windows(2).any(|w| w[0] >= w[1]) {
            return arg_err("reward knots must increase from action_low to action_high");
        }
        if self.reward_values.len() != self.n_states
            || self.reward_values.iter().any(|r| r.len() != k.len())
            || self.transition.len() != self.n_states
            || self.initial_dist.len() != self.n_states
        {
            return Err(OpeError::DimensionMismatch("continuous MDP tables".into()));
        }
        let bins = self.n_bins();
        for (s, rows) in self.transition.iter().enumerate() {
            if rows.len() != bins || bins == 0 {
                return Err(OpeError::DimensionMismatch(format!("transition bins at state {s}")));
            }
            for (b, row) in rows.iter().enumerate() {
                if row.len() != self.n_states {
                    return Err(OpeError::DimensionMismatch(format!("transition[{s}][{b}]")));
                }
                check_row(row, &format!("transition[{s}][{b}]"))?;
            }
        }
        check_row(&self.initial_dist, "initial_dist")
    }

    pub fn n_bins(&self) -> usize {
        self.transition.first().map_or(0, Vec::len)
    }

    pub fn bin(&self, a: f64) -> usize {
        let width = (self.action_high - self.action_low) / self.n_bins() as f64;
        (((a - self.action_low) / width) as usize).min(self.n_bins() - 1)
    }

    pub fn reward(&self, s: usize, a: f64) -> f64 {
        let k = &self.reward_knots;
        let v = &self.reward_values[s];
        let j = k.partition_point(|&x| x <= a).clamp(1, k.len() - 1);
        let f = (a - k[j - 1]) / (k[j] - k[j - 1]);
        v[j - 1] + f * (v[j] - v[j - 1])
    }

    /// Points where the reward or transition changes form.
    fn breakpoints(&self) -> Vec<f64> {
        let width = (self.action_high - self.action_low) / self.n_bins() as f64;
        let mut pts: Vec<f64> = self.reward_knots.clone();
        pts.extend((1..self.n_bins()).map(|b| self.action_low + b as f64 * width));
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// Two-state example: reward peaks at a state-specific action; the upper
    /// half of the action range moves to state 1.
    pub fn two_state_example(horizon: usize, discount: f64) -> Self {
        Self {
            n_states: 2,
            action_low: -1.0,
            action_high: 1.0,
            reward_knots: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            reward_values: vec![vec![0.0, 1.0, 0.5, 0.0, 0.0], vec![0.0, 0.0, 0.5, 1.0, 0.2]],
            transition: vec![
                vec![vec![0.9, 0.1], vec![0.2, 0.8]],
                vec![vec![0.7, 0.3], vec![0.1, 0.9]],
            ],
            initial_dist: vec![0.5, 0.5],
            horizon,
            discount,
        }
    }
}

/// Per-state Gaussian truncated to the action interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub name: String,
    pub mean_per_state: Vec<f64>,
    pub stddev: f64,
    pub low: f64,
    pub high: f64,
}

impl GaussianPolicy {
    pub fn new(name: impl Into<String>, mean_per_state: Vec<f64>, stddev: f64, low: f64, high: f64) -> Result<Self> {
        if !(stddev > 0.0) {
            return arg_err("stddev must be positive");
        }
        if !(low < high) {
            return arg_err("truncation interval is empty");
        }
        Ok(Self {
            name: name.into(),
            mean_per_state,
            stddev,
            low,
            high,
        })
    }

    fn mass(&self, s: usize) -> (f64, f64) {
        let mu = self.mean_per_state[s];
        let lo = normal_cdf((self.low - mu) / self.stddev);
        let hi = normal_cdf((self.high - mu) / self.stddev);
        (lo, hi - lo)
    }

    pub fn density(&self, s: usize, a: f64) -> f64 {
        if a < self.low || a > self.high {
            return 0.0;
        }
        let z = (a - self.mean_per_state[s]) / self.stddev;
        let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        phi / (self.stddev * self.mass(s).1)
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> f64 {
        let (lo, width) = self.mass(s);
        let u: f64 = rng.random();
        let p = (lo + u * width).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
        (self.mean_per_state[s] + self.stddev * normal_quantile(p)).clamp(self.low, self.high)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuousStep {
    pub state: usize,
    pub action: f64,
    pub reward: f64,
    pub next_state: usize,
    /// Behavior density at the logged action.
    pub behavior_propensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousDataset {
    pub steps: Vec<ContinuousStep>,
    pub n_trajectories: usize,
    pub horizon: usize,
    pub discount: f64,
    pub behavior_policy_name: String,
    pub seed: u64,
}

impl ContinuousDataset {
    pub fn trajectories(&self) -> impl Iterator<Item = &[ContinuousStep]> {
        self.steps.chunks_exact(self.horizon)
    }
}

pub fn collect_continuous(
    mdp: &ContinuousActionMdpSpec,
    behavior: &GaussianPolicy,
    n_trajectories: usize,
    seed: u64,
) -> Result<ContinuousDataset> {
    mdp.validate()?;
    if n_trajectories < 1 {
        return arg_err("n_trajectories must be at least 1");
    }
    if behavior.mean_per_state.len() != mdp.n_states {
        return Err(OpeError::DimensionMismatch("behavior policy states".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut steps = Vec::with_capacity(n_trajectories * mdp.horizon);
    for _ in 0..n_trajectories {
        let mut s = sample_categorical(&mdp.initial_dist, &mut rng);
        for _ in 0..mdp.horizon {
            let a = behavior.sample(s, &mut rng);
            let s2 = sample_categorical(&mdp.transition[s][mdp.bin(a)], &mut rng);
            steps.push(ContinuousStep {
                state: s,
                action: a,
                reward: mdp.reward(s, a),
                next_state: s2,
                behavior_propensity: behavior.density(s, a),
            });
            s = s2;
        }
    }
    Ok(ContinuousDataset {
        steps,
        n_trajectories,
        horizon: mdp.horizon,
        discount: mdp.discount,
        behavior_policy_name: behavior.name.clone(),
        seed,
    })
}

/// J(π) by backward induction, integrating over actions piecewise.
pub fn continuous_policy_value(mdp: &ContinuousActionMdpSpec, policy: &GaussianPolicy) -> Result<f64> {
    mdp.validate()?;
    let pts = mdp.breakpoints();
    let mut v_next = vec![0.0; mdp.n_states];
    for _ in 0..mdp.horizon {
        let v: Vec<f64> = (0..mdp.n_states)
            .map(|s| {
                pts.windows(2)
                    .map(|w| {
                        let integrand = |a: f64| {
                            let row = &mdp.transition[s][mdp.bin(0.5 * (w[0] + w[1]))];
                            let future: f64 = row.iter().zip(&v_next).map(|(p, v)| p * v).sum();
                            policy.density(s, a) * (mdp.reward(s, a) + mdp.discount * future)
                        };
                        simpson(integrand, w[0], w[1], SIMPSON_NODES)
                    })
                    .sum()
            })
            .collect();
        v_next = v;
    }
    Ok(mdp.initial_dist.iter().zip(&v_next).map(|(p, v)| p * v).sum())
}

/// Per-decision importance sampling with kernel-smoothed step weights.
pub fn estimate_kernel_pdis(
    ds: &ContinuousDataset,
    eval: &GaussianPolicy,
    bandwidth: f64,
    kernel: Kernel,
) -> Result<PointEstimate> {
    let range = (eval.low, eval.high);
    let mut per = Vec::with_capacity(ds.n_trajectories);
    for traj in ds.trajectories() {
        let (mut w, mut g, mut total) = (1.0, 1.0, 0.0);
        for st in traj {
            w *= kernel_smoothed_weight(
                |a| eval.density(st.state, a),
                st.action,
                st.behavior_propensity,
                bandwidth,
                kernel,
                range,
            )?;
            total += g * w * st.reward;
            g *= ds.discount;
        }
        per.push(total);
    }
    Ok(PointEstimate::from_contributions(format!("kernel_pdis_{kernel:?}").to_lowercase(), per))
}
