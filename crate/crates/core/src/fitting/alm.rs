//! Augmented-Lagrangian (DICE family) joint learning of w(s,a) and Q(s,a).
//!
//! Tabular objective over the normalized tuple statistics:
//!
//! ```text
//! L(w, Q, λ) = Σ_s init(s) V_Q(s) + λ
//!            + Σ_k c_k w(s_k,a_k) (α_r r_k + γ·[t_k < T-1]·V_Q(s'_k) − Q(s_k,a_k) − λ)
//!            + α_Q Σ_k c_k Q(s_k,a_k)² − α_w Σ_k c_k w(s_k,a_k)²
//! ```
//!
//! with `V_Q(s) = Σ_a π(a|s) Q(s,a)` and `init(s)` the fraction of
//! trajectories starting in `s` divided by `Σ_t γ^t`. The last step of every
//! episode does not bootstrap, which keeps `w ≡ 1` stationary when the
//! evaluation and behavior policies coincide.

use serde::{Deserialize, Serialize};

use super::marginal::{MarginalWeights, WeightSource};
use super::{check_finite, policy_state_values, FitLog, FittedQ, TupleStats};
use crate::data::LoggedDataset;
use crate::error::{arg_err, OpeError, Result};
use crate::mdp::{QFunction, QTable};
use crate::policy::TabularPolicy;

const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaMode {
    Fixed { value: f64 },
    Optimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlmPreset {
    BestDice,
    DualDice,
    GenDice,
    GradientDice,
    AlgaeDice,
    MqlMwl,
}

impl AlmPreset {
    pub const ALL: [AlmPreset; 6] = [
        AlmPreset::BestDice,
        AlmPreset::DualDice,
        AlmPreset::GenDice,
        AlmPreset::GradientDice,
        AlmPreset::AlgaeDice,
        AlmPreset::MqlMwl,
    ];

    pub fn hyperparams(self) -> AlmHyperparams {
        use AlmPreset::*;
        let (alpha_w, alpha_q, alpha_r, lambda_mode) = match self {
            BestDice => (1.0, 0.0, 1.0, LambdaMode::Optimize),
            DualDice => (0.0, 1.0, 0.0, LambdaMode::Fixed { value: 0.0 }),
            GenDice | GradientDice => (0.0, 1.0, 0.0, LambdaMode::Optimize),
            AlgaeDice => (1.0, 0.0, 1.0, LambdaMode::Fixed { value: 0.0 }),
            MqlMwl => (0.0, 0.0, 0.0, LambdaMode::Fixed { value: 0.0 }),
        };
        AlmHyperparams {
            alpha_w,
            alpha_q,
            alpha_r,
            lambda_mode,
            ..AlmHyperparams::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlmHyperparams {
    pub alpha_w: f64,
    pub alpha_q: f64,
    pub alpha_r: f64,
    pub lambda_mode: LambdaMode,
    pub lr_w: f64,
    pub lr_q: f64,
    pub lr_lambda: f64,
    pub max_iters: usize,
    pub tolerance: f64,
}

impl Default for AlmHyperparams {
    fn default() -> Self {
        Self {
            alpha_w: 1.0,
            alpha_q: 0.0,
            alpha_r: 1.0,
            lambda_mode: LambdaMode::Optimize,
            lr_w: 0.05,
            lr_q: 0.05,
            lr_lambda: 0.01,
            max_iters: 20_000,
            tolerance: 1e-5,
        }
    }
}

impl AlmHyperparams {
    fn validate(&self) -> Result<()> {
        if !(self.alpha_w >= 0.0 && self.alpha_q >= 0.0) {
            return arg_err("alpha_w and alpha_q must be nonnegative");
        }
        if self.alpha_r != 0.0 && self.alpha_r != 1.0 {
            return arg_err("alpha_r must be 0 or 1");
        }
        if !(self.lr_w > 0.0 && self.lr_q > 0.0 && self.lr_lambda > 0.0 && self.tolerance > 0.0) {
            return arg_err("learning rates and tolerance must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AlmGradient {
    pub w: Vec<f64>,
    pub q: Vec<f64>,
    pub lambda: f64,
}

/// The empirical objective of one dataset and evaluation policy.
#[derive(Debug, Clone)]
pub struct AlmProblem {
    stats: TupleStats,
    policy: TabularPolicy,
    hp: AlmHyperparams,
}

impl AlmProblem {
    pub fn new(ds: &LoggedDataset, policy: &TabularPolicy, hp: AlmHyperparams) -> Result<Self> {
        hp.validate()?;
        policy.check_dims(ds.n_states, ds.n_actions)?;
        if ds.discount >= 1.0 {
            return arg_err("ALM weight learning needs discount < 1");
        }
        Ok(Self {
            stats: TupleStats::new(ds)?,
            policy: policy.clone(),
            hp,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.stats.cells()
    }

    pub fn objective(&self, w: &[f64], q: &[f64], lambda: f64) -> f64 {
        let st = &self.stats;
        let (na, g) = (st.n_actions, st.discount);
        let v = policy_state_values(&self.policy, q, na);
        let mut l = st.init.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + lambda;
        for x in 0..st.cells() {
            let c = st.weight[x];
            let boot: f64 = st.next_nonterminal[x].iter().zip(&v).map(|(n, v)| n * v).sum();
            l += w[x] * (self.hp.alpha_r * st.reward[x] + g * boot - c * q[x] - c * lambda);
            l += self.hp.alpha_q * c * q[x] * q[x] - self.hp.alpha_w * c * w[x] * w[x];
        }
        l
    }

    pub fn gradient(&self, w: &[f64], q: &[f64], lambda: f64) -> AlmGradient {
        let st = &self.stats;
        let (ns, na, g) = (st.n_states, st.n_actions, st.discount);
        let v = policy_state_values(&self.policy, q, na);
        // inflow[s'] = init(s') + γ Σ_x w(x) next_nonterminal[x][s']
        let mut inflow = st.init.clone();
        let mut gw = vec![0.0; st.cells()];
        let mut gq = vec![0.0; st.cells()];
        let mut mass = 0.0;
        for x in 0..st.cells() {
            let c = st.weight[x];
            let boot: f64 = st.next_nonterminal[x].iter().zip(&v).map(|(n, v)| n * v).sum();
            gw[x] = self.hp.alpha_r * st.reward[x] + g * boot - c * q[x] - c * lambda
                - 2.0 * self.hp.alpha_w * c * w[x];
            for (f, n) in inflow.iter_mut().zip(&st.next_nonterminal[x]) {
                *f += g * w[x] * n;
            }
            gq[x] = -w[x] * c + 2.0 * self.hp.alpha_q * c * q[x];
            mass += c * w[x];
        }
        for s in 0..ns {
            for a in 0..na {
                gq[s * na + a] += inflow[s] * self.policy.prob(s, a);
            }
        }
        AlmGradient {
            w: gw,
            q: gq,
            lambda: 1.0 - mass,
        }
    }

    /// Projected simultaneous gradient ascent on w, descent on Q and λ.
    pub fn solve(&self) -> Result<AlmFit> {
        let cells = self.n_cells();
        let mut w = vec![1.0; cells];
        let mut q = vec![0.0; cells];
        let optimize_lambda = matches!(self.hp.lambda_mode, LambdaMode::Optimize);
        let mut lambda = match self.hp.lambda_mode {
            LambdaMode::Fixed { value } => value,
            LambdaMode::Optimize => 0.0,
        };
        let mut residual = f64::INFINITY;
        let mut iterations = 0;
        let mut converged = false;
        while iterations < self.hp.max_iters {
            let grad = self.gradient(&w, &q, lambda);
            check_finite(&grad.w, "ALM weight gradient")?;
            check_finite(&grad.q, "ALM value gradient")?;
            residual = w
                .iter()
                .zip(&grad.w)
                .map(|(&wi, &gi)| if wi <= 0.0 && gi < 0.0 { 0.0 } else { gi.abs() })
                .chain(grad.q.iter().map(|g| g.abs()))
                .chain(optimize_lambda.then_some(grad.lambda.abs()))
                .fold(0.0, f64::max);
            if residual < self.hp.tolerance {
                converged = true;
                break;
            }
            for (wi, gi) in w.iter_mut().zip(&grad.w) {
                *wi = (*wi + self.hp.lr_w * gi).max(0.0);
            }
            for (qi, gi) in q.iter_mut().zip(&grad.q) {
                *qi -= self.hp.lr_q * gi;
            }
            if optimize_lambda {
                lambda -= self.hp.lr_lambda * grad.lambda;
            }
            iterations += 1;
            let l = self.objective(&w, &q, lambda);
            if l.is_nan() {
                return Err(OpeError::Divergence("ALM objective is NaN".into()));
            }
            if l.abs() > DIVERGENCE_LIMIT {
                return Err(OpeError::Divergence(format!(
                    "ALM objective reached {l:e} after {iterations} iterations"
                )));
            }
        }
        let objective = self.objective(&w, &q, lambda);
        let fit_log = FitLog {
            iterations,
            residual,
            converged,
        };
        Ok(AlmFit {
            weights: weights_from_table(&self.stats, w, WeightSource::Alm),
            fitted_q: FittedQ {
                q: QFunction::Stationary(table(&self.stats, q)),
                fit_log: fit_log.clone(),
            },
            lambda,
            objective,
            fit_log,
        })
    }
}

fn table(st: &TupleStats, values: Vec<f64>) -> QTable {
    QTable {
        n_states: st.n_states,
        n_actions: st.n_actions,
        values,
    }
}

/// ρ(s) = Σ_a ĉ(s,a) w(s,a) / ĉ(s); states absent from the data keep 1.
pub(crate) fn weights_from_table(st: &TupleStats, w: Vec<f64>, source: WeightSource) -> MarginalWeights {
    let na = st.n_actions;
    let rho_state = st
        .state_weight()
        .iter()
        .enumerate()
        .map(|(s, &cs)| {
            if cs > 0.0 {
                (0..na).map(|a| st.weight[s * na + a] * w[s * na + a]).sum::<f64>() / cs
            } else {
                1.0
            }
        })
        .collect();
    MarginalWeights {
        rho_state,
        rho_state_action: table(st, w),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlmFit {
    pub weights: MarginalWeights,
    pub fitted_q: FittedQ,
    pub lambda: f64,
    pub objective: f64,
    pub fit_log: FitLog,
}

pub fn fit_alm(ds: &LoggedDataset, policy: &TabularPolicy, hp: &AlmHyperparams) -> Result<AlmFit> {
    AlmProblem::new(ds, policy, *hp)?.solve()
}
