//! Kernel minimax learners: weights (MWL) and values (MQL).
//!
//! State-action pairs are embedded as one-hot vectors under a Gaussian
//! kernel, so `K(x, y) = 1` when `x = y` and `exp(-1/h²)` otherwise. Both
//! losses are quadratic in the tabular parameters; pair sums over logged
//! tuples are aggregated per cell and the diagonal `k = l` pairs removed to
//! obtain the U-statistic. Minimization is accelerated projected gradient
//! descent with step `1/L`, `L` the largest Hessian eigenvalue.
//!
//! MWL minimizes `‖g_w‖²_K` where
//! `g_w = Σ_k c_k w(x_k) (φ(x_k) − γ·[t_k < T-1]·E_{a'~π} φ(s'_k, a')) − Σ_s init(s) E_{a~π} φ(s, a)`.
//! MQL minimizes `Σ_{k≠l} c_k c_l δ_k K(x_k, x_l) δ_l` with the TD residual
//! `δ_k = r_k + γ V_Q(s'_k) − Q(x_k)`, always bootstrapping.

use serde::{Deserialize, Serialize};

use super::alm::weights_from_table;
use super::marginal::{MarginalWeights, WeightSource};
use super::{FitLog, FittedQ, TupleStats};
use crate::data::LoggedDataset;
use crate::error::{arg_err, OpeError, Result};
use crate::mdp::{QFunction, QTable};
use crate::policy::TabularPolicy;

/// Largest `n · T` accepted by the pairwise learners.
pub const MAX_KERNEL_TUPLES: usize = 5000;
const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelOptions {
    pub bandwidth: f64,
    pub max_iters: usize,
    /// Stop when an iteration moves no parameter by more than this.
    pub tolerance: f64,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self {
            bandwidth: 1.0,
            max_iters: 200_000,
            tolerance: 1e-12,
        }
    }
}

type Matrix = Vec<Vec<f64>>;

fn kernel_matrix(n: usize, bandwidth: f64) -> Matrix {
    let off = (-1.0 / (bandwidth * bandwidth)).exp();
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { off }).collect())
        .collect()
}

fn mat_vec(m: &Matrix, v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Aᵀ K A for square A.
fn congruence(a: &Matrix, k: &Matrix) -> Matrix {
    let n = a.len();
    let ka: Matrix = (0..n)
        .map(|i| (0..n).map(|j| (0..n).map(|l| k[i][l] * a[l][j]).sum()).collect())
        .collect();
    (0..n)
        .map(|i| (0..n).map(|j| (0..n).map(|l| a[l][i] * ka[l][j]).sum()).collect())
        .collect()
}

/// Aᵀ v.
fn transpose_vec(a: &Matrix, v: &[f64]) -> Vec<f64> {
    let n = a.first().map_or(0, Vec::len);
    (0..n).map(|j| a.iter().zip(v).map(|(row, x)| row[j] * x).sum()).collect()
}

/// `½ xᵀ H x + gᵀ x + c0`.
struct Quadratic {
    h: Matrix,
    g: Vec<f64>,
    c0: f64,
}

impl Quadratic {
    fn value(&self, x: &[f64]) -> f64 {
        0.5 * dot(x, &mat_vec(&self.h, x)) + dot(&self.g, x) + self.c0
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        mat_vec(&self.h, x).iter().zip(&self.g).map(|(a, b)| a + b).collect()
    }

    /// Largest |eigenvalue| of H by power iteration.
    fn lipschitz(&self) -> f64 {
        let n = self.g.len();
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.01 * i as f64).collect();
        let mut est = 0.0;
        for _ in 0..10_000 {
            let hv = mat_vec(&self.h, &v);
            let norm = dot(&hv, &hv).sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            let next = norm / dot(&v, &v).sqrt();
            v = hv.iter().map(|x| x / norm).collect();
            if (next - est).abs() <= 1e-12 * next {
                return next;
            }
            est = next;
        }
        est
    }

    fn minimize(&self, x0: Vec<f64>, nonneg: bool, opts: &KernelOptions) -> Result<(Vec<f64>, FitLog)> {
        let lip = self.lipschitz();
        if lip == 0.0 {
            return Ok((x0, FitLog { iterations: 0, residual: 0.0, converged: true }));
        }
        let step = 1.0 / lip;
        let project = |v: f64| if nonneg { v.max(0.0) } else { v };
        let mut x = x0.clone();
        let mut y = x0;
        let mut momentum = 1.0_f64;
        let mut f_prev = self.value(&x);
        let mut residual = f64::INFINITY;
        for it in 1..=opts.max_iters {
            let g = self.grad(&y);
            let x_new: Vec<f64> = y.iter().zip(&g).map(|(yi, gi)| project(yi - step * gi)).collect();
            if x_new.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
                return Err(OpeError::Divergence(format!("kernel learner diverged at iteration {it}")));
            }
            residual = x_new.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let f_new = self.value(&x_new);
            let m_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            if f_new > f_prev {
                // restart momentum from the last accepted point
                y = x.clone();
                momentum = 1.0;
                continue;
            }
            let beta = (momentum - 1.0) / m_next;
            y = x_new.iter().zip(&x).map(|(a, b)| project(a + beta * (a - b))).collect();
            x = x_new;
            momentum = m_next;
            f_prev = f_new;
            if residual < opts.tolerance {
                return Ok((x, FitLog { iterations: it, residual, converged: true }));
            }
        }
        Ok((x, FitLog { iterations: opts.max_iters, residual, converged: false }))
    }
}

fn prepare(ds: &LoggedDataset, policy: &TabularPolicy, opts: &KernelOptions) -> Result<TupleStats> {
    if !(opts.bandwidth > 0.0) {
        return arg_err("kernel bandwidth must be positive");
    }
    if ds.steps.len() > MAX_KERNEL_TUPLES {
        return arg_err(format!(
            "kernel learners accept at most {MAX_KERNEL_TUPLES} tuples, got {}; subsample the dataset",
            ds.steps.len()
        ));
    }
    policy.check_dims(ds.n_states, ds.n_actions)?;
    TupleStats::new(ds)
}

/// `Σ_{a'} π(a'|s') e_{(s',a')}` scaled by `scale`, added into `row`.
fn add_policy_row(row: &mut [f64], policy: &TabularPolicy, s: usize, na: usize, scale: f64) {
    for a in 0..na {
        row[s * na + a] += scale * policy.prob(s, a);
    }
}

fn mwl_problem(st: &TupleStats, policy: &TabularPolicy, k: &Matrix) -> Quadratic {
    let (ns, na, gamma) = (st.n_states, st.n_actions, st.discount);
    let n = st.cells();
    // (M w)(x) = c(x) w(x) − γ π(a_x|s_x) Σ_y w(y) next_nt[y][s_x]
    let mut m = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    for x in 0..n {
        let (s, a) = (x / na, x % na);
        m[x][x] += st.weight[x];
        let p = policy.prob(s, a);
        for y in 0..n {
            m[x][y] -= gamma * p * st.next_nonterminal[y][s];
        }
        b[x] = st.init[s] * p;
    }
    // diagonal pairs: Σ_k c_k² w(x_k)² h_kᵀ K h_k
    let mut diag = vec![0.0; n];
    for x in 0..n {
        for s2 in 0..ns {
            let [c2, _, _, c2_nt] = st.sq[x][s2];
            if c2 == 0.0 {
                continue;
            }
            let mut phi = vec![0.0; n];
            add_policy_row(&mut phi, policy, s2, na, 1.0);
            let kphi = mat_vec(k, &phi);
            diag[x] += c2 * k[x][x] - 2.0 * gamma * c2_nt * kphi[x] + gamma * gamma * c2_nt * dot(&phi, &kphi);
        }
    }
    let mut h = congruence(&m, k);
    for x in 0..n {
        for y in 0..n {
            h[x][y] *= 2.0;
        }
        h[x][x] -= 2.0 * diag[x];
    }
    let kb = mat_vec(k, &b);
    Quadratic {
        h,
        g: transpose_vec(&m, &kb).iter().map(|v| -2.0 * v).collect(),
        c0: dot(&b, &kb),
    }
}

fn mql_problem(st: &TupleStats, policy: &TabularPolicy, k: &Matrix) -> Quadratic {
    let (ns, na, gamma) = (st.n_states, st.n_actions, st.discount);
    let n = st.cells();
    // ε = r̄ + N Q, N[x][y] = γ next_all[x][s_y] π(a_y|s_y) − c(x) δ_xy
    let mut nmat = vec![vec![0.0; n]; n];
    for x in 0..n {
        for s2 in 0..ns {
            let w = st.next_all[x][s2];
            if w != 0.0 {
                add_policy_row(&mut nmat[x], policy, s2, na, gamma * w);
            }
        }
        nmat[x][x] -= st.weight[x];
    }
    let mut h = congruence(&nmat, k);
    for row in h.iter_mut() {
        row.iter_mut().for_each(|v| *v *= 2.0);
    }
    let kr = mat_vec(k, &st.reward);
    let mut g: Vec<f64> = transpose_vec(&nmat, &kr).iter().map(|v| 2.0 * v).collect();
    let mut c0 = dot(&st.reward, &kr);
    // diagonal pairs: Σ_k c_k² δ_k², δ_k = r_k + uᵀQ with u = γ π(·|s'_k) − e_{x_k}
    for x in 0..n {
        for s2 in 0..ns {
            let [c2, c2r, c2rr, _] = st.sq[x][s2];
            if c2 == 0.0 {
                continue;
            }
            let mut u = vec![0.0; n];
            add_policy_row(&mut u, policy, s2, na, gamma);
            u[x] -= 1.0;
            for i in 0..n {
                if u[i] == 0.0 {
                    continue;
                }
                for j in 0..n {
                    h[i][j] -= 2.0 * c2 * u[i] * u[j];
                }
                g[i] -= 2.0 * c2r * u[i];
            }
            c0 -= c2rr;
        }
    }
    Quadratic { h, g, c0 }
}

/// Minimum-kernel-discrepancy weights; returned with source `mwl`.
pub fn fit_mwl(ds: &LoggedDataset, policy: &TabularPolicy, opts: &KernelOptions) -> Result<(MarginalWeights, FitLog)> {
    let st = prepare(ds, policy, opts)?;
    let k = kernel_matrix(st.cells(), opts.bandwidth);
    let problem = mwl_problem(&st, policy, &k);
    let (w, log) = problem.minimize(vec![1.0; st.cells()], true, opts)?;
    Ok((weights_from_table(&st, w, WeightSource::Mwl), log))
}

/// Minimum-kernel-TD-residual stationary Q-function. Requires `γ < 1`.
pub fn fit_mql(ds: &LoggedDataset, policy: &TabularPolicy, opts: &KernelOptions) -> Result<FittedQ> {
    if ds.discount >= 1.0 {
        return arg_err("MQL needs discount < 1");
    }
    let st = prepare(ds, policy, opts)?;
    let k = kernel_matrix(st.cells(), opts.bandwidth);
    let problem = mql_problem(&st, policy, &k);
    let (q, fit_log) = problem.minimize(vec![0.0; st.cells()], false, opts)?;
    Ok(FittedQ {
        q: QFunction::Stationary(QTable {
            n_states: st.n_states,
            n_actions: st.n_actions,
            values: q,
        }),
        fit_log,
    })
}

/// Loss values at given parameters, exposed for tests.
#[doc(hidden)]
pub fn kernel_losses(
    ds: &LoggedDataset,
    policy: &TabularPolicy,
    bandwidth: f64,
    w: &[f64],
    q: &[f64],
) -> Result<(f64, f64)> {
    let opts = KernelOptions { bandwidth, ..KernelOptions::default() };
    let st = prepare(ds, policy, &opts)?;
    let k = kernel_matrix(st.cells(), bandwidth);
    Ok((mwl_problem(&st, policy, &k).value(w), mql_problem(&st, policy, &k).value(q)))
}
