//! Estimating the distribution of the discounted return and risk functionals
//! derived from it.

use serde::{Deserialize, Serialize};

use crate::data::LoggedDataset;
use crate::error::{arg_err, OpeError, Result};
use crate::mdp::{exact_return_distribution, MdpSpec};
use crate::ope::OpeInputs;
use crate::policy::TabularPolicy;

const EXACT_ATOM_LIMIT: usize = 1 << 20;

/// Evenly spaced thresholds `m_0 < … < m_{n_partition}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardGrid {
    pub scale_min: f64,
    pub scale_max: f64,
    pub n_partition: usize,
    pub thresholds: Vec<f64>,
}

impl RewardGrid {
    pub fn new(scale_min: f64, scale_max: f64, n_partition: usize) -> Result<Self> {
        if !(scale_min < scale_max) || !scale_min.is_finite() || !scale_max.is_finite() {
            return arg_err(format!("grid needs scale_min < scale_max, got [{scale_min}, {scale_max}]"));
        }
        if n_partition == 0 {
            return arg_err("n_partition must be positive");
        }
        let step = (scale_max - scale_min) / n_partition as f64;
        let mut thresholds: Vec<f64> = (0..n_partition).map(|j| scale_min + j as f64 * step).collect();
        thresholds.push(scale_max);
        Ok(Self {
            scale_min,
            scale_max,
            n_partition,
            thresholds,
        })
    }

    pub fn increment(&self) -> f64 {
        (self.scale_max - self.scale_min) / self.n_partition as f64
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    /// Index of the first threshold at or above `g`, or `len()` above the grid.
    fn cell_of(&self, g: f64) -> usize {
        self.thresholds.partition_point(|&m| m < g)
    }

    /// Exact CDF of a finite distribution given as `(value, probability)` atoms.
    /// Reaches exactly 1 at `m_max` when no atom lies above the grid.
    pub fn cdf_of_atoms(&self, atoms: &[(f64, f64)]) -> Vec<f64> {
        let mut mass = vec![0.0; self.len() + 1];
        for &(x, p) in atoms {
            mass[self.cell_of(x)] += p;
        }
        let mut cdf: Vec<f64> = running_sum(&mass[..self.len()]).into_iter().map(|f| f.min(1.0)).collect();
        if mass[self.len()] == 0.0 {
            cdf[self.len() - 1] = 1.0;
        }
        cdf
    }
}

impl Default for RewardGrid {
    fn default() -> Self {
        Self::new(0.0, 10.0, 20).expect("default grid is valid")
    }
}

fn running_sum(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .scan(0.0, |acc, &x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

/// Conditional return CDFs `Ĝ(m; s0, a0)` on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfRewardModel {
    pub grid: RewardGrid,
    pub n_states: usize,
    pub n_actions: usize,
    /// `cdfs[s * n_actions + a][j]`.
    pub cdfs: Vec<Vec<f64>>,
}

impl CdfRewardModel {
    /// Empirical CDFs grouped by the first state-action pair. Each in-grid
    /// cell gets one pseudo-count, so unseen pairs fall back to uniform.
    pub fn fit(ds: &LoggedDataset, grid: &RewardGrid) -> Self {
        let cells = grid.len();
        let mut counts = vec![vec![0.0; cells + 1]; ds.n_states * ds.n_actions];
        for (traj, g) in ds.trajectories().zip(ds.discounted_returns()) {
            let first = traj[0];
            counts[first.state * ds.n_actions + first.action][grid.cell_of(g)] += 1.0;
        }
        let cdfs = counts
            .into_iter()
            .map(|c| {
                let total: f64 = c.iter().sum::<f64>() + cells as f64;
                let smoothed: Vec<f64> = c[..cells].iter().map(|&x| (x + 1.0) / total).collect();
                let mut cdf = running_sum(&smoothed);
                if c[cells] == 0.0 {
                    cdf[cells - 1] = 1.0;
                }
                cdf
            })
            .collect();
        Self {
            grid: grid.clone(),
            n_states: ds.n_states,
            n_actions: ds.n_actions,
            cdfs,
        }
    }

    /// True conditional CDFs for a noiseless MDP: the first action is fixed
    /// and `policy` acts afterwards.
    pub fn exact(mdp: &MdpSpec, policy: &TabularPolicy, grid: &RewardGrid) -> Result<Self> {
        mdp.validate()?;
        policy.check_dims(mdp.n_states, mdp.n_actions)?;
        let mut cdfs = Vec::with_capacity(mdp.n_states * mdp.n_actions);
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                let r = mdp.reward_mean[s][a];
                let atoms = if mdp.horizon == 1 {
                    vec![(r, 1.0)]
                } else {
                    let mut rest = mdp.clone().with_horizon(mdp.horizon - 1);
                    rest.initial_dist = mdp.transition[s][a].clone();
                    exact_return_distribution(&rest, policy, EXACT_ATOM_LIMIT)?
                        .into_iter()
                        .map(|(g, p)| (r + mdp.discount * g, p))
                        .collect()
                };
                cdfs.push(grid.cdf_of_atoms(&atoms));
            }
        }
        Ok(Self {
            grid: grid.clone(),
            n_states: mdp.n_states,
            n_actions: mdp.n_actions,
            cdfs,
        })
    }

    pub fn cdf(&self, s: usize, a: usize) -> &[f64] {
        &self.cdfs[s * self.n_actions + a]
    }

    pub fn validate(&self) -> Result<()> {
        for (k, c) in self.cdfs.iter().enumerate() {
            if c.len() != self.grid.len() {
                return Err(OpeError::DimensionMismatch(format!("conditional CDF {k} length")));
            }
            if c.iter().any(|&v| !(0.0..=1.0).contains(&v)) || c.windows(2).any(|w| w[0] > w[1]) {
                return Err(OpeError::InvalidData(format!("conditional CDF {k} is not a CDF")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CdfEstimator {
    Dm,
    Tis,
    Tdr,
    SnTis,
    SnTdr,
}

impl CdfEstimator {
    pub const ALL: [CdfEstimator; 5] = [Self::Dm, Self::Tis, Self::Tdr, Self::SnTis, Self::SnTdr];

    pub fn name(self) -> &'static str {
        match self {
            Self::Dm => "cd_dm",
            Self::Tis => "cd_tis",
            Self::Tdr => "cd_tdr",
            Self::SnTis => "cd_sntis",
            Self::SnTdr => "cd_sntdr",
        }
    }

    pub fn correction(self) -> Correction {
        match self {
            Self::Tdr | Self::SnTdr => Correction::Clip,
            _ => Correction::CapAtOne,
        }
    }

    fn needs_model(self) -> bool {
        matches!(self, Self::Dm | Self::Tdr | Self::SnTdr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    /// Running maximum, then `min(·, 1)`.
    CapAtOne,
    /// Running maximum, then clipped to `[0, 1]`.
    Clip,
}

pub fn monotone_correct(raw: &[f64], rule: Correction) -> Vec<f64> {
    let mut best = f64::NEG_INFINITY;
    raw.iter()
        .map(|&x| {
            best = best.max(x);
            match rule {
                Correction::CapAtOne => best.min(1.0),
                Correction::Clip => best.clamp(0.0, 1.0),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfEstimate {
    pub grid: RewardGrid,
    pub raw: Vec<f64>,
    pub values: Vec<f64>,
    pub estimator_name: String,
    pub corrected: bool,
    /// Set when observed returns fall outside the grid.
    pub warning: Option<String>,
}

/// `Σ w_i I{G_i ≤ m_j}` for every threshold, accumulated in return order so
/// the last partial sum bounds all earlier ones.
fn weighted_counts(grid: &RewardGrid, returns: &[f64], weights: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..returns.len()).collect();
    order.sort_by(|&a, &b| returns[a].total_cmp(&returns[b]));
    let mut partial = Vec::with_capacity(order.len());
    let mut acc = 0.0;
    for &i in &order {
        acc += weights[i];
        partial.push(acc);
    }
    let counts = grid
        .thresholds
        .iter()
        .map(|&m| {
            let k = order.partition_point(|&i| returns[i] <= m);
            if k == 0 {
                0.0
            } else {
                partial[k - 1]
            }
        })
        .collect();
    (counts, acc)
}

pub fn estimate_cdf(
    inputs: &OpeInputs<'_>,
    grid: &RewardGrid,
    estimator: CdfEstimator,
    model: Option<&CdfRewardModel>,
) -> Result<CdfEstimate> {
    let ds = inputs.dataset;
    let n = inputs.n();
    let model = match (estimator.needs_model(), model) {
        (true, None) => {
            return Err(OpeError::Configuration(format!(
                "{} needs a conditional return model",
                estimator.name()
            )))
        }
        (true, Some(m)) => {
            if m.grid != *grid || m.n_states != ds.n_states || m.n_actions != ds.n_actions {
                return Err(OpeError::DimensionMismatch("return model does not match grid or dataset".into()));
            }
            Some(m)
        }
        (false, _) => None,
    };
    let returns = ds.discounted_returns();
    let weights = inputs.trajectory_weights();
    let firsts: Vec<_> = ds.trajectories().map(|t| t[0]).collect();
    let nf = n as f64;

    let dm = |j: usize| -> f64 {
        let m = model.expect("model checked above");
        firsts
            .iter()
            .map(|st| {
                let row = inputs.eval_policy.row(st.state);
                row.iter().enumerate().map(|(a, &p)| p * m.cdf(st.state, a)[j]).sum::<f64>()
            })
            .sum::<f64>()
            / nf
    };
    // Σ w_i Ĝ(m_j; s0_i, a0_i)
    let control = |j: usize| -> f64 {
        let m = model.expect("model checked above");
        firsts
            .iter()
            .zip(&weights)
            .map(|(st, &w)| w * m.cdf(st.state, st.action)[j])
            .sum()
    };

    let raw: Vec<f64> = match estimator {
        CdfEstimator::Dm => (0..grid.len()).map(dm).collect(),
        CdfEstimator::Tis => {
            let (c, _) = weighted_counts(grid, &returns, &weights);
            c.into_iter().map(|x| x / nf).collect()
        }
        CdfEstimator::SnTis => {
            let (c, total) = weighted_counts(grid, &returns, &weights);
            if total <= 0.0 {
                return Err(OpeError::AllZeroWeights(format!(" in {}", estimator.name())));
            }
            c.into_iter().map(|x| x / total).collect()
        }
        CdfEstimator::Tdr | CdfEstimator::SnTdr => {
            let (c, total) = weighted_counts(grid, &returns, &weights);
            let denom = if estimator == CdfEstimator::Tdr { nf } else { total };
            if denom <= 0.0 {
                return Err(OpeError::AllZeroWeights(format!(" in {}", estimator.name())));
            }
            (0..grid.len()).map(|j| (c[j] - control(j)) / denom + dm(j)).collect()
        }
    };

    let mut values = monotone_correct(&raw, estimator.correction());
    let max_return = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_return = returns.iter().copied().fold(f64::INFINITY, f64::min);
    let model_covers = model.is_none_or(|m| m.cdfs.iter().all(|c| c[grid.len() - 1] == 1.0));
    let warning = if max_return <= grid.scale_max && model_covers {
        *values.last_mut().expect("grid is nonempty") = 1.0;
        (min_return < grid.scale_min).then(|| format!("returns below the grid minimum {}", grid.scale_min))
    } else {
        Some(format!("returns up to {max_return} exceed the grid maximum {}", grid.scale_max))
    };
    Ok(CdfEstimate {
        grid: grid.clone(),
        raw,
        values,
        estimator_name: estimator.name().to_string(),
        corrected: true,
        warning,
    })
}

impl CdfEstimate {
    fn require_corrected(&self) -> Result<()> {
        if !self.corrected {
            return Err(OpeError::Contract("risk functionals need a corrected CDF".into()));
        }
        Ok(())
    }

    /// `(location, mass)` atoms: the first increment sits at `m_0`, later ones
    /// at cell midpoints, and leftover mass at `m_max`.
    pub fn atoms(&self) -> Vec<(f64, f64)> {
        let m = &self.grid.thresholds;
        let mut atoms = Vec::with_capacity(m.len() + 1);
        atoms.push((m[0], self.values[0]));
        for j in 1..m.len() {
            atoms.push((0.5 * (m[j - 1] + m[j]), self.values[j] - self.values[j - 1]));
        }
        atoms.push((m[m.len() - 1], 1.0 - self.values[m.len() - 1]));
        atoms
    }
}

pub fn cdf_mean_variance(cdf: &CdfEstimate) -> Result<(f64, f64)> {
    cdf.require_corrected()?;
    let atoms = cdf.atoms();
    let mu: f64 = atoms.iter().map(|(x, p)| x * p).sum();
    let var: f64 = atoms.iter().map(|(x, p)| p * (x - mu).powi(2)).sum();
    Ok((mu, var))
}

/// Smallest threshold with `F(m) ≥ alpha`, or `m_max` when none reaches it.
pub fn cdf_quantile(cdf: &CdfEstimate, alpha: f64) -> Result<f64> {
    cdf.require_corrected()?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return arg_err(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    Ok(quantile_index(cdf, alpha).map_or(cdf.grid.scale_max, |j| cdf.grid.thresholds[j]))
}

fn quantile_index(cdf: &CdfEstimate, alpha: f64) -> Option<usize> {
    cdf.values.iter().position(|&f| f >= alpha)
}

/// Lower-tail expectation up to `Q^alpha`. With `normalized` the sum is
/// divided by the tail mass.
pub fn cdf_cvar(cdf: &CdfEstimate, alpha: f64, normalized: bool) -> Result<f64> {
    cdf.require_corrected()?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return arg_err(format!("alpha must lie in (0, 1], got {alpha}"));
    }
    let atoms = cdf.atoms();
    // atoms[j] covers threshold j; the final atom is the leftover mass
    let last = match quantile_index(cdf, alpha) {
        Some(j) if j + 1 < cdf.grid.len() => j,
        _ => atoms.len() - 1,
    };
    let tail = &atoms[..=last];
    let sum: f64 = tail.iter().map(|(x, p)| x * p).sum();
    if !normalized {
        return Ok(sum);
    }
    let mass: f64 = tail.iter().map(|(_, p)| p).sum();
    if mass <= 0.0 {
        return Err(OpeError::Contract(format!("zero tail mass at alpha = {alpha}")));
    }
    Ok(sum / mass)
}

/// `(Q^alpha, Q^0.5, Q^{1-alpha})`.
pub fn cdf_interquartile(cdf: &CdfEstimate, alpha: f64) -> Result<(f64, f64, f64)> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return arg_err(format!("alpha must lie in (0, 0.5), got {alpha}"));
    }
    Ok((
        cdf_quantile(cdf, alpha)?,
        cdf_quantile(cdf, 0.5)?,
        cdf_quantile(cdf, 1.0 - alpha)?,
    ))
}
