//! Finite-horizon tabular MDPs and exact dynamic-programming oracles.
//!
//! Episodes have a fixed length `horizon`; the episode ends after step
//! `horizon - 1`. Occupancy measures are discounted, normalized averages of
//! per-step visitation probabilities:
//!
//! ```text
//! d(s) = Σ_t γ^t Pr[s_t = s] / Σ_t γ^t
//! ```

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{arg_err, OpeError, Result};
use crate::policy::TabularPolicy;
use crate::rng::rng_from_seed;
use crate::stats::{normal_cdf, normal_quantile};

pub const MDP_SCHEMA_VERSION: u32 = 1;
const ROW_TOL: f64 = 1e-12;
const STATIONARY_TOL: f64 = 1e-10;
const STATIONARY_MAX_ITERS: usize = 1_000_000;

/// Per-step reward noise around `R(s, a)`.
///
/// Realized rewards always stay inside `reward_range` and keep mean `R(s,a)`:
/// Gaussian noise is truncated symmetrically to the distance of the mean from
/// the nearer bound, and the Bernoulli variant draws one of the two bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardNoise {
    None,
    Gaussian { sigma: f64 },
    BernoulliScaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpSpec {
    pub schema_version: u32,
    pub n_states: usize,
    pub n_actions: usize,
    /// `transition[s][a][s']`.
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `reward_mean[s][a]`.
    pub reward_mean: Vec<Vec<f64>>,
    pub reward_noise: RewardNoise,
    /// `[r_min, r_max]` for realized rewards.
    pub reward_range: [f64; 2],
    pub initial_dist: Vec<f64>,
    pub horizon: usize,
    pub discount: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Row-major `n_states x n_actions` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self::filled(n_states, n_actions, 0.0)
    }

    pub fn filled(n_states: usize, n_actions: usize, v: f64) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![v; n_states * n_actions],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, Vec::len);
        Self {
            n_states,
            n_actions,
            values: rows.into_iter().flatten().collect(),
        }
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Exact Q-function: one table per step, or a single stationary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "tables", rename_all = "snake_case")]
pub enum QFunction {
    TimeIndexed(Vec<QTable>),
    Stationary(QTable),
}

impl QFunction {
    pub fn at(&self, t: usize) -> &QTable {
        match self {
            QFunction::TimeIndexed(tables) => &tables[t],
            QFunction::Stationary(q) => q,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Occupancy {
    pub d_state: Vec<f64>,
    /// `d_state_action[s][a] = d_state[s] * π(a|s)`.
    pub d_state_action: Vec<Vec<f64>>,
}

impl MdpSpec {
    pub fn validate(&self) -> Result<()> {
        let (ns, na) = (self.n_states, self.n_actions);
        if ns == 0 || na == 0 {
            return arg_err("n_states and n_actions must be positive");
        }
        if self.horizon == 0 {
            return arg_err("horizon must be at least 1");
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return arg_err(format!("discount must lie in (0, 1], got {}", self.discount));
        }
        if !(self.reward_range[0] <= self.reward_range[1]) {
            return arg_err("reward_range must be ordered");
        }
        if self.transition.len() != ns || self.reward_mean.len() != ns || self.initial_dist.len() != ns {
            return Err(OpeError::DimensionMismatch("state dimension".into()));
        }
        for s in 0..ns {
            if self.transition[s].len() != na || self.reward_mean[s].len() != na {
                return Err(OpeError::DimensionMismatch(format!("action dimension at state {s}")));
            }
            for a in 0..na {
                check_distribution(&self.transition[s][a], ns, &format!("transition[{s}][{a}]"))?;
                let r = self.reward_mean[s][a];
                if !r.is_finite() {
                    return arg_err(format!("reward_mean[{s}][{a}] is not finite"));
                }
            }
        }
        check_distribution(&self.initial_dist, ns, "initial_dist")?;
        match self.reward_noise {
            RewardNoise::Gaussian { sigma } if !(sigma >= 0.0) => {
                arg_err("gaussian sigma must be nonnegative")
            }
            _ => Ok(()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: MdpSpec = serde_json::from_str(text)?;
        if spec.schema_version != MDP_SCHEMA_VERSION {
            return Err(OpeError::InvalidData(format!(
                "unsupported MDP schema version {}",
                spec.schema_version
            )));
        }
        spec.validate()?;
        Ok(spec)
    }

    /// SHA-256 of the compact JSON document, hex encoded.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("MdpSpec serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn is_deterministic(&self) -> bool {
        self.reward_noise == RewardNoise::None
            && self
                .transition
                .iter()
                .flatten()
                .all(|row| row.iter().all(|&p| p == 0.0 || p == 1.0))
    }

    /// Σ_{t<T} γ^t.
    pub fn discount_mass(&self) -> f64 {
        discount_mass(self.discount, self.horizon)
    }

    pub fn sample_reward<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> f64 {
        let mean = self.reward_mean[s][a];
        let [lo, hi] = self.reward_range;
        match self.reward_noise {
            RewardNoise::None => mean,
            RewardNoise::Gaussian { sigma } => {
                let half = (mean - lo).min(hi - mean);
                if sigma == 0.0 || half <= 0.0 {
                    return mean;
                }
                // inverse-CDF draw from N(0, σ²) truncated to [-half, half]
                let edge = normal_cdf(half / sigma);
                let u: f64 = rng.random();
                let p = (1.0 - edge) + u * (2.0 * edge - 1.0);
                let z = normal_quantile(p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON));
                mean + (sigma * z).clamp(-half, half)
            }
            RewardNoise::BernoulliScaled => {
                if hi == lo {
                    return lo;
                }
                let p = ((mean - lo) / (hi - lo)).clamp(0.0, 1.0);
                if rng.random::<f64>() < p {
                    hi
                } else {
                    lo
                }
            }
        }
    }

    /// Deterministic two-state chain: the next state equals the action and the
    /// reward is 1 exactly when the action matches the current state.
    pub fn chain2() -> Self {
        let mut transition = vec![vec![vec![0.0; 2]; 2]; 2];
        let mut reward_mean = vec![vec![0.0; 2]; 2];
        for s in 0..2 {
            for a in 0..2 {
                transition[s][a][a] = 1.0;
                reward_mean[s][a] = if a == s { 1.0 } else { 0.0 };
            }
        }
        Self {
            schema_version: MDP_SCHEMA_VERSION,
            n_states: 2,
            n_actions: 2,
            transition,
            reward_mean,
            reward_noise: RewardNoise::None,
            reward_range: [0.0, 1.0],
            initial_dist: vec![1.0, 0.0],
            horizon: 2,
            discount: 1.0,
            seed: None,
        }
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_discount(mut self, discount: f64) -> Self {
        self.discount = discount;
        self
    }

    pub fn with_noise(mut self, noise: RewardNoise) -> Self {
        self.reward_noise = noise;
        self
    }
}

pub(crate) fn discount_mass(gamma: f64, horizon: usize) -> f64 {
    let mut acc = 0.0;
    let mut g = 1.0;
    for _ in 0..horizon {
        acc += g;
        g *= gamma;
    }
    acc
}

fn check_distribution(p: &[f64], len: usize, what: &str) -> Result<()> {
    if p.len() != len {
        return Err(OpeError::DimensionMismatch(format!("{what} has length {}", p.len())));
    }
    if p.iter().any(|&x| !(x >= 0.0)) {
        return arg_err(format!("{what} has a negative or NaN entry"));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > ROW_TOL {
        return arg_err(format!("{what} sums to {sum}"));
    }
    Ok(())
}

fn dirichlet_one<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x: f64| x / total).collect()
}

/// Random MDP: Dirichlet(1) transition rows and initial distribution,
/// reward means uniform on [0, 1], Gaussian(0.1) reward noise.
pub fn make_random_mdp(
    n_states: usize,
    n_actions: usize,
    horizon: usize,
    discount: f64,
    seed: u64,
) -> Result<MdpSpec> {
    if n_states < 2 || n_actions < 2 {
        return arg_err("random MDPs need at least 2 states and 2 actions");
    }
    if horizon < 1 {
        return arg_err("horizon must be at least 1");
    }
    if !(discount > 0.0 && discount <= 1.0) {
        return arg_err(format!("discount must lie in (0, 1], got {discount}"));
    }
    let mut rng = rng_from_seed(seed);
    let transition = (0..n_states)
        .map(|_| (0..n_actions).map(|_| dirichlet_one(n_states, &mut rng)).collect())
        .collect();
    let reward_mean = (0..n_states)
        .map(|_| (0..n_actions).map(|_| rng.random::<f64>()).collect())
        .collect();
    let initial_dist = dirichlet_one(n_states, &mut rng);
    let spec = MdpSpec {
        schema_version: MDP_SCHEMA_VERSION,
        n_states,
        n_actions,
        transition,
        reward_mean,
        reward_noise: RewardNoise::Gaussian { sigma: 0.1 },
        reward_range: [0.0, 1.0],
        initial_dist,
        horizon,
        discount,
        seed: Some(seed),
    };
    spec.validate()?;
    Ok(spec)
}

fn bellman_backup(mdp: &MdpSpec, next_value: &[f64]) -> QTable {
    let mut q = QTable::zeros(mdp.n_states, mdp.n_actions);
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let future: f64 = mdp.transition[s][a]
                .iter()
                .zip(next_value)
                .map(|(p, v)| p * v)
                .sum();
            q.set(s, a, mdp.reward_mean[s][a] + mdp.discount * future);
        }
    }
    q
}

fn policy_values(policy: &TabularPolicy, q: &QTable) -> Vec<f64> {
    (0..q.n_states).map(|s| policy.state_value(q, s)).collect()
}

/// Q_t for t = 0..T-1 by backward induction.
pub fn exact_q_time_indexed(mdp: &MdpSpec, policy: &TabularPolicy) -> Result<Vec<QTable>> {
    policy.check_dims(mdp.n_states, mdp.n_actions)?;
    let mut tables = Vec::with_capacity(mdp.horizon);
    let mut v_next = vec![0.0; mdp.n_states];
    for _ in 0..mdp.horizon {
        let q = bellman_backup(mdp, &v_next);
        v_next = policy_values(policy, &q);
        tables.push(q);
    }
    tables.reverse();
    Ok(tables)
}

/// Fixed point of the evaluation Bellman operator (requires γ < 1).
pub fn exact_q_stationary(mdp: &MdpSpec, policy: &TabularPolicy) -> Result<QTable> {
    policy.check_dims(mdp.n_states, mdp.n_actions)?;
    if mdp.discount >= 1.0 {
        return arg_err("stationary Q-function needs discount < 1");
    }
    let mut q = QTable::zeros(mdp.n_states, mdp.n_actions);
    for _ in 0..STATIONARY_MAX_ITERS {
        let next = bellman_backup(mdp, &policy_values(policy, &q));
        let change = next.sup_distance(&q);
        q = next;
        if change < STATIONARY_TOL {
            return Ok(q);
        }
    }
    Err(OpeError::NonConvergence {
        iterations: STATIONARY_MAX_ITERS,
        residual: f64::NAN,
    })
}

pub fn exact_q_function(
    mdp: &MdpSpec,
    policy: &TabularPolicy,
    time_dependent: bool,
) -> Result<QFunction> {
    if time_dependent {
        exact_q_time_indexed(mdp, policy).map(QFunction::TimeIndexed)
    } else {
        exact_q_stationary(mdp, policy).map(QFunction::Stationary)
    }
}

/// J(π) = Σ_t γ^t E[r_t] by backward induction.
pub fn exact_policy_value(mdp: &MdpSpec, policy: &TabularPolicy) -> Result<f64> {
    let tables = exact_q_time_indexed(mdp, policy)?;
    let v0 = policy_values(policy, &tables[0]);
    Ok(mdp.initial_dist.iter().zip(&v0).map(|(p, v)| p * v).sum())
}

/// Pr[s_t = s] for t = 0..T-1.
pub fn state_marginals(mdp: &MdpSpec, policy: &TabularPolicy) -> Result<Vec<Vec<f64>>> {
    policy.check_dims(mdp.n_states, mdp.n_actions)?;
    let mut out = Vec::with_capacity(mdp.horizon);
    let mut p = mdp.initial_dist.clone();
    for _ in 0..mdp.horizon {
        let mut next = vec![0.0; mdp.n_states];
        for s in 0..mdp.n_states {
            if p[s] == 0.0 {
                continue;
            }
            for a in 0..mdp.n_actions {
                let mass = p[s] * policy.prob(s, a);
                if mass == 0.0 {
                    continue;
                }
                for (n, &tp) in next.iter_mut().zip(&mdp.transition[s][a]) {
                    *n += mass * tp;
                }
            }
        }
        out.push(std::mem::replace(&mut p, next));
    }
    Ok(out)
}

pub fn exact_occupancy(mdp: &MdpSpec, policy: &TabularPolicy) -> Result<Occupancy> {
    let marginals = state_marginals(mdp, policy)?;
    let mut d_state = vec![0.0; mdp.n_states];
    let mut g = 1.0;
    let mut z = 0.0;
    for p in &marginals {
        for (d, &x) in d_state.iter_mut().zip(p) {
            *d += g * x;
        }
        z += g;
        g *= mdp.discount;
    }
    for d in &mut d_state {
        *d /= z;
    }
    let d_state_action = d_state
        .iter()
        .enumerate()
        .map(|(s, &ds)| policy.row(s).iter().map(|&p| ds * p).collect())
        .collect();
    Ok(Occupancy {
        d_state,
        d_state_action,
    })
}

/// Optimal Q-function at step 0 of the finite-horizon problem.
pub fn optimal_q(mdp: &MdpSpec) -> QTable {
    let mut v_next = vec![0.0; mdp.n_states];
    let mut q = QTable::zeros(mdp.n_states, mdp.n_actions);
    for _ in 0..mdp.horizon {
        q = bellman_backup(mdp, &v_next);
        v_next = (0..mdp.n_states)
            .map(|s| q.row(s).iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect();
    }
    q
}

/// Exact distribution of the discounted return for MDPs without reward noise,
/// as `(return, probability)` atoms sorted by return with equal returns merged.
///
/// Enumerates the reachable (state, return) frontier step by step; fails when
/// the frontier would exceed `max_atoms`.
pub fn exact_return_distribution(
    mdp: &MdpSpec,
    policy: &TabularPolicy,
    max_atoms: usize,
) -> Result<Vec<(f64, f64)>> {
    policy.check_dims(mdp.n_states, mdp.n_actions)?;
    if mdp.reward_noise != RewardNoise::None {
        return arg_err("exact return distribution needs noiseless rewards");
    }
    // frontier entries: (state, accumulated return, probability)
    let mut frontier: Vec<(usize, f64, f64)> = mdp
        .initial_dist
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(s, &p)| (s, 0.0, p))
        .collect();
    let mut g = 1.0;
    for _ in 0..mdp.horizon {
        let mut next = Vec::new();
        for &(s, ret, p) in &frontier {
            for a in 0..mdp.n_actions {
                let pa = p * policy.prob(s, a);
                if pa == 0.0 {
                    continue;
                }
                let r = ret + g * mdp.reward_mean[s][a];
                for (s2, &tp) in mdp.transition[s][a].iter().enumerate() {
                    if tp > 0.0 {
                        next.push((s2, r, pa * tp));
                    }
                }
            }
        }
        next.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
        next.dedup_by(|b, a| {
            if a.0 == b.0 && a.1 == b.1 {
                a.2 += b.2;
                true
            } else {
                false
            }
        });
        if next.len() > max_atoms {
            return arg_err(format!("return distribution exceeds {max_atoms} atoms"));
        }
        frontier = next;
        g *= mdp.discount;
    }
    let mut atoms: Vec<(f64, f64)> = frontier.into_iter().map(|(_, r, p)| (r, p)).collect();
    atoms.sort_by(|x, y| x.0.total_cmp(&y.0));
    atoms.dedup_by(|b, a| {
        if a.0 == b.0 {
            a.1 += b.1;
            true
        } else {
            false
        }
    });
    Ok(atoms)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matching() -> TabularPolicy {
        TabularPolicy::deterministic("match", &[0, 1], 2)
    }

    #[test]
    fn chain2_values() {
        let mdp = MdpSpec::chain2();
        mdp.validate().unwrap();
        assert_eq!(exact_policy_value(&mdp, &matching()).unwrap(), 2.0);
        let uni = TabularPolicy::uniform("u", 2, 2);
        // trajectories: (0,0)->(0,0): 2, (0,0)->(0,1): 1, (0,1)->(1,1): 1, (0,1)->(1,0): 0
        assert!((exact_policy_value(&mdp, &uni).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn chain2_q_by_hand() {
        let mdp = MdpSpec::chain2();
        let q = exact_q_time_indexed(&mdp, &matching()).unwrap();
        assert_eq!(q[0].get(0, 0), 2.0);
        for s in 0..2 {
            for a in 0..2 {
                assert_eq!(q[1].get(s, a), if a == s { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn stationary_requires_discount_below_one() {
        let mdp = MdpSpec::chain2();
        assert!(exact_q_function(&mdp, &matching(), false).is_err());
        let q = exact_q_function(&mdp.with_discount(0.5), &matching(), false).unwrap();
        // Q(s, s) = 1 / (1 - γ) for the matching policy
        assert!((q.at(0).get(0, 0) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn zero_rewards_give_zero_everything() {
        let mut mdp = make_random_mdp(4, 3, 5, 0.9, 1).unwrap();
        for row in &mut mdp.reward_mean {
            row.iter_mut().for_each(|r| *r = 0.0);
        }
        let pi = TabularPolicy::uniform("u", 4, 3);
        assert_eq!(exact_policy_value(&mdp, &pi).unwrap(), 0.0);
        for q in exact_q_time_indexed(&mdp, &pi).unwrap() {
            assert!(q.values.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn chain2_occupancy() {
        let occ = exact_occupancy(&MdpSpec::chain2(), &matching()).unwrap();
        assert_eq!(occ.d_state, vec![1.0, 0.0]);
        let switch = TabularPolicy::deterministic("switch", &[1, 0], 2);
        let occ = exact_occupancy(&MdpSpec::chain2(), &switch).unwrap();
        assert_eq!(occ.d_state, vec![0.5, 0.5]);
        assert_eq!(occ.d_state_action, vec![vec![0.0, 0.5], vec![0.5, 0.0]]);
    }

    #[test]
    fn self_loop_occupancy_is_point_mass() {
        let mdp = MdpSpec::chain2().with_horizon(7).with_discount(0.8);
        let stay = TabularPolicy::deterministic("stay0", &[0, 0], 2);
        let occ = exact_occupancy(&mdp, &stay).unwrap();
        assert!((occ.d_state[0] - 1.0).abs() < 1e-15);
        assert_eq!(occ.d_state[1], 0.0);
    }

    #[test]
    fn random_mdp_is_valid_and_deterministic() {
        let a = make_random_mdp(2, 2, 2, 1.0, 7).unwrap();
        let b = make_random_mdp(2, 2, 2, 1.0, 7).unwrap();
        a.validate().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = make_random_mdp(2, 2, 2, 1.0, 8).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
        for row in a.reward_mean.iter().flatten() {
            assert!((0.0..=1.0).contains(row));
        }
    }

    #[test]
    fn random_mdp_rejects_bad_dimensions() {
        assert!(make_random_mdp(1, 2, 2, 0.9, 0).is_err());
        assert!(make_random_mdp(2, 1, 2, 0.9, 0).is_err());
        assert!(make_random_mdp(2, 2, 0, 0.9, 0).is_err());
        assert!(make_random_mdp(2, 2, 2, 0.0, 0).is_err());
        assert!(make_random_mdp(2, 2, 2, 1.1, 0).is_err());
    }

    #[test]
    fn json_round_trip_validates() {
        let mdp = make_random_mdp(3, 2, 4, 0.9, 11).unwrap();
        let back = MdpSpec::from_json(&mdp.to_json().unwrap()).unwrap();
        assert_eq!(mdp, back);
        let mut broken = mdp.clone();
        broken.transition[0][0][0] += 0.1;
        assert!(MdpSpec::from_json(&broken.to_json().unwrap()).is_err());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mdp = MdpSpec::chain2();
        let pi = TabularPolicy::uniform("u", 3, 2);
        assert!(matches!(
            exact_policy_value(&mdp, &pi),
            Err(OpeError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn return_distribution_of_chain2_uniform() {
        let uni = TabularPolicy::uniform("u", 2, 2);
        let atoms = exact_return_distribution(&MdpSpec::chain2(), &uni, 1000).unwrap();
        assert_eq!(atoms, vec![(0.0, 0.25), (1.0, 0.5), (2.0, 0.25)]);
    }

    #[test]
    fn noisy_rewards_stay_in_range_and_keep_mean() {
        let mut mdp = MdpSpec::chain2().with_noise(RewardNoise::Gaussian { sigma: 0.5 });
        mdp.reward_mean[0][0] = 0.3;
        let mut rng = rng_from_seed(5);
        let n = 200_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let r = mdp.sample_reward(0, 0, &mut rng);
            assert!((0.0..=1.0).contains(&r));
            sum += r;
        }
        // truncated noise has sd below 0.3, so the standard error is below 1e-3
        assert!((sum / n as f64 - 0.3).abs() < 4e-3);

        let bern = mdp.clone().with_noise(RewardNoise::BernoulliScaled);
        let mut hits = 0.0;
        for _ in 0..n {
            let r = bern.sample_reward(0, 0, &mut rng);
            assert!(r == 0.0 || r == 1.0);
            hits += r;
        }
        assert!((hits / n as f64 - 0.3).abs() < 4e-3);
    }
}
