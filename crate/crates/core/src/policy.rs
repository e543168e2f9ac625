//! Tabular policies and the heads that turn Q-tables into stochastic policies.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, OpeError, Result};
use crate::mdp::QTable;

const ROW_TOL: f64 = 1e-12;

/// A stationary stochastic policy π(a|s) over a finite MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub name: String,
    /// `probs[s][a]`.
    pub probs: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn new(name: impl Into<String>, probs: Vec<Vec<f64>>) -> Result<Self> {
        let p = Self {
            name: name.into(),
            probs,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn uniform(name: impl Into<String>, n_states: usize, n_actions: usize) -> Self {
        Self {
            name: name.into(),
            probs: vec![vec![1.0 / n_actions as f64; n_actions]; n_states],
        }
    }

    /// Deterministic policy taking `actions[s]` in state `s`.
    pub fn deterministic(name: impl Into<String>, actions: &[usize], n_actions: usize) -> Self {
        let probs = actions
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; n_actions];
                row[a] = 1.0;
                row
            })
            .collect();
        Self {
            name: name.into(),
            probs,
        }
    }

    pub fn n_states(&self) -> usize {
        self.probs.len()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }

    #[inline]
    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.probs[state][action]
    }

    #[inline]
    pub fn row(&self, state: usize) -> &[f64] {
        &self.probs[state]
    }

    pub fn validate(&self) -> Result<()> {
        if self.probs.is_empty() {
            return arg_err(format!("policy {} has no states", self.name));
        }
        let n_actions = self.n_actions();
        for (s, row) in self.probs.iter().enumerate() {
            if row.len() != n_actions || n_actions == 0 {
                return Err(OpeError::DimensionMismatch(format!(
                    "policy {} row {s} has {} actions, expected {n_actions}",
                    self.name,
                    row.len()
                )));
            }
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return arg_err(format!("policy {} row {s} has a negative entry", self.name));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOL {
                return arg_err(format!(
                    "policy {} row {s} sums to {sum}, not 1",
                    self.name
                ));
            }
        }
        Ok(())
    }

    pub fn check_dims(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.n_states() != n_states || self.n_actions() != n_actions {
            return Err(OpeError::DimensionMismatch(format!(
                "policy {} is {}x{}, MDP is {n_states}x{n_actions}",
                self.name,
                self.n_states(),
                self.n_actions()
            )));
        }
        Ok(())
    }

    /// Σ_a π(a|s) q(s, a).
    pub fn state_value(&self, q: &QTable, state: usize) -> f64 {
        self.row(state)
            .iter()
            .zip(q.row(state))
            .map(|(p, v)| p * v)
            .sum()
    }
}

/// How a candidate policy is derived from a Q-table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadKind {
    EpsilonGreedy { epsilon: f64 },
    Softmax { temperature: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyHead {
    pub kind: HeadKind,
    pub base_q: QTable,
    pub name: String,
}

impl PolicyHead {
    pub fn apply(&self) -> Result<TabularPolicy> {
        match self.kind {
            HeadKind::EpsilonGreedy { epsilon } => {
                epsilon_greedy_head(&self.base_q, epsilon, &self.name)
            }
            HeadKind::Softmax { temperature } => {
                softmax_head(&self.base_q, temperature, &self.name)
            }
        }
    }
}

fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (a, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = a;
        }
    }
    best
}

/// π(a|s) = (1-ε)·1{a = argmax q(s,·)} + ε/|A|, ties to the lowest index.
pub fn epsilon_greedy_head(q: &QTable, epsilon: f64, name: &str) -> Result<TabularPolicy> {
    if !(0.0..=1.0).contains(&epsilon) {
        return arg_err(format!("epsilon must lie in [0, 1], got {epsilon}"));
    }
    let n_actions = q.n_actions;
    let explore = epsilon / n_actions as f64;
    let probs = (0..q.n_states)
        .map(|s| {
            let best = argmax_lowest(q.row(s));
            (0..n_actions)
                .map(|a| if a == best { 1.0 - epsilon + explore } else { explore })
                .collect()
        })
        .collect();
    Ok(TabularPolicy {
        name: name.to_string(),
        probs,
    })
}

/// π(a|s) ∝ exp(q(s,a)/τ).
pub fn softmax_head(q: &QTable, temperature: f64, name: &str) -> Result<TabularPolicy> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return arg_err(format!("temperature must be positive, got {temperature}"));
    }
    let probs = (0..q.n_states)
        .map(|s| {
            let row = q.row(s);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| ((v - max) / temperature).exp()).collect();
            let z: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / z).collect()
        })
        .collect();
    Ok(TabularPolicy {
        name: name.to_string(),
        probs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q_from(rows: &[&[f64]]) -> QTable {
        QTable::from_rows(rows.iter().map(|r| r.to_vec()).collect())
    }

    #[test]
    fn epsilon_greedy_point_three() {
        let q = q_from(&[&[1.0, 0.0]]);
        let p = epsilon_greedy_head(&q, 0.3, "eps").unwrap();
        assert!((p.probs[0][0] - 0.85).abs() < 1e-15);
        assert!((p.probs[0][1] - 0.15).abs() < 1e-15);
        p.validate().unwrap();
    }

    #[test]
    fn epsilon_one_is_uniform_and_zero_is_greedy() {
        let q = q_from(&[&[0.2, 0.9, 0.1], &[5.0, -1.0, 5.0]]);
        let u = epsilon_greedy_head(&q, 1.0, "u").unwrap();
        for row in &u.probs {
            for &p in row {
                assert!((p - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        let g = epsilon_greedy_head(&q, 0.0, "g").unwrap();
        assert_eq!(g.probs[0], vec![0.0, 1.0, 0.0]);
        // tie between actions 0 and 2 goes to the lowest index
        assert_eq!(g.probs[1], vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn epsilon_out_of_range_rejected() {
        let q = q_from(&[&[1.0, 0.0]]);
        assert!(epsilon_greedy_head(&q, 1.5, "x").is_err());
        assert!(epsilon_greedy_head(&q, -0.1, "x").is_err());
    }

    #[test]
    fn softmax_cases() {
        let q = q_from(&[&[0.0, 0.0], &[1.0, 0.0]]);
        let p = softmax_head(&q, 3.0, "s").unwrap();
        assert_eq!(p.probs[0], vec![0.5, 0.5]);
        let p1 = softmax_head(&q, 1.0, "s").unwrap();
        let e = std::f64::consts::E;
        assert!((p1.probs[1][0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p1.probs[1][1] - 1.0 / (e + 1.0)).abs() < 1e-15);
        let hot = softmax_head(&q, 1000.0, "s").unwrap();
        assert!((hot.probs[1][0] - 0.5).abs() < 1e-3);
        assert!(softmax_head(&q, 0.0, "s").is_err());
        assert!(softmax_head(&q, -1.0, "s").is_err());
    }

    #[test]
    fn softmax_is_stable_for_large_values() {
        let q = q_from(&[&[1e6, 1e6 - 1.0]]);
        let p = softmax_head(&q, 1.0, "s").unwrap();
        p.validate().unwrap();
        assert!(p.probs[0][0] > p.probs[0][1]);
    }
}
