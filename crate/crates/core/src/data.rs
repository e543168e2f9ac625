//! Logged datasets: collection under a behavior policy, validation,
//! on-policy ground truth and on-disk persistence.
//!
//! # Binary trajectory format
//!
//! A dataset is stored as a JSON manifest plus a flat little-endian file of
//! `n_trajectories * horizon` fixed-size records, trajectory-major. Each
//! record is 28 bytes:
//!
//! | offset | type | field |
//! |--------|------|-------|
//! | 0  | u32 | state |
//! | 4  | u32 | action |
//! | 8  | f64 | reward |
//! | 16 | u32 | next_state |
//! | 20 | f64 | behavior_propensity |

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, OpeError, Result};
use crate::mdp::MdpSpec;
use crate::par::{self, Execution};
use crate::policy::TabularPolicy;
use crate::rng::{derive_seed, name_hash, rng_from_seed, sample_categorical, OpeRng};
use crate::stats::{mean, std_error};

pub const DATASET_SCHEMA_VERSION: u32 = 1;
pub const BINARY_FORMAT: &str = "opeval-steps-le-v1";
const RECORD_BYTES: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoggedStep {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub behavior_propensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedDataset {
    /// Trajectory-major, `n_trajectories * horizon` entries.
    pub steps: Vec<LoggedStep>,
    pub n_trajectories: usize,
    pub horizon: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub behavior_policy_name: String,
    pub mdp_fingerprint: String,
    pub seed: u64,
    pub discount: f64,
}

/// Metadata written next to the binary step file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub format: String,
    pub data_file: String,
    pub n_trajectories: usize,
    pub horizon: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub behavior_policy_name: String,
    pub mdp_fingerprint: String,
    pub seed: u64,
    pub discount: f64,
}

impl LoggedDataset {
    #[inline]
    pub fn trajectory(&self, i: usize) -> &[LoggedStep] {
        &self.steps[i * self.horizon..(i + 1) * self.horizon]
    }

    pub fn trajectories(&self) -> impl Iterator<Item = &[LoggedStep]> {
        self.steps.chunks_exact(self.horizon)
    }

    #[inline]
    pub fn step(&self, i: usize, t: usize) -> &LoggedStep {
        &self.steps[i * self.horizon + t]
    }

    /// γ^t for t = 0..T-1.
    pub fn discounts(&self) -> Vec<f64> {
        std::iter::successors(Some(1.0), |g| Some(g * self.discount))
            .take(self.horizon)
            .collect()
    }

    pub fn discounted_returns(&self) -> Vec<f64> {
        let g = self.discounts();
        self.trajectories()
            .map(|traj| traj.iter().zip(&g).map(|(s, d)| d * s.reward).sum())
            .collect()
    }

    /// Mean discounted return of the logged trajectories.
    pub fn mean_return(&self) -> f64 {
        mean(&self.discounted_returns())
    }

    /// Keeps the listed trajectories, in the given order.
    pub fn subset(&self, indices: &[usize]) -> LoggedDataset {
        let mut steps = Vec::with_capacity(indices.len() * self.horizon);
        for &i in indices {
            steps.extend_from_slice(self.trajectory(i));
        }
        LoggedDataset {
            steps,
            n_trajectories: indices.len(),
            ..self.header_clone()
        }
    }

    fn header_clone(&self) -> LoggedDataset {
        LoggedDataset {
            steps: Vec::new(),
            n_trajectories: 0,
            horizon: self.horizon,
            n_states: self.n_states,
            n_actions: self.n_actions,
            behavior_policy_name: self.behavior_policy_name.clone(),
            mdp_fingerprint: self.mdp_fingerprint.clone(),
            seed: self.seed,
            discount: self.discount,
        }
    }

    /// Shape, index-range and propensity checks.
    pub fn validate(&self) -> Result<()> {
        if self.n_trajectories == 0 || self.horizon == 0 {
            return Err(OpeError::InvalidData("dataset has no trajectories".into()));
        }
        if self.steps.len() != self.n_trajectories * self.horizon {
            return Err(OpeError::InvalidData(format!(
                "expected {} steps, found {}",
                self.n_trajectories * self.horizon,
                self.steps.len()
            )));
        }
        for (k, st) in self.steps.iter().enumerate() {
            if st.state >= self.n_states || st.next_state >= self.n_states || st.action >= self.n_actions {
                return Err(OpeError::InvalidData(format!("step {k} has an out-of-range index")));
            }
            if !(st.behavior_propensity > 0.0 && st.behavior_propensity <= 1.0) {
                return Err(OpeError::Support(format!(
                    "step {k} has behavior propensity {}",
                    st.behavior_propensity
                )));
            }
            if !st.reward.is_finite() {
                return Err(OpeError::InvalidData(format!("step {k} has a non-finite reward")));
            }
        }
        Ok(())
    }

    /// [`validate`](Self::validate) plus a fingerprint match against `mdp`.
    pub fn validate_against(&self, mdp: &MdpSpec) -> Result<()> {
        self.validate()?;
        if self.mdp_fingerprint != mdp.fingerprint() {
            return Err(OpeError::InvalidData("dataset fingerprint does not match the MDP".into()));
        }
        if self.horizon != mdp.horizon || self.discount != mdp.discount {
            return Err(OpeError::InvalidData("dataset horizon or discount differs from the MDP".into()));
        }
        Ok(())
    }

    pub fn manifest(&self, data_file: &str) -> DatasetManifest {
        DatasetManifest {
            schema_version: DATASET_SCHEMA_VERSION,
            format: BINARY_FORMAT.to_string(),
            data_file: data_file.to_string(),
            n_trajectories: self.n_trajectories,
            horizon: self.horizon,
            n_states: self.n_states,
            n_actions: self.n_actions,
            behavior_policy_name: self.behavior_policy_name.clone(),
            mdp_fingerprint: self.mdp_fingerprint.clone(),
            seed: self.seed,
            discount: self.discount,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.steps.len() * RECORD_BYTES);
        for st in &self.steps {
            out.extend_from_slice(&(st.state as u32).to_le_bytes());
            out.extend_from_slice(&(st.action as u32).to_le_bytes());
            out.extend_from_slice(&st.reward.to_le_bytes());
            out.extend_from_slice(&(st.next_state as u32).to_le_bytes());
            out.extend_from_slice(&st.behavior_propensity.to_le_bytes());
        }
        out
    }

    pub fn from_parts(manifest: &DatasetManifest, bytes: &[u8]) -> Result<Self> {
        if manifest.schema_version != DATASET_SCHEMA_VERSION || manifest.format != BINARY_FORMAT {
            return Err(OpeError::InvalidData(format!(
                "unsupported dataset format {} v{}",
                manifest.format, manifest.schema_version
            )));
        }
        let expected = manifest.n_trajectories * manifest.horizon * RECORD_BYTES;
        if bytes.len() != expected {
            return Err(OpeError::InvalidData(format!(
                "step file has {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        let u32_at = |b: &[u8], o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap()) as usize;
        let f64_at = |b: &[u8], o: usize| f64::from_le_bytes(b[o..o + 8].try_into().unwrap());
        let steps = bytes
            .chunks_exact(RECORD_BYTES)
            .map(|r| LoggedStep {
                state: u32_at(r, 0),
                action: u32_at(r, 4),
                reward: f64_at(r, 8),
                next_state: u32_at(r, 16),
                behavior_propensity: f64_at(r, 20),
            })
            .collect();
        let ds = LoggedDataset {
            steps,
            n_trajectories: manifest.n_trajectories,
            horizon: manifest.horizon,
            n_states: manifest.n_states,
            n_actions: manifest.n_actions,
            behavior_policy_name: manifest.behavior_policy_name.clone(),
            mdp_fingerprint: manifest.mdp_fingerprint.clone(),
            seed: manifest.seed,
            discount: manifest.discount,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Writes `<stem>.json` and `<stem>.bin` into `dir`; returns the manifest path.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let data_file = format!("{stem}.bin");
        fs::write(dir.join(&data_file), self.to_bytes())?;
        let manifest_path = dir.join(format!("{stem}.json"));
        fs::write(
            &manifest_path,
            serde_json::to_string_pretty(&self.manifest(&data_file))?,
        )?;
        Ok(manifest_path)
    }

    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
        let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let bytes = fs::read(dir.join(&manifest.data_file))?;
        Self::from_parts(&manifest, &bytes)
    }
}

fn rollout(
    mdp: &MdpSpec,
    policy: &TabularPolicy,
    rng: &mut OpeRng,
    mut visit: impl FnMut(LoggedStep),
) {
    let mut s = sample_categorical(&mdp.initial_dist, rng);
    for _ in 0..mdp.horizon {
        let a = sample_categorical(policy.row(s), rng);
        let r = mdp.sample_reward(s, a, rng);
        let s2 = sample_categorical(&mdp.transition[s][a], rng);
        visit(LoggedStep {
            state: s,
            action: a,
            reward: r,
            next_state: s2,
            behavior_propensity: policy.prob(s, a),
        });
        s = s2;
    }
}

/// Samples `n_trajectories` episodes under `behavior` from one seeded stream.
pub fn collect(
    mdp: &MdpSpec,
    behavior: &TabularPolicy,
    n_trajectories: usize,
    seed: u64,
) -> Result<LoggedDataset> {
    if n_trajectories < 1 {
        return arg_err("n_trajectories must be at least 1");
    }
    mdp.validate()?;
    behavior.check_dims(mdp.n_states, mdp.n_actions)?;
    let mut rng = rng_from_seed(seed);
    let mut steps = Vec::with_capacity(n_trajectories * mdp.horizon);
    for _ in 0..n_trajectories {
        rollout(mdp, behavior, &mut rng, |st| steps.push(st));
    }
    Ok(LoggedDataset {
        steps,
        n_trajectories,
        horizon: mdp.horizon,
        n_states: mdp.n_states,
        n_actions: mdp.n_actions,
        behavior_policy_name: behavior.name.clone(),
        mdp_fingerprint: mdp.fingerprint(),
        seed,
        discount: mdp.discount,
    })
}

/// Seed of dataset `dataset_idx` collected under the behavior named `behavior_name`.
///
/// Keyed by name rather than list position, so reordering behaviors
/// reorders the dataset blocks without changing their contents.
pub fn cell_seed(seed: u64, behavior_name: &str, dataset_idx: usize) -> u64 {
    derive_seed(seed, &[name_hash(behavior_name), dataset_idx as u64])
}

/// Collects `n_datasets` datasets per behavior, behavior-major.
pub fn collect_multi(
    mdp: &MdpSpec,
    behaviors: &[TabularPolicy],
    n_datasets: usize,
    n_trajectories: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<LoggedDataset>> {
    if behaviors.is_empty() {
        return arg_err("behavior list is empty");
    }
    if n_datasets < 1 {
        return arg_err("n_datasets must be at least 1");
    }
    let mut names = HashSet::new();
    for b in behaviors {
        if !names.insert(b.name.as_str()) {
            return arg_err(format!("duplicate behavior policy name {:?}", b.name));
        }
    }
    let cells: Vec<(usize, usize)> = (0..behaviors.len())
        .flat_map(|b| (0..n_datasets).map(move |d| (b, d)))
        .collect();
    par::try_map(exec, &cells, |&(b, d)| {
        let pi = &behaviors[b];
        collect(mdp, pi, n_trajectories, cell_seed(seed, &pi.name, d))
    })
}

/// Monte-Carlo mean and standard error of the discounted return under `policy`.
pub fn on_policy_value(
    mdp: &MdpSpec,
    policy: &TabularPolicy,
    n_trajectories: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let returns = on_policy_returns(mdp, policy, n_trajectories, seed)?;
    Ok((mean(&returns), std_error(&returns)))
}

/// Discounted returns of fresh on-policy rollouts.
pub fn on_policy_returns(
    mdp: &MdpSpec,
    policy: &TabularPolicy,
    n_trajectories: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_trajectories < 2 {
        return arg_err("on-policy evaluation needs at least 2 trajectories");
    }
    mdp.validate()?;
    policy.check_dims(mdp.n_states, mdp.n_actions)?;
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(n_trajectories);
    for _ in 0..n_trajectories {
        let mut g = 1.0;
        let mut ret = 0.0;
        rollout(mdp, policy, &mut rng, |st| {
            ret += g * st.reward;
            g *= mdp.discount;
        });
        out.push(ret);
    }
    Ok(out)
}
