//! Experiment configuration: one JSON document describing the environment,
//! policies, data sizes, estimators and selection criteria.

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use opeval_core::cdope::{CdfEstimator, RewardGrid};
use opeval_core::fitting::{AlmPreset, FqeMode, MAX_KERNEL_TUPLES};
use opeval_core::mdp::{make_random_mdp, optimal_q, MdpSpec, QTable, RewardNoise};
use opeval_core::ope::confidence::ConfidenceMethod;
use opeval_core::ope::Estimator;
use opeval_core::policy::{HeadKind, PolicyHead, TabularPolicy};
use opeval_core::rng::rng_from_seed;

use crate::error::{PipelineError, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_CONFIG: &str = include_str!("../../../configs/default.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub environment: EnvironmentConfig,
    /// Q-tables that policy heads are applied to.
    pub bases: Vec<NamedBase>,
    pub behaviors: Vec<BehaviorConfig>,
    /// Every base crossed with every head.
    pub candidates: CandidateGrid,
    pub data: DataConfig,
    pub fitting: FittingConfig,
    pub estimators: Vec<Estimator>,
    pub confidence: ConfidenceConfig,
    pub cdope: CdopeConfig,
    pub ops: OpsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentConfig {
    Random {
        n_states: usize,
        n_actions: usize,
        horizon: usize,
        discount: f64,
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reward_noise: Option<RewardNoise>,
    },
    Explicit {
        mdp: MdpSpec,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaseQ {
    /// Finite-horizon optimal Q at the first step.
    Optimal,
    /// Negated optimal Q.
    Pessimal,
    /// Immediate mean reward.
    Myopic,
    /// Uniform draws on [0, 1].
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedBase {
    pub name: String,
    pub base: BaseQ,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorConfig {
    pub name: String,
    pub base: String,
    pub head: HeadKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateGrid {
    pub heads: Vec<HeadKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub n_datasets: usize,
    pub n_trajectories: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightConfig {
    Oracle,
    Empirical,
    Alm { preset: AlmPreset },
    Mwl { bandwidth: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum QConfig {
    Fqe { mode: FqeMode },
    Mql { bandwidth: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FittingConfig {
    pub q: QConfig,
    pub weights: WeightConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JMaxConfig {
    DataMax,
    /// `r_max · Σγ^t · max cumulative weight`.
    Analytic,
    Fixed { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfidenceConfig {
    pub alpha: f64,
    pub method: ConfidenceMethod,
    pub j_max: JMaxConfig,
    pub bootstrap_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub scale_min: f64,
    pub scale_max: f64,
    pub n_partition: usize,
}

impl GridConfig {
    pub fn grid(&self) -> opeval_core::Result<RewardGrid> {
        RewardGrid::new(self.scale_min, self.scale_max, self.n_partition)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CdopeConfig {
    pub grid: GridConfig,
    pub estimators: Vec<CdfEstimator>,
    /// On-policy rollouts per policy for the reference distributions.
    pub truth_rollouts: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpsCriterion {
    PolicyValue,
    PolicyValueLowerBound,
    LowerQuartile,
    Cvar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpsConfig {
    pub criteria: Vec<OpsCriterion>,
    pub quartile_alpha: f64,
    pub cvar_alpha: f64,
    pub relative_safety: f64,
    pub regret_k: Vec<usize>,
}

/// A policy as realized from the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedPolicy {
    pub role: PolicyRole,
    pub policy: TabularPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyRole {
    Behavior,
    Candidate,
}

fn cfg_err<T>(path: &str, msg: impl std::fmt::Display) -> Result<T> {
    Err(PipelineError::Config(format!("{path}: {msg}")))
}

pub fn head_tag(head: &HeadKind) -> String {
    match head {
        HeadKind::EpsilonGreedy { epsilon } => format!("eps{epsilon}"),
        HeadKind::Softmax { temperature } => format!("temp{temperature}"),
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            PipelineError::Config(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn default_config() -> Self {
        Self::from_json(DEFAULT_CONFIG).expect("shipped default config is valid")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return cfg_err("schema_version", format!("expected {SCHEMA_VERSION}, got {}", self.schema_version));
        }
        let mdp = self.mdp().map_err(|e| PipelineError::Config(format!("environment: {e}")))?;

        let mut base_names = BTreeSet::new();
        for (i, b) in self.bases.iter().enumerate() {
            if !base_names.insert(b.name.as_str()) {
                return cfg_err(&format!("bases[{i}].name"), format!("duplicate base {}", b.name));
            }
        }
        if self.behaviors.is_empty() {
            return cfg_err("behaviors", "at least one behavior policy is required");
        }
        let mut names = BTreeSet::new();
        for (i, b) in self.behaviors.iter().enumerate() {
            if !base_names.contains(b.base.as_str()) {
                return cfg_err(&format!("behaviors[{i}].base"), format!("unknown base {}", b.base));
            }
            check_head(&b.head, &format!("behaviors[{i}].head"))?;
            if let HeadKind::EpsilonGreedy { epsilon } = b.head {
                if epsilon <= 0.0 {
                    return cfg_err(&format!("behaviors[{i}].head.epsilon"), "behavior policies need full support");
                }
            }
            if !names.insert(b.name.clone()) {
                return cfg_err(&format!("behaviors[{i}].name"), format!("duplicate policy name {}", b.name));
            }
        }
        for (i, h) in self.candidates.heads.iter().enumerate() {
            check_head(h, &format!("candidates.heads[{i}]"))?;
        }
        for name in self.candidate_names() {
            if !names.insert(name.clone()) {
                return cfg_err("candidates", format!("duplicate policy name {name}"));
            }
        }
        let n_candidates = self.bases.len() * self.candidates.heads.len();
        if n_candidates < 2 {
            return cfg_err("candidates", "at least two candidate policies are required");
        }
        if self.data.n_datasets < 1 {
            return cfg_err("data.n_datasets", "must be at least 1");
        }
        if self.data.n_trajectories < 2 {
            return cfg_err("data.n_trajectories", "must be at least 2");
        }
        match self.fitting.weights {
            WeightConfig::Mwl { bandwidth } => {
                if !bandwidth_ok(bandwidth) {
                    return cfg_err("fitting.weights.bandwidth", "must be positive");
                }
                let tuples = self.data.n_trajectories * mdp.horizon;
                if tuples > MAX_KERNEL_TUPLES {
                    return cfg_err(
                        "fitting.weights",
                        format!("MWL handles at most {MAX_KERNEL_TUPLES} tuples, datasets have {tuples}; subsample or pick another source"),
                    );
                }
            }
            WeightConfig::Alm { .. } if mdp.discount >= 1.0 => {
                return cfg_err("fitting.weights", "ALM weights need discount < 1");
            }
            _ => {}
        }
        if let QConfig::Mql { bandwidth } = self.fitting.q {
            if !bandwidth_ok(bandwidth) {
                return cfg_err("fitting.q.bandwidth", "must be positive");
            }
            if mdp.discount >= 1.0 {
                return cfg_err("fitting.q", "MQL needs discount < 1");
            }
        }
        if let QConfig::Fqe { mode: FqeMode::Stationary } = self.fitting.q {
            if mdp.discount >= 1.0 {
                return cfg_err("fitting.q.mode", "stationary FQE needs discount < 1");
            }
        }

        if self.estimators.is_empty() {
            return cfg_err("estimators", "at least one estimator is required");
        }
        let mut est_names = BTreeSet::new();
        for (i, e) in self.estimators.iter().enumerate() {
            let path = format!("estimators[{i}]");
            if !est_names.insert(e.name()) {
                return cfg_err(&path, format!("duplicate estimator {}", e.name()));
            }
            match *e {
                Estimator::Drl { k_folds } if k_folds < 2 || k_folds > self.data.n_trajectories => {
                    return cfg_err(&format!("{path}.k_folds"), format!("must lie in 2..={}", self.data.n_trajectories));
                }
                Estimator::SopeIs { k_recent, .. } | Estimator::SopeDr { k_recent, .. } if k_recent > mdp.horizon => {
                    return cfg_err(&format!("{path}.k_recent"), format!("must not exceed the horizon {}", mdp.horizon));
                }
                _ => {}
            }
        }

        let c = &self.confidence;
        if !(c.alpha > 0.0 && c.alpha < 1.0) {
            return cfg_err("confidence.alpha", "must lie in (0, 1)");
        }
        if c.method == ConfidenceMethod::Bootstrap && c.bootstrap_samples < 2 {
            return cfg_err("confidence.bootstrap_samples", "must be at least 2");
        }
        if let JMaxConfig::Fixed { value } = c.j_max {
            if !(value >= 0.0 && value.is_finite()) {
                return cfg_err("confidence.j_max.value", "must be finite and nonnegative");
            }
        }

        self.cdope.grid.grid().map_err(|e| PipelineError::Config(format!("cdope.grid: {e}")))?;
        let mut cd = BTreeSet::new();
        for (i, e) in self.cdope.estimators.iter().enumerate() {
            if !cd.insert(e.name()) {
                return cfg_err(&format!("cdope.estimators[{i}]"), format!("duplicate estimator {}", e.name()));
            }
        }
        if self.cdope.truth_rollouts < 2 {
            return cfg_err("cdope.truth_rollouts", "must be at least 2");
        }

        let o = &self.ops;
        if !(o.quartile_alpha > 0.0 && o.quartile_alpha < 0.5) {
            return cfg_err("ops.quartile_alpha", "must lie in (0, 0.5)");
        }
        if !(o.cvar_alpha > 0.0 && o.cvar_alpha <= 1.0) {
            return cfg_err("ops.cvar_alpha", "must lie in (0, 1]");
        }
        if !o.relative_safety.is_finite() {
            return cfg_err("ops.relative_safety", "must be finite");
        }
        for (i, &k) in o.regret_k.iter().enumerate() {
            if k < 1 || k > n_candidates {
                return cfg_err(&format!("ops.regret_k[{i}]"), format!("must lie in 1..={n_candidates}"));
            }
        }
        let mut seen = BTreeSet::new();
        for (i, c) in o.criteria.iter().enumerate() {
            if !seen.insert(*c) {
                return cfg_err(&format!("ops.criteria[{i}]"), "duplicate criterion");
            }
        }
        let needs_cd = o.criteria.iter().any(|c| matches!(c, OpsCriterion::Cvar | OpsCriterion::LowerQuartile));
        if needs_cd && self.cdope.estimators.is_empty() {
            return cfg_err("ops.criteria", "distributional criteria need at least one cdope estimator");
        }
        Ok(())
    }

    pub fn mdp(&self) -> opeval_core::Result<MdpSpec> {
        let mdp = match &self.environment {
            EnvironmentConfig::Random {
                n_states,
                n_actions,
                horizon,
                discount,
                seed,
                reward_noise,
            } => {
                let m = make_random_mdp(*n_states, *n_actions, *horizon, *discount, *seed)?;
                match reward_noise {
                    Some(noise) => m.with_noise(*noise),
                    None => m,
                }
            }
            EnvironmentConfig::Explicit { mdp } => mdp.clone(),
        };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn candidate_names(&self) -> Vec<String> {
        self.bases
            .iter()
            .flat_map(|b| self.candidates.heads.iter().map(move |h| format!("{}_{}", b.name, head_tag(h))))
            .collect()
    }

    /// Behaviors first, then candidates base-major.
    pub fn policies(&self, mdp: &MdpSpec) -> opeval_core::Result<Vec<NamedPolicy>> {
        let base_q = |name: &str| -> QTable {
            let b = self.bases.iter().find(|b| b.name == name).expect("validated base reference");
            base_table(&b.base, mdp)
        };
        let mut out = Vec::new();
        for b in &self.behaviors {
            let head = PolicyHead {
                kind: b.head,
                base_q: base_q(&b.base),
                name: b.name.clone(),
            };
            out.push(NamedPolicy {
                role: PolicyRole::Behavior,
                policy: head.apply()?,
            });
        }
        for b in &self.bases {
            let q = base_table(&b.base, mdp);
            for h in &self.candidates.heads {
                let head = PolicyHead {
                    kind: *h,
                    base_q: q.clone(),
                    name: format!("{}_{}", b.name, head_tag(h)),
                };
                out.push(NamedPolicy {
                    role: PolicyRole::Candidate,
                    policy: head.apply()?,
                });
            }
        }
        Ok(out)
    }
}

fn bandwidth_ok(h: f64) -> bool {
    h > 0.0 && h.is_finite()
}

fn check_head(head: &HeadKind, path: &str) -> Result<()> {
    match *head {
        HeadKind::EpsilonGreedy { epsilon } if !(0.0..=1.0).contains(&epsilon) => cfg_err(&format!("{path}.epsilon"), "must lie in [0, 1]"),
        HeadKind::Softmax { temperature } if !(temperature > 0.0 && temperature.is_finite()) => {
            cfg_err(&format!("{path}.temperature"), "must be positive")
        }
        _ => Ok(()),
    }
}

pub fn base_table(base: &BaseQ, mdp: &MdpSpec) -> QTable {
    match base {
        BaseQ::Optimal => optimal_q(mdp),
        BaseQ::Pessimal => {
            let mut q = optimal_q(mdp);
            q.values.iter_mut().for_each(|v| *v = -*v);
            q
        }
        BaseQ::Myopic => QTable::from_rows(mdp.reward_mean.clone()),
        BaseQ::Random { seed } => {
            use rand::Rng;
            let mut rng = rng_from_seed(*seed);
            let rows = (0..mdp.n_states)
                .map(|_| (0..mdp.n_actions).map(|_| rng.random::<f64>()).collect())
                .collect();
            QTable::from_rows(rows)
        }
    }
}
