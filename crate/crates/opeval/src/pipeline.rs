//! Stage orchestration with content-addressed caching.
//!
//! Each stage writes its artifacts under `<out>/<stage>/` plus a `stage.json`
//! stamp holding the stage's input hash. A stage is skipped when its stamp
//! matches and every listed artifact still exists.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use opeval_core::par::Execution;
use opeval_core::rng::derive_seed;

use crate::config::ExperimentConfig;
use crate::error::{io_err, PipelineError, Result};
use crate::io::{read_json, write_json};
use crate::{report, stages};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Collect,
    Fit,
    Ope,
    Cdope,
    Ops,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Collect, Stage::Fit, Stage::Ope, Stage::Cdope, Stage::Ops];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Collect => "collect",
            Stage::Fit => "fit",
            Stage::Ope => "ope",
            Stage::Cdope => "cdope",
            Stage::Ops => "ops",
        }
    }

    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Collect => &[],
            Stage::Fit | Stage::Cdope => &[Stage::Collect],
            Stage::Ope => &[Stage::Fit],
            Stage::Ops => &[Stage::Ope, Stage::Cdope],
        }
    }

    /// Seed-derivation tag, so stages draw from disjoint streams.
    pub(crate) fn seed_tag(self) -> u64 {
        self as u64 + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ran,
    Cached,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStamp {
    pub stage: Stage,
    pub input_hash: String,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    pub input_hash: String,
    pub artifacts: Vec<String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub status: RunStatus,
    pub config_hash: String,
    pub toolkit_version: String,
    pub stages: Vec<StageRecord>,
    pub seeds: BTreeMap<String, u64>,
    pub plots: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// serde_json maps keep keys sorted, so this is canonical.
fn hash_value(v: &Value) -> String {
    sha256_hex(&serde_json::to_vec(v).expect("values serialize"))
}

pub struct Pipeline {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub exec: Execution,
}

impl Pipeline {
    pub fn new(config: ExperimentConfig, out: impl Into<PathBuf>, exec: Execution) -> Self {
        Self {
            config,
            out: out.into(),
            exec: exec.effective(),
        }
    }

    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(&self.config).expect("config serializes");
        if let Value::Object(m) = &mut v {
            m.remove("output_dir");
        }
        hash_value(&v)
    }

    pub fn stage_seed(&self, stage: Stage) -> u64 {
        derive_seed(self.config.seed, &[stage.seed_tag()])
    }

    pub fn seeds(&self) -> BTreeMap<String, u64> {
        let mut m = BTreeMap::from([("master".to_string(), self.config.seed)]);
        for s in Stage::ALL {
            m.insert(s.name().to_string(), self.stage_seed(s));
        }
        m
    }

    fn config_part(&self, stage: Stage) -> Value {
        let c = &self.config;
        match stage {
            Stage::Collect => json!({
                "seed": c.seed,
                "environment": c.environment,
                "bases": c.bases,
                "behaviors": c.behaviors,
                "candidates": c.candidates,
                "data": c.data,
            }),
            Stage::Fit => json!({ "fitting": c.fitting }),
            Stage::Ope => json!({ "seed": c.seed, "estimators": c.estimators, "confidence": c.confidence }),
            Stage::Cdope => json!({ "seed": c.seed, "cdope": c.cdope }),
            Stage::Ops => json!({ "ops": c.ops }),
        }
    }

    pub fn input_hash(&self, stage: Stage) -> String {
        let upstream: Vec<String> = stage.upstream().iter().map(|&u| self.input_hash(u)).collect();
        hash_value(&json!({
            "toolkit_version": TOOLKIT_VERSION,
            "stage": stage.name(),
            "config": self.config_part(stage),
            "upstream": upstream,
        }))
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.out.join(stage.name())
    }

    fn stamp_path(&self, stage: Stage) -> PathBuf {
        self.stage_dir(stage).join("stage.json")
    }

    fn stamp_is_current(&self, stage: Stage) -> bool {
        let Ok(stamp) = read_json::<StageStamp>(&self.stamp_path(stage)) else {
            return false;
        };
        stamp.input_hash == self.input_hash(stage) && stamp.artifacts.iter().all(|a| self.out.join(a).exists())
    }

    fn check_upstream(&self, stage: Stage) -> Result<()> {
        for &u in stage.upstream() {
            if !self.stamp_is_current(u) {
                return Err(PipelineError::MissingUpstream {
                    stage: stage.name(),
                    producer: u.name(),
                    path: self.stamp_path(u),
                });
            }
        }
        Ok(())
    }

    pub(crate) fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.out)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    }

    /// Runs one stage from persisted upstream artifacts, or reuses its cache.
    pub fn run_stage(&self, stage: Stage) -> Result<StageRecord> {
        self.check_upstream(stage)?;
        let input_hash = self.input_hash(stage);
        let started = Instant::now();
        if self.stamp_is_current(stage) {
            let stamp: StageStamp = read_json(&self.stamp_path(stage))?;
            return Ok(StageRecord {
                stage,
                status: StageStatus::Cached,
                input_hash,
                artifacts: stamp.artifacts,
                seconds: started.elapsed().as_secs_f64(),
            });
        }
        let dir = self.stage_dir(stage);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        }
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let written = match stage {
            Stage::Collect => stages::collect(self)?,
            Stage::Fit => stages::fit(self)?,
            Stage::Ope => stages::ope(self)?,
            Stage::Cdope => stages::cdope(self)?,
            Stage::Ops => stages::ops(self)?,
        };
        let artifacts: Vec<String> = written.iter().map(|p| self.relative(p)).collect();
        write_json(
            &self.stamp_path(stage),
            &StageStamp {
                stage,
                input_hash: input_hash.clone(),
                artifacts: artifacts.clone(),
            },
        )?;
        Ok(StageRecord {
            stage,
            status: StageStatus::Ran,
            input_hash,
            artifacts,
            seconds: started.elapsed().as_secs_f64(),
        })
    }

    /// All stages in order, then plot data; the manifest is written last,
    /// including after a failure.
    pub fn run(&self) -> Result<RunManifest> {
        let mut manifest = RunManifest {
            status: RunStatus::Complete,
            config_hash: self.config_hash(),
            toolkit_version: TOOLKIT_VERSION.to_string(),
            stages: Vec::new(),
            seeds: self.seeds(),
            plots: Vec::new(),
            error: None,
        };
        fs::create_dir_all(&self.out).map_err(io_err(&self.out))?;
        let outcome = (|| -> Result<()> {
            for stage in Stage::ALL {
                let started = Instant::now();
                match self.run_stage(stage) {
                    Ok(rec) => manifest.stages.push(rec),
                    Err(e) => {
                        manifest.stages.push(StageRecord {
                            stage,
                            status: StageStatus::Failed,
                            input_hash: self.input_hash(stage),
                            artifacts: Vec::new(),
                            seconds: started.elapsed().as_secs_f64(),
                        });
                        return Err(e);
                    }
                }
            }
            let plots = report::emit_all(&self.out)?;
            manifest.plots = plots.iter().map(|p| self.relative(p)).collect();
            Ok(())
        })();
        if let Err(e) = &outcome {
            manifest.status = RunStatus::Failed;
            manifest.error = Some(e.to_string());
        }
        write_json(&self.out.join("manifest.json"), &manifest)?;
        outcome.map(|_| manifest)
    }
}
