use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{stage} stage: missing upstream artifact {path}; run `opeval {producer}` first")]
    MissingUpstream {
        stage: &'static str,
        producer: &'static str,
        path: PathBuf,
    },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: opeval_core::OpeError,
    },

    #[error("{0}")]
    Io(String),

    #[error("invalid argument: {0}")]
    Argument(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Argument(_) => 2,
            _ => 3,
        }
    }

    pub(crate) fn stage(stage: &'static str) -> impl Fn(opeval_core::OpeError) -> Self {
        move |source| PipelineError::Stage { stage, source }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &std::path::Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Io(format!("{}: {e}", path.display()))
}
