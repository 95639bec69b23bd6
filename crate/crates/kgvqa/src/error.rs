use thiserror::Error;

/// Unified error type for the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("duplicate parameter name: {0}")]
    DuplicateParameter(String),

    #[error("unknown parameter: {0}")]
    UnknownParameter(String),

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("unsupported checkpoint version {found} (loader supports {supported})")]
    CheckpointVersion { found: u32, supported: u32 },

    #[error("graph file format error: {0}")]
    GraphFormat(String),

    #[error("empty graph after filtering: no triple survived")]
    EmptyGraph,

    #[error("unknown symbol source: {0}")]
    UnknownSymbolSource(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("inconsistent ablation spec: {0}")]
    InconsistentAblation(String),

    #[error("infeasible generator spec: {0}")]
    InfeasibleSpec(String),

    #[error("unknown question id: {0}")]
    UnknownQuestion(String),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
