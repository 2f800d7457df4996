use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report, grouped so the CLI can map each to
/// an exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("schema error at line {line}: {msg}")]
    Schema { line: u64, msg: String },

    #[error("empty dataset: {}", .0.display())]
    EmptyDataset(PathBuf),

    #[error("task/data mismatch: {0}")]
    TaskData(String),

    #[error("index out of bounds: {0}")]
    Bounds(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("checkpoint version mismatch: {0}")]
    Version(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 2 config, 3 data, 4 numeric, 5 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Version(_) => 2,
            Error::Parse { .. }
            | Error::Schema { .. }
            | Error::EmptyDataset(_)
            | Error::TaskData(_)
            | Error::Io(_) => 3,
            Error::Numeric(_) => 4,
            Error::Bounds(_)
            | Error::Sampling(_)
            | Error::Shape(_)
            | Error::Contract(_)
            | Error::MetricUndefined(_)
            | Error::Json(_) => 5,
        }
    }

    pub(crate) fn shape(op: &str, a: &[usize], b: &[usize]) -> Self {
        Error::Shape(format!("{op}: incompatible shapes {a:?} and {b:?}"))
    }
}
