use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum HinError {
    #[error("{op}: shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: index {index} out of range for {what} of size {size}")]
    IndexOutOfRange {
        op: &'static str,
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("masked_softmax: every position is masked")]
    DegenerateMask,

    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },

    #[error("invalid {what}: {msg}")]
    Invalid { what: &'static str, msg: String },

    #[error("ingestion error in {path}, record {record}, {field}: {msg}")]
    Ingestion {
        path: String,
        record: usize,
        field: String,
        msg: String,
    },

    #[error("training diverged: non-finite loss in batch {batch} (pairs: {pairs:?})")]
    Divergence { batch: usize, pairs: Vec<String> },

    #[error("checkpoint mismatch at parameter `{param}`: {msg}")]
    CheckpointMismatch { param: String, msg: String },

    #[error("gradient check failed (max relative error {max_err:.3e}) for: {failures:?}")]
    GradCheckFailed { failures: Vec<String>, max_err: f64 },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl HinError {
    pub fn invalid(what: &'static str, msg: impl Into<String>) -> Self {
        HinError::Invalid {
            what,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        HinError::Io {
            path: path.into(),
            source,
        }
    }
}
