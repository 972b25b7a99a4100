use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum CsvmError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty input")]
    EmptyInput,

    #[error("more than two classes: {0:?}")]
    TooManyClasses(Vec<String>),

    #[error("dataset must contain both labels")]
    SingleClass,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("filter length {n_var} exceeds attribute count {n_att}")]
    FilterTooLong { n_var: usize, n_att: usize },

    #[error("depth {depth} out of range 0..={max}")]
    DepthOutOfRange { depth: usize, max: usize },

    #[error("invalid fold count {k} for {n_rec} records")]
    InvalidFoldCount { k: usize, n_rec: usize },

    #[error("non-finite attribute value in record {0}")]
    NonFinite(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CsvmError>;

impl CsvmError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        CsvmError::InvalidParameter(msg.into())
    }

    /// True for errors caused by the input data rather than by the caller.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            CsvmError::Parse { .. }
                | CsvmError::EmptyInput
                | CsvmError::TooManyClasses(_)
                | CsvmError::SingleClass
                | CsvmError::DimensionMismatch { .. }
                | CsvmError::NonFinite(_)
                | CsvmError::Io(_)
                | CsvmError::Json(_)
        )
    }
}
