use thiserror::Error;

pub type Result<T> = std::result::Result<T, FloodgateError>;

#[derive(Debug, Error)]
pub enum FloodgateError {
    /// An argument outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A user-supplied field failed validation. `field` names the offending input.
    #[error("invalid value for `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("no closed form available: {0}")]
    UnsupportedClosedForm(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("replicate {replicate}, variable {variable}: {source}")]
    InReplicate {
        replicate: usize,
        variable: usize,
        #[source]
        source: Box<FloodgateError>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl FloodgateError {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        FloodgateError::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for failures caused by the environment rather than the inputs.
    pub fn is_io(&self) -> bool {
        match self {
            FloodgateError::Io(_) => true,
            FloodgateError::InReplicate { source, .. } => source.is_io(),
            _ => false,
        }
    }
}

impl From<serde_json::Error> for FloodgateError {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            FloodgateError::Io(std::io::Error::other(e))
        } else {
            FloodgateError::Parse(e.to_string())
        }
    }
}

impl From<csv::Error> for FloodgateError {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => FloodgateError::Io(io),
                other => FloodgateError::Parse(format!("{other:?}")),
            }
        } else {
            FloodgateError::Parse(e.to_string())
        }
    }
}
