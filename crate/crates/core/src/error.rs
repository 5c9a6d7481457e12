use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: example `{example_id}`: invalid `{field}`: {message}")]
    Validation {
        line: usize,
        example_id: String,
        field: String,
        message: String,
    },

    #[error("example `{example_id}`: labeling error: {message}")]
    Labeling { example_id: String, message: String },

    #[error("split error: {0}")]
    Split(String),

    #[error("feature error: {0}")]
    Feature(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("load error: {0}")]
    Load(String),

    #[error("render error: {0}")]
    Render(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by malformed or inconsistent input data.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Validation { .. } | Error::Labeling { .. } | Error::Load(_)
        )
    }
}
