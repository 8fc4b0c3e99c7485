use thiserror::Error;

/// Errors raised by the estimation pipeline and its file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("rank-deficient design: columns {columns:?} are (near) collinear")]
    RankDeficient { columns: Vec<String> },

    #[error("requested {requested} components but only {available} eigenpairs are available")]
    TooManyComponents { requested: usize, available: usize },

    #[error("degenerate fit at period {period}: residual standard deviation is zero")]
    DegenerateFit { period: usize },

    #[error("period {period}: {source}")]
    Period {
        period: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}:{line}: {message}")]
    Data {
        path: String,
        line: usize,
        message: String,
    },

    #[error("unsupported schema version {found} (this build reads major version {supported})")]
    SchemaVersion { found: String, supported: u32 },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_period(self, period: usize) -> Error {
        Error::Period {
            period,
            source: Box::new(self),
        }
    }

    /// True for failures caused by malformed or inconsistent input data, as
    /// opposed to numerical breakdown of an otherwise valid problem.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Period { source, .. } => source.is_data_error(),
            Error::InvalidGrid(_)
            | Error::LengthMismatch { .. }
            | Error::InvalidPanel(_)
            | Error::Data { .. }
            | Error::SchemaVersion { .. }
            | Error::Io(_)
            | Error::Json(_) => true,
            Error::InvalidArgument(_)
            | Error::RankDeficient { .. }
            | Error::TooManyComponents { .. }
            | Error::DegenerateFit { .. } => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
