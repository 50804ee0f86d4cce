use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain error at {path}: {message}")]
    Domain { path: String, message: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("model error at {path}: {message}")]
    Model { path: String, message: String },

    #[error("unknown built-in model `{0}`")]
    UnknownModel(String),

    #[error("integration failed at t = {t}: {source}")]
    Integration {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("trajectory diverged at t = {t}: {message}")]
    Divergence { t: f64, message: String },

    #[error("singular-vector perturbation is numerically zero: {0}")]
    DegenerateNullspace(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn domain(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Domain {
            path: path.into(),
            message: msg.into(),
        }
    }

    pub(crate) fn model(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Model {
            path: path.into(),
            message: msg.into(),
        }
    }

    /// True for errors caused by the model description rather than by the numerics.
    pub fn is_model_error(&self) -> bool {
        matches!(
            self,
            Error::Model { .. } | Error::UnknownModel(_) | Error::Json(_)
        )
    }
}
