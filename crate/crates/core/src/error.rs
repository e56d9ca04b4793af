use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("profile construction failed: {0}")]
    ProfileConstruction(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("stability violation: {0}")]
    Stability(String),

    #[error("certificate `{name}` failed: {detail}")]
    Certificate { name: String, detail: String },

    #[error("budget infeasible: {0}")]
    BudgetInfeasible(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid field file: {0}")]
    FieldFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn certificate(name: &str, detail: impl Into<String>) -> Self {
        Error::Certificate {
            name: name.to_string(),
            detail: detail.into(),
        }
    }
}
