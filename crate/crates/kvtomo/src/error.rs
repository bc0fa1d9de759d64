use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("mesh: {0}")]
    Mesh(String),
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("solver: {0}")]
    Solver(String),
    #[error("regularization parameter bracketing failed: {0}")]
    Bracketing(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{stage} stage: {source}")]
    Stage { stage: &'static str, source: Box<Error> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Tags an error with the pipeline stage it came from.
    pub fn at_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |e| Error::Stage { stage, source: Box::new(e) }
    }

    /// Innermost error, past any stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}
