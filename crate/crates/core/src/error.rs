use crate::colour::DomainError;
use crate::expr::{CompileError, EvalError, ParseError};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("{context}: {source}")]
    Parse {
        context: String,
        #[source]
        source: ParseError,
    },
    #[error("{context}: {source}")]
    Compile {
        context: String,
        #[source]
        source: CompileError,
    },
    #[error("transition `{transition}`: {source}")]
    Eval {
        transition: String,
        #[source]
        source: EvalError,
    },
    #[error("unknown place `{0}`")]
    UnknownPlace(String),
    #[error("unknown transition `{0}`")]
    UnknownTransition(String),
    #[error("duplicate name `{0}`")]
    Duplicate(String),
    #[error("token {value} does not belong to the domain of place `{place}`")]
    InvalidToken { place: String, value: String },
    #[error("invalid net: {0}")]
    InvalidNet(String),
    #[error("firing of `{0}` is not enabled in this marking")]
    NotEnabled(String),
    #[error("unfolding transition `{transition}` exceeds the limit of {limit} fundamental transitions")]
    UnfoldLimit { transition: String, limit: usize },
    #[error("state space exceeds the limit of {limit} states ({frontier} markings still on the frontier)")]
    StateLimit { limit: usize, frontier: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
