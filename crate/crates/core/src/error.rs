use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("unexpected column `{0}` in header")]
    UnexpectedColumn(String),
    #[error("cannot parse row {row}, column `{column}`: {detail}")]
    Parse {
        row: usize,
        column: String,
        detail: String,
    },
    #[error("person {person} has more than one row at wave {wave}")]
    DuplicatePersonWave { person: u32, wave: u32 },
    #[error("dyad {0} does not have exactly two members with distinct roles")]
    DyadNotPaired(u32),
    #[error("wave {0} is not on the time grid")]
    UnknownWave(i64),
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("cannot center an empty series")]
    EmptySeries,
    #[error("cannot center an empty set of aggregates")]
    EmptyInput,
    #[error("dyad {dyad} has no partner row at wave {wave}")]
    MissingPartnerWave { dyad: u32, wave: u32 },
    #[error("requested {requested} dyads but only {available} are available")]
    NotEnoughDyads { requested: usize, available: usize },
    #[error("invalid generating parameters: {0}")]
    InvalidParams(String),
    #[error("dataset is at the wrong schema stage (expected {expected})")]
    WrongStage { expected: &'static str },
    #[error("dataset coding ({data}) does not match the model coding ({model})")]
    CodingMismatch {
        data: &'static str,
        model: &'static str,
    },
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error("weighted fixed-effect system is singular (rank-deficient X?)")]
    SingularSystem,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("could not find a finite starting point for chain {chain} after {tries} tries")]
    ChainInitFailure { chain: usize, tries: usize },
    #[error("invalid MCMC configuration: {0}")]
    InvalidConfig(String),
    #[error("draws have zero variance")]
    ZeroVariance,
    #[error("need at least {needed} chains/draws for diagnostics, got {got}")]
    TooFewDraws { needed: usize, got: usize },
    #[error("coefficient vector has length {0}; expected 4 or 20")]
    BadLength(usize),
    #[error("all variance components are zero")]
    AllZero,
    #[error("unknown term `{0}`")]
    UnknownTerm(String),
    #[error("term lists differ: `{ml}` vs `{bayes}`")]
    TermMismatch { ml: String, bayes: String },
    #[error("malformed record: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Data,
    Estimation,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::SingularSystem
            | Error::NotPositiveDefinite
            | Error::ChainInitFailure { .. }
            | Error::ZeroVariance
            | Error::TooFewDraws { .. } => ErrorClass::Estimation,
            _ => ErrorClass::Data,
        }
    }
}
