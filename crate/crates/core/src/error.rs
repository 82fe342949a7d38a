use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("axis {axis} has zero sample variance")]
    DegenerateAxis { axis: usize },
    #[error("lattice construction failed: {0}")]
    Lattice(String),
    #[error("invalid distribution parameters: {0}")]
    InvalidSpec(String),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("empty input")]
    EmptyInput,
    #[error("weighted estimators require m < d (got m = {m}, d = {d})")]
    OrderConstraint { m: usize, d: usize },
    #[error("invalid model order m = {m} for d = {d}")]
    InvalidOrder { m: usize, d: usize },
    #[error("case file line {line}: {msg}")]
    CaseFile { line: usize, msg: String },
    #[error("case file is missing key `{0}`")]
    MissingKey(String),
    #[error("unknown case file key `{key}` on line {line}")]
    UnknownKey { key: String, line: usize },
}
