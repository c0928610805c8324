use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is numerically singular at row {row} (pivot magnitude {pivot:e})")]
    SingularMatrix { row: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("piece {index} has non-positive duration {value}")]
    NonPositiveDuration { index: usize, value: f64 },
    #[error("time {t} outside trajectory domain [0, {total}]")]
    OutOfDomain { t: f64, total: f64 },
    #[error("point outside the map's domain: {0}")]
    DomainViolation(String),
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("polytope has an empty interior")]
    DegeneratePolytope,
    #[error("primitives do not overlap")]
    NoOverlap,
    #[error("thrust vector vanishes (free fall)")]
    SingularThrust,
    #[error("body z-axis aligned with the heading reference axis")]
    SingularYaw,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
