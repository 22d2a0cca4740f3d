use thiserror::Error;

/// Errors raised while building instances, configuring runs, or evaluating bounds.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("instance parse error at row {row}, column {column}: {message}")]
    InstanceParse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("alpha must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("gap must be strictly positive, got {0}")]
    NonPositiveGap(f64),

    #[error("degenerate instance: client {client} arm {arm} is suboptimal with zero gap")]
    DegenerateInstance { client: usize, arm: usize },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("ratings file line {line}: {message}")]
    RatingsParse { line: u64, message: String },

    #[error(
        "no ratings for client group {client_group} on arm group {arm_group}; try fewer groups"
    )]
    EmptyCell {
        client_group: usize,
        arm_group: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
