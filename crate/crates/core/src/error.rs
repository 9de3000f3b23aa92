use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("no conflict-free placement found for vehicle {0}")]
    Unplaceable(usize),
    #[error("scheduling failed after {rounds} availability adjustments: {reason}")]
    SchedulingFailure { rounds: usize, reason: String },
    #[error("relative path planning infeasible: {0}")]
    PlanningInfeasible(String),
    #[error("conflict search gave up after expanding {0} nodes")]
    SearchBudget(usize),
    #[error("longitudinal problem infeasible: {0}")]
    LongitudinalInfeasible(String),
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
