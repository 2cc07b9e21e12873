//! Process models, semialgebraic sets and risk problem instances.

pub mod dynamics;
pub mod file;
pub mod problem;
pub mod sets;

pub use dynamics::{
    augmented_vars, time_state_vars, Dynamics, DynamicsKind, Generator, NoiseChannel, NoiseLaw, NoiseMoments, STOP_VAR,
    TIME_VAR,
};
pub use file::{bundled, bundled_names, load_problem, parse_problem, ProblemFileError};
pub use problem::{interval_bound, Diagnostic, RiskKind, RiskProblem, Scaling, Severity};
pub use sets::{Ball, SemialgebraicSet};

use crate::poly::PolyError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error("noise: {0}")]
    Noise(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid problem: {0}")]
    Invalid(String),
}
