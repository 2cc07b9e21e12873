//! Certified upper bounds on time-windowed mean and expected-shortfall risk
//! of polynomial stochastic processes.
//!
//! The pipeline is: load a [`model::RiskProblem`], assemble a moment
//! relaxation with [`moments`], solve it with the embedded interior-point
//! solver in [`conic`] (or export it in SDPA format), then check the result
//! with [`certify`] against Monte Carlo statistics from [`montecarlo`].

pub mod certify;
pub mod conic;
pub mod model;
pub mod moments;
pub mod montecarlo;
pub mod par;
pub mod poly;

pub use poly::{MultiIndex, PolyError, Polynomial};
