//! Numerical laboratory for a wave field coupled to two heat reservoirs
//! through a finite ultraviolet cutoff.
//!
//! The crate assembles the cutoff drift matrix, computes its exact and
//! perturbative spectrum, tests controllability, simulates the stochastic
//! dynamics to stationarity and checks the stationary identities against
//! exact Lyapunov solutions.

// `!(x > tol)` is the NaN-rejecting form used throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod basis;
pub mod cli;
pub mod control;
pub mod linalg;
pub mod model;
pub mod operator;
pub mod perturbation;
mod precision;
pub mod report;
pub mod sde;
pub mod stationary;
pub mod stats;

pub use basis::Basis;
pub use model::{make_coupling, CouplingSpec, FieldState, GSpec, ModelConfig};
pub use operator::{assemble, decompose, CutoffOperator, ModeLabel, SpectralDecomposition};
