//! Optimal dynamic trading of portfolios of correlated Ornstein–Uhlenbeck
//! assets under power utility.
//!
//! The optimal feedback `α* = -w D(τ) x` and the value function are driven by
//! matrix Riccati ODEs in the inverse time `τ = T - t`. This crate solves
//! those ODEs, evaluates strategies and value functions, simulates wealth,
//! measures the cost of misestimated parameters through the moment Riccati
//! system, and carries closed-form special cases used as oracles.
//!
//! Module map:
//! - [`model`]: parameters, validation, normalization, exact OU stepping.
//! - [`riccati`]: operators, adaptive solver, solution grids, closed forms.
//! - [`control`]: optimal positions and value-function reports.
//! - [`wealth`]: Monte-Carlo wealth simulation and its decomposition.
//! - [`misspec`]: strategies from estimated parameters and their moments.
//! - [`analysis`]: correlation sensitivities, auxiliary closed forms, sweeps.
//! - [`verify`]: the oracle/identity suite behind the `verify` command.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod control;
mod error;
pub mod linalg;
pub mod misspec;
pub mod model;
pub mod ode;
pub mod riccati;
pub mod stats;
pub mod verify;
pub mod wealth;

pub use error::{Error, Result};
pub use model::{NormalizationRecord, OUParams, Preferences};
pub use riccati::{RiccatiSolution, SolutionKind, StepControl};
