//! Quasi-Bayesian inference for nonparametric conditional moment restriction
//! models (NPIV and nonparametric quantile IV).
//!
//! The crate is organised along the estimation pipeline:
//!
//! - [`basis`]: orthonormal sieve bases on the unit cube, coefficient
//!   representation of functions, and Gram matrices.
//! - [`prior`]: truncated Gaussian-series priors and the Sobolev / RKHS /
//!   weak norms.
//! - [`model`]: residual functions, synthetic designs with known truth, and
//!   weighting matrices.
//! - [`sieve`]: the first-stage series projection and the quasi-Bayes
//!   objective.
//! - [`posterior`]: the quasi-posterior, a prior-reversible Crank-Nicolson
//!   sampler, and the closed-form Gaussian posterior for linear residuals.
//! - [`inference`]: linear functionals, credible intervals, asymptotic
//!   variances and coverage studies.

pub mod basis;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod posterior;
pub mod prior;
pub mod quadrature;
pub mod rng;
pub mod sieve;

pub use error::{Error, Result};
