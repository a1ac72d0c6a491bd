//! Simulation and numerical-verification engine for multi-color generalized
//! Friedman (Polya) urn models.
//!
//! The crate simulates urn/allocation trajectories driven by configurable
//! addition rules, computes the asymptotic Gaussian covariances of the
//! normalized fluctuations exactly, simulates the limiting Gaussian
//! processes themselves, and verifies the distributional and pathwise claims
//! by Monte Carlo at desk scale.
//!
//! Module map:
//! - [`spectral`]: generating-matrix validation and spectral analysis
//!   (stationary vector v, fluctuation generator Ht = H - 1'v, rho, nu,
//!   regime, matrix powers t^Ht).
//! - [`rules`]: addition rules (generalized play-the-winner, homogeneous
//!   finite-support, non-homogeneous wrappers) with exact declared moments.
//! - [`urn`]: the exact urn recursion, trajectory logs, martingale
//!   reconstruction and the exact decomposition identities.
//! - [`limit`]: the limiting Gaussian processes solving
//!   S_t = W_t + int S_s Ht / s ds, composite (Y, N) limit paths, residual
//!   and ensemble statistics.
//! - [`covariance`]: the theoretical limit covariances (subcritical Gamma by
//!   quadrature with an independent linear-equation cross-check, critical
//!   Gamma from the eigenstructure, play-the-winner closed forms).
//! - [`harness`]: parallel Monte Carlo experiments, envelope statistics and
//!   machine-readable reports.
//! - [`config`]: the `key = value` configuration format and rule specs.

pub mod config;
pub mod covariance;
pub mod error;
pub mod harness;
pub mod limit;
pub mod linalg;
pub mod rules;
pub mod spectral;
pub mod stats;
pub mod stream;
pub mod urn;

pub use error::{Error, Result};
