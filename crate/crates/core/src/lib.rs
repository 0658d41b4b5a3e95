//! Core solver for time-periodic phase-separation dynamics with dynamic
//! boundary conditions.
//!
//! The crate builds a coupled bulk/boundary discretization, regularizes the
//! singular potential through its resolvent, integrates the viscous
//! evolution implicitly, finds time-periodic orbits as fixed points of the
//! period map, drives the regularization parameter toward zero by
//! continuation, and monitors the norm and energy quantities the scheme is
//! expected to keep bounded along the way.

pub mod config;
pub mod diagnostics;
pub mod domain;
pub mod error;
pub mod evolution;
pub mod graphs;
pub mod periodic;
pub mod perturbation;
pub mod props;
pub mod report;
pub mod spaces;

pub use error::{Error, Result};
