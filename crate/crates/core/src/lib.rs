//! Deterministic spectral limits of non-Hermitian random matrices with a
//! variance profile and a diagonal deformation.
//!
//! The crate solves the vector and matrix Dyson equations attached to a
//! block-constant profile, turns their solutions into the log-potential and
//! density of the limiting spectral measure, locates the support of the
//! limiting singular value measures (and with it the asymptotic
//! pseudospectrum), and samples finite random matrices to compare against.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod brown;
pub mod cli;
pub mod config;
pub mod digest;
pub mod dyson;
pub mod error;
pub(crate) mod fixed_point;
pub mod grid;
pub mod profiles;
pub mod rmt;
pub mod rng;
pub mod support;

pub use error::{Error, Result};
pub use num_complex::Complex64 as c64;
