//! Exact two-time-measurement (TTM) heat-exchange statistics for finite
//! multi-reservoir quantum systems, with determinant-level generating
//! functions for quasi-free fermions and large-time thermodynamics
//! (rate functions, CLT covariance, Onsager reciprocity).

pub mod asymptotics;
pub mod confined;
pub mod error;
pub mod fock;
pub mod models;
pub mod numerics;
pub mod quasifree;

pub use error::{Error, Result};
