//! Lasso estimation, Lasso–Ridge refinement, risk-dominance bounds and
//! Monte Carlo certification of the dominance.

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod config;
pub mod designs;
pub mod error;
pub mod experiments;
pub mod lasso;
pub mod numerics;
pub mod refine;
pub mod rng;
pub mod verify;

pub use error::{Error, Result};
pub use numerics::{Matrix, Vector};
