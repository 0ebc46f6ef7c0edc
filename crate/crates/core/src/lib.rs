//! Online interior-point methods for time-varying equality-constrained conic programs.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod barrier;
pub mod centering;
pub mod checks;
pub mod error;
pub mod kkt;
pub mod ldl;
pub mod metrics;
pub mod opf;
pub mod problem;
pub mod runner;
pub mod solver;
pub mod synthetic;

pub use error::{Error, Result};
