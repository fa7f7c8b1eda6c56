// Negated comparisons are how NaN inputs get rejected alongside out-of-range ones.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod nn;
pub mod rng;

pub use error::{LnmError, Result};
pub use rng::RngState;
pub mod dataset;
pub mod eval;
pub mod harness;
pub mod methods;
pub mod noise;
