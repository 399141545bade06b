//! Collective household models with personality-based distribution factors.
// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod demand;
pub mod error;
pub mod estimation;
pub mod inequality;
pub mod linalg;
pub mod panel;
pub mod psychometrics;
pub mod restrictions;
pub mod sim;
pub mod stats;
pub mod summary;

pub use error::{Error, ErrorKind, Result};
