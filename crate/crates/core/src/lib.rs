// `!(a < b)` comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod eval;
pub mod fem;
pub mod linalg;
pub mod nn;
pub mod probgen;
pub mod simp;
pub mod toponet;

pub use error::{Error, Result};
