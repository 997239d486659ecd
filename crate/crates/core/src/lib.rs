// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dictionary;
pub mod error;
pub mod evaluation;
pub mod par;
pub mod phantom;
pub mod reconstruction;
pub mod solver;
pub mod tomography;
pub mod volume;

pub use error::{Error, Result};
