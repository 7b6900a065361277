// `!(x > 0.0)` guards deliberately reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod error;
pub mod functions;
pub mod losses;
pub mod regression;
pub mod tensor;
pub mod training;
pub mod transforms;

pub use error::{Error, Result};
