// `!(x > 0.0)` is used on purpose: it rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod decoy;
pub mod entropy;
pub mod error;
pub mod protocol;
pub mod scenario;
pub mod security;

pub use error::{Error, Result};
