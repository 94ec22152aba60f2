#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod channel;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod montecarlo;
pub mod onedim;
pub mod quadrature;
pub mod specfun;
pub mod validation;

pub use error::{Error, Result};
