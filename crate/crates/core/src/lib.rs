// Negated float comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod network;
pub mod optimum;
pub mod response;
pub mod chain;
pub mod aggregate;
pub mod design;
pub mod rng;
pub mod sim;
pub mod scenario;
pub mod landscape;
pub mod csvio;
pub mod cli;

pub use error::{Error, Result};
