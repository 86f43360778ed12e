// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admm;
pub mod assets;
pub mod codec;
pub mod dict_learn;
pub mod dictionary;
pub mod error;
pub mod experiments;
pub mod pursuit;
pub mod rate_model;
pub mod setcoder;
pub mod synth;

pub use error::{Error, Result};
