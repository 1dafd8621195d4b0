//! Stationary density estimation for additive fractional SDEs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod concentration;
pub mod density;
pub mod error;
pub mod fbm;
pub mod glselect;
pub mod kernels;
pub mod quad;
pub mod rates;
pub mod reference;
pub mod replicate;
pub mod sde;
pub mod seed;
pub mod study;

pub use error::{Error, Result};
