#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocator;
pub mod baselines;
pub mod cli;
pub mod dpo;
pub mod dsl;
pub mod error;
pub mod evolve;
pub mod fitness;
pub mod fixtures;
pub mod generator;
pub mod quantsim;
pub mod smallnet;

pub use error::{Error, Result};
