#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bootstrap;
pub mod cli;
pub mod config;
pub mod error;
pub mod estimators;
pub mod likelihood;
pub mod model;
pub mod optimize;
pub mod quadrature;
pub mod rng;
pub mod sample_file;
pub mod sampling;
pub mod simulation;

pub use error::{Error, Result};
