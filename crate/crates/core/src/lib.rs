#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod error;
pub mod generator;
pub mod inference;
mod nn;
pub mod prior;
pub mod seed;
pub mod tasks;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
