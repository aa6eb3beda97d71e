#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod checkpoint;
pub mod demo;
pub mod error;
pub mod harness;
pub mod maze;
pub mod nn;
pub mod predictor;
pub mod skill;

pub use error::{Error, Result};
