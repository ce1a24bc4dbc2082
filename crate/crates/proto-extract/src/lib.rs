//! Command-line harness and file formats around `proto-extract-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod report;
pub mod selftest;

pub use error::{Error, Result};
