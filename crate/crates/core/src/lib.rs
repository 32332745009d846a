#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cdr_ingest;
pub mod curve_fit;
pub mod entropy;
pub mod error;
pub mod fgd_model;
pub mod interval_stats;
pub mod markov;
pub mod pipeline;
pub mod report;
pub mod synthgen;

pub use error::{Error, Result};
