//! Command-line front end: configuration, experiment modes and report output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod report;
pub mod run;
pub mod svg;
