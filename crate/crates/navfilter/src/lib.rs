//! Batch front-end for the SE2(3) navigation filter: EuRoC-style file
//! ingestion, TOML configuration, simulate/replay runs and property checks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod euroc;
pub mod harness;
pub mod scenarios;
pub mod validate;
