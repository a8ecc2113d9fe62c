// NaN must fail validation, so `!(x > 0.0)` is intended.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod config;
pub mod harness;
pub mod metrics;
pub mod net;
pub mod policy;
pub mod runner;
pub mod sim;
pub mod switch;
pub mod transport;
pub mod workload;
pub mod world;
