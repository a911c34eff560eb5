//! Experiment runner for the parameter-efficient fine-tuning laboratory:
//! configuration files, dataset generation plumbing, training loops,
//! evaluation, and method comparison. The `wpft` binary is a thin argument
//! parser over these modules.

pub mod artifacts;
pub mod compare;
pub mod config;
pub mod eval;
pub mod schedule;
pub mod train;
