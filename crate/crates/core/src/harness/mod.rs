//! Synthetic data, dataset I/O, evaluation, configuration and the experiment
//! drivers behind the command-line tool.

pub mod ablation;
pub mod config;
pub mod dataset;
pub mod metrics;
pub mod run;
pub mod selftest;
pub mod synth;
