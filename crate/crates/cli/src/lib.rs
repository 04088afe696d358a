//! Experiment layer over the `freeknot` solver library: a problem
//! registry with exact solutions, a config format, run orchestration
//! with CSV traces, and Gram-matrix conditioning reports. The
//! `freeknot` binary in this crate is a thin command-line front end.

pub mod condition;
pub mod config;
pub mod registry;
pub mod runner;
