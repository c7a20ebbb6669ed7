//! Experiment driver for `ipslab`: configuration, the six experiments and
//! the artifacts they write. The `ipslab` binary is a thin shell over
//! [`experiments::run`].

pub mod artifacts;
pub mod config;
pub mod experiments;
