//! Configuration and pipeline stages behind the `prodcast` binary.

pub mod config;
pub mod pipeline;
