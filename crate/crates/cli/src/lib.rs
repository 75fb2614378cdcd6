//! IO companion to the core solver: configuration files, pipeline
//! orchestration, artifact writers. The `selfsim` binary is a thin clap
//! front end over these modules.

pub mod config;
pub mod output;
pub mod pipeline;
