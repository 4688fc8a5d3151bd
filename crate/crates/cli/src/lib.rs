//! The `nqr` command line: benchmark generation, training, tuning,
//! evaluation, one-shot reranking and the session server.

pub mod args;
pub mod commands;
pub mod config;
pub mod data;
pub mod manifest;
pub mod svg;

pub use args::Cli;
pub use commands::run;
