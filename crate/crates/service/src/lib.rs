//! Command line driver and HTTP API over the `partbridge` pipeline.

pub mod api;
pub mod cache;
pub mod cli;
