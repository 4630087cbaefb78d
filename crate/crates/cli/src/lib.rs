//! Command-line pipelines, file formats and metrics plumbing for
//! `netcarto-core`.
//!
//! Matrices travel as header-less CSV; empty cells mark unobserved entries.
//! Identifiers written to files (links, flows, paths, slots) are 1-indexed.

pub mod commands;
pub mod config;
pub mod csvio;
pub mod metrics;
pub mod oracle;
pub mod pipeline;
pub mod plot;
