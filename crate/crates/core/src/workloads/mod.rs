//! Case studies built purely on [`crate::runtime`]: a distributed hash table
//! with rehashing, money transfer between banks, shortest paths over a
//! distributed graph, and the ping benchmark.
//!
//! Each workload runs under both scheduling modes and reports enough to be
//! checked against a sequential oracle.

pub mod bank;
pub mod dht;
pub mod graph;
pub mod ping;

use thiserror::Error;

use crate::runtime::RuntimeError;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkloadError {
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("key {0} not found")]
    KeyNotFound(u64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
