// SPDX-License-Identifier: Apache-2.0

//! Offline enumeration of the segment database.

mod cycles;
mod db;
mod enumerate;
mod expand;

use thiserror::Error;

use crate::cfg::CfgError;
use crate::hpc::HpcError;

pub use cycles::elementary_circuits;
pub use db::{dedup_key, PathCandidate, Segment, SegmentDatabase, SkipTransition};
pub use enumerate::{enumerate_segments, preprocess, Budgets, PreprocessStats, SegmentStats};
pub use expand::{expand, ExpandedGraph, NodeId, DEFAULT_NODE_BUDGET};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PreprocessError {
    #[error(transparent)]
    Cfg(#[from] CfgError),
    #[error(transparent)]
    Hpc(#[from] HpcError),
    #[error("call-string expansion exceeds the node budget of {budget} (reached {reached} nodes)")]
    NodeBudget { budget: usize, reached: usize },
    #[error(
        "segment {start} -> {end} has more than {budget} simple paths; \
         add measurement points inside it or raise --budget-paths"
    )]
    PathBudget { start: String, end: String, budget: usize },
    #[error(
        "loop closure of segment {start} -> {end} has more than {budget} cycles; \
         add measurement points inside its loops or raise --budget-cycles"
    )]
    CycleBudget { start: String, end: String, budget: usize },
    #[error("segment database: {0}")]
    Schema(String),
    #[error("segment database was built for graph {found}, expected {expected}")]
    DigestMismatch { expected: String, found: String },
}
