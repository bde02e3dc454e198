// SPDX-License-Identifier: Apache-2.0

//! Instruction-to-event attribution, counter wiring and counter selection.

mod config;
mod density;
mod table;

use thiserror::Error;

pub use config::CounterConfig;
pub use density::{lattice_density_score, rank_counter_subsets, LatticeScore, RankedSubset};
pub use table::{block_delta, BlockDeltas, CounterInfo, EventTable, INSTRET};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HpcError {
    #[error("event table: {0}")]
    Schema(String),
    #[error("event table has no `{INSTRET}` counter")]
    MissingInstret,
    #[error("{what}: expected {expected} counters, found {found}")]
    Dimension { what: String, expected: usize, found: usize },
    #[error("block {block}: unknown mnemonic {mnemonic}")]
    UnknownMnemonic { block: String, mnemonic: String },
    #[error("block {0} carries no instruction list")]
    NoInstructions(String),
    #[error("block {0}: declared delta disagrees with its instructions")]
    InconsistentDelta(String),
    #[error("graph counters {graph:?} do not match table counters {table:?}")]
    CounterMismatch { graph: Vec<String>, table: Vec<String> },
    #[error("unknown counter {0}")]
    UnknownCounter(String),
    #[error("counter configuration selects no counters")]
    EmptyConfig,
    #[error("counter #{0} is wired to more than one register")]
    OverlappingGroups(usize),
    #[error("counter {0} is nondeterministic and cannot be used for verification")]
    Nondeterministic(String),
}
