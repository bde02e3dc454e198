// SPDX-License-Identifier: Apache-2.0

//! Annotated control-flow graphs, block traces and counter measurements.

mod document;
mod graph;
mod trace;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use document::{
    BlockDocument, CfgDocument, EdgeDocument, FunctionDocument, MeasurementDocument, MeasurementLog, SkipDocument,
    TraceDocument,
};
pub use graph::{load_cfg, AnnotatedCfg, BasicBlock, BlockId, Edge, EdgeKind, FuncId, Function, Transfer};
pub use trace::{
    segment_entry_stacks, segment_instruction_counts, split_trace, validate_trace, validate_trace_from, BlockTrace,
};

use crate::vector::CounterVector;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CfgError {
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("duplicate block id {0}")]
    DuplicateBlock(String),
    #[error("duplicate function {0}")]
    DuplicateFunction(String),
    #[error("unknown block id {0}")]
    UnknownBlock(String),
    #[error("block {block} names unknown function {function}")]
    UnknownFunction { block: String, function: String },
    #[error("function membership: {0}")]
    Membership(String),
    #[error("block {0} has neither instructions nor delta")]
    MissingAnnotation(String),
    #[error("block {block}: delta has {found} entries, expected {expected}")]
    DeltaDimension { block: String, expected: usize, found: usize },
    #[error("block {block}: instruction_count {declared} but {listed} instructions listed")]
    InstructionCount { block: String, declared: u64, listed: usize },
    #[error("dangling edge {from} -> {to}")]
    DanglingEdge { from: String, to: String },
    #[error("invalid edge {from} -> {to}: {reason}")]
    BadEdge { from: String, to: String, reason: String },
    #[error("recursion detected: {}", .0.join(","))]
    Recursion(Vec<String>),
    #[error("program entry {0} is not a measurement point")]
    EntryNotMeasurementPoint(String),
    #[error("trace is empty")]
    EmptyTrace,
    #[error("block {0} has no instructions but appears in a trace")]
    EmptyBlockInTrace(String),
    #[error("trace does not start and end at measurement points")]
    TraceEndpoints,
    #[error("trace takes no legal transition at step {0}")]
    IllegalStep(usize),
    #[error("trace refers to graph {found}, expected {expected}")]
    DigestMismatch { expected: String, found: String },
}

/// Active calls, outermost first. Each frame is the id of the call-site
/// block, which determines both the callee and the legal return sites.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CallStack {
    pub frames: Vec<String>,
}

impl CallStack {
    pub fn empty() -> Self {
        CallStack::default()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.frames.len()
    }

    /// The same stack as function names, outermost caller first.
    pub fn function_names(&self, cfg: &AnnotatedCfg) -> Option<Vec<String>> {
        self.frames.iter().map(|f| cfg.lookup(f).map(|b| cfg.function_of(b).name.clone())).collect()
    }
}

impl fmt::Display for CallStack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.frames.is_empty() {
            return write!(f, "[]");
        }
        write!(f, "[{}]", self.frames.join(">"))
    }
}

/// Counter delta observed between two consecutive measurement points.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Measurement {
    pub start: String,
    pub end: String,
    pub delta: CounterVector,
}

impl Measurement {
    pub fn to_document(&self) -> MeasurementDocument {
        MeasurementDocument { start: self.start.clone(), end: self.end.clone(), delta: self.delta.values().to_vec() }
    }

    pub fn from_document(doc: &MeasurementDocument) -> Self {
        Measurement { start: doc.start.clone(), end: doc.end.clone(), delta: CounterVector::new(doc.delta.clone()) }
    }
}
