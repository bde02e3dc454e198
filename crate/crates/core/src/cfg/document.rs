// SPDX-License-Identifier: Apache-2.0

//! JSON document schemas for graphs, traces and measurements.

use serde::{Deserialize, Serialize};

use super::EdgeKind;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CfgDocument {
    pub counters: Vec<String>,
    pub functions: Vec<FunctionDocument>,
    pub blocks: Vec<BlockDocument>,
    pub edges: Vec<EdgeDocument>,
    pub entry: String,
    /// Segments whose verification is skipped (accepted vacuously).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skip_segments: Vec<SkipDocument>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionDocument {
    pub name: String,
    pub entry: String,
    pub blocks: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockDocument {
    pub id: String,
    pub function: String,
    pub instruction_count: u64,
    pub is_measurement_point: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instructions: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<Vec<u64>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDocument {
    pub from: String,
    pub to: String,
    pub kind: EdgeKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkipDocument {
    pub start: String,
    pub end: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceDocument {
    pub cfg_ref: String,
    pub steps: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementDocument {
    pub start: String,
    pub end: String,
    pub delta: Vec<u64>,
}

/// A sequence of measurements tied to the graph they were taken on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementLog {
    pub cfg_ref: String,
    /// Names of the measured counters, composites joined with `+`.
    pub counters: Vec<String>,
    pub measurements: Vec<MeasurementDocument>,
}
