// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PreprocessError;
use crate::cfg::{AnnotatedCfg, CallStack};
use crate::hpc::CounterInfo;
use crate::vector::CounterVector;

/// One simple path between two measurement points together with the loops
/// reachable from it.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathCandidate {
    pub entry_stack: CallStack,
    pub exit_stack: CallStack,
    pub base: CounterVector,
    pub base_instruction_count: u64,
    pub loops: Vec<CounterVector>,
    pub loop_instruction_counts: Vec<u64>,
}

/// Call-stack transition through a segment the verifier does not check.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkipTransition {
    pub entry_stack: CallStack,
    pub exit_stack: CallStack,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub start: String,
    pub end: String,
    pub candidates: Vec<PathCandidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip: Option<Vec<SkipTransition>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatabaseDocument {
    cfg_digest: String,
    counters: Vec<CounterInfo>,
    dimension: usize,
    segments: Vec<Segment>,
}

/// Candidates for every pair of measurement points, keyed by block ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentDatabase {
    pub cfg_digest: String,
    pub counters: Vec<CounterInfo>,
    segments: BTreeMap<(String, String), Segment>,
}

impl SegmentDatabase {
    pub fn new(cfg_digest: String, counters: Vec<CounterInfo>, segments: Vec<Segment>) -> Self {
        let segments = segments.into_iter().map(|s| ((s.start.clone(), s.end.clone()), s)).collect();
        SegmentDatabase { cfg_digest, counters, segments }
    }

    pub fn dimension(&self) -> usize {
        self.counters.len()
    }

    pub fn segment(&self, start: &str, end: &str) -> Option<&Segment> {
        self.segments.get(&(start.to_string(), end.to_string()))
    }

    pub fn segments(&self) -> impl Iterator<Item = &Segment> {
        self.segments.values()
    }

    pub fn candidate_count(&self) -> usize {
        self.segments.values().map(|s| s.candidates.len()).sum()
    }

    pub fn to_json(&self) -> String {
        let doc = DatabaseDocument {
            cfg_digest: self.cfg_digest.clone(),
            counters: self.counters.clone(),
            dimension: self.dimension(),
            segments: self.segments.values().cloned().collect(),
        };
        serde_json::to_string(&doc).expect("serializable database")
    }

    pub fn from_json(text: &str) -> Result<Self, PreprocessError> {
        let doc: DatabaseDocument = serde_json::from_str(text).map_err(|e| PreprocessError::Schema(e.to_string()))?;
        if doc.dimension != doc.counters.len() {
            return Err(PreprocessError::Schema(format!(
                "dimension {} does not match {} counters",
                doc.dimension,
                doc.counters.len()
            )));
        }
        for s in &doc.segments {
            for c in &s.candidates {
                let bad_dim = c.base.dim() != doc.dimension || c.loops.iter().any(|l| l.dim() != doc.dimension);
                if bad_dim || c.loops.len() != c.loop_instruction_counts.len() {
                    return Err(PreprocessError::Schema(format!(
                        "malformed candidate in segment {} -> {}",
                        s.start, s.end
                    )));
                }
            }
        }
        Ok(SegmentDatabase::new(doc.cfg_digest, doc.counters, doc.segments))
    }

    /// Fails unless the database was built from `cfg`.
    pub fn check_digest(&self, cfg: &AnnotatedCfg) -> Result<(), PreprocessError> {
        if self.cfg_digest != cfg.digest() {
            return Err(PreprocessError::DigestMismatch {
                expected: cfg.digest().to_string(),
                found: self.cfg_digest.clone(),
            });
        }
        Ok(())
    }
}

/// Content-derived cache key for a segment verification: equal endpoints,
/// measurement and entry stacks give equal keys across runs.
pub fn dedup_key<'a>(
    start: &str,
    end: &str,
    measurement: &CounterVector,
    entry_stacks: impl IntoIterator<Item = &'a CallStack>,
) -> String {
    let mut stacks: Vec<&CallStack> = entry_stacks.into_iter().collect();
    stacks.sort();
    stacks.dedup();
    let payload = serde_json::to_vec(&(start, end, measurement, stacks)).expect("serializable key");
    hex::encode(Sha256::digest(&payload))
}
