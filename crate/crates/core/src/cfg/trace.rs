// SPDX-License-Identifier: Apache-2.0

use super::{AnnotatedCfg, BlockId, CallStack, CfgError, TraceDocument, Transfer};

/// An executed sequence of basic blocks.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct BlockTrace {
    pub steps: Vec<BlockId>,
}

impl BlockTrace {
    pub fn new(steps: Vec<BlockId>) -> Self {
        BlockTrace { steps }
    }

    pub fn from_ids<S: AsRef<str>>(cfg: &AnnotatedCfg, ids: &[S]) -> Result<Self, CfgError> {
        let steps = ids
            .iter()
            .map(|id| cfg.lookup(id.as_ref()).ok_or_else(|| CfgError::UnknownBlock(id.as_ref().into())))
            .collect::<Result<_, _>>()?;
        Ok(BlockTrace { steps })
    }

    pub fn from_document(cfg: &AnnotatedCfg, doc: &TraceDocument) -> Result<Self, CfgError> {
        if doc.cfg_ref != cfg.digest() {
            return Err(CfgError::DigestMismatch { expected: cfg.digest().to_string(), found: doc.cfg_ref.clone() });
        }
        Self::from_ids(cfg, &doc.steps)
    }

    pub fn to_document(&self, cfg: &AnnotatedCfg) -> TraceDocument {
        TraceDocument { cfg_ref: cfg.digest().to_string(), steps: self.ids(cfg) }
    }

    pub fn ids(&self, cfg: &AnnotatedCfg) -> Vec<String> {
        self.steps.iter().map(|&b| cfg.block(b).id.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Total instructions executed by every step.
    pub fn instruction_count(&self, cfg: &AnnotatedCfg) -> u64 {
        self.steps.iter().map(|&b| cfg.block(b).instruction_count).sum()
    }
}

/// Checks that consecutive steps follow edges, calls and returns match, and
/// both endpoints are measurement points.
///
/// Returns that pop past the first step are not checked against a frame,
/// since the trace may start inside a callee.
pub fn validate_trace(cfg: &AnnotatedCfg, trace: &BlockTrace) -> Result<bool, CfgError> {
    check(cfg, trace, None)
}

/// Like [`validate_trace`], but the trace starts under `entry_stack` and every
/// return must match a frame.
pub fn validate_trace_from(cfg: &AnnotatedCfg, trace: &BlockTrace, entry_stack: &CallStack) -> Result<bool, CfgError> {
    let frames = entry_stack
        .frames
        .iter()
        .map(|f| cfg.lookup(f).ok_or_else(|| CfgError::UnknownBlock(f.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    check(cfg, trace, Some(frames))
}

fn check(cfg: &AnnotatedCfg, trace: &BlockTrace, frames: Option<Vec<BlockId>>) -> Result<bool, CfgError> {
    let (Some(&first), Some(&last)) = (trace.steps.first(), trace.steps.last()) else {
        return Err(CfgError::EmptyTrace);
    };
    if let Some(&b) = trace.steps.iter().find(|&&b| cfg.block(b).instruction_count == 0) {
        return Err(CfgError::EmptyBlockInTrace(cfg.block(b).id.clone()));
    }
    if !cfg.is_measurement_point(first) || !cfg.is_measurement_point(last) {
        return Ok(false);
    }
    let strict = frames.is_some();
    let mut stack = frames.unwrap_or_default();
    for pair in trace.steps.windows(2) {
        let (from, to) = (pair[0], pair[1]);
        match cfg.transition_kind(from, to) {
            None | Some(Transfer::ReturnLink) => return Ok(false),
            Some(Transfer::Intra) => {}
            Some(Transfer::Call) => stack.push(from),
            Some(Transfer::Return) => match stack.pop() {
                Some(site) if !cfg.returns_to(site, to) => return Ok(false),
                Some(_) => {}
                None if strict => return Ok(false),
                None => {}
            },
        }
    }
    Ok(true)
}

/// Splits a trace at its measurement points. Adjacent segments share their
/// boundary block; a single-point trace yields no segments.
pub fn split_trace(cfg: &AnnotatedCfg, trace: &BlockTrace) -> Result<Vec<BlockTrace>, CfgError> {
    let (Some(&first), Some(&last)) = (trace.steps.first(), trace.steps.last()) else {
        return Err(CfgError::EmptyTrace);
    };
    if !cfg.is_measurement_point(first) || !cfg.is_measurement_point(last) {
        return Err(CfgError::TraceEndpoints);
    }
    let points: Vec<usize> =
        trace.steps.iter().enumerate().filter(|(_, &b)| cfg.is_measurement_point(b)).map(|(i, _)| i).collect();
    Ok(points.windows(2).map(|w| BlockTrace::new(trace.steps[w[0]..=w[1]].to_vec())).collect())
}

/// Call stack in effect at the start of each segment, for a trace that
/// begins at the program entry with no active calls.
pub fn segment_entry_stacks(cfg: &AnnotatedCfg, trace: &BlockTrace) -> Result<Vec<CallStack>, CfgError> {
    let Some(&first) = trace.steps.first() else {
        return Err(CfgError::EmptyTrace);
    };
    let mut stack: Vec<BlockId> = Vec::new();
    let mut stacks = Vec::new();
    let snapshot = |stack: &[BlockId]| CallStack { frames: stack.iter().map(|&b| cfg.block(b).id.clone()).collect() };
    if cfg.is_measurement_point(first) {
        stacks.push(snapshot(&stack));
    }
    for (i, pair) in trace.steps.windows(2).enumerate() {
        let (from, to) = (pair[0], pair[1]);
        match cfg.transition_kind(from, to) {
            Some(Transfer::Intra) => {}
            Some(Transfer::Call) => stack.push(from),
            Some(Transfer::Return) => match stack.pop() {
                Some(site) if cfg.returns_to(site, to) => {}
                _ => return Err(CfgError::IllegalStep(i + 1)),
            },
            None | Some(Transfer::ReturnLink) => return Err(CfgError::IllegalStep(i + 1)),
        }
        if cfg.is_measurement_point(to) && i + 2 < trace.steps.len() {
            stacks.push(snapshot(&stack));
        }
    }
    Ok(stacks)
}

/// Instructions attributed to each segment: a segment owns every block
/// after its start point, and the first segment also owns its start block.
pub fn segment_instruction_counts(cfg: &AnnotatedCfg, segments: &[BlockTrace]) -> Vec<u64> {
    segments
        .iter()
        .enumerate()
        .map(|(i, seg)| {
            let skip = if i == 0 { 0 } else { 1 };
            seg.steps.iter().skip(skip).map(|&b| cfg.block(b).instruction_count).sum()
        })
        .collect()
}
