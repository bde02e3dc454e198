// SPDX-License-Identifier: Apache-2.0

//! Online verification of measurement sequences against the segment database.

mod cone;
mod simplex;

use std::collections::{BTreeSet, HashMap};
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::cfg::{CallStack, Measurement};
use crate::hpc::{CounterConfig, HpcError};
use crate::preprocess::{dedup_key, PathCandidate, SegmentDatabase};
use crate::vector::CounterVector;

pub use cone::{cone_member, solve_cone, ConeOutcome, ConeProblem};
pub use simplex::feasible_point;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerifyError {
    #[error(transparent)]
    Hpc(#[from] HpcError),
    #[error("measurement log counters {log:?} cannot be read from database counters {db:?}")]
    Counters { log: Vec<String>, db: Vec<String> },
    #[error("offset has {found} components, expected {expected}")]
    Offset { expected: usize, found: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accepted,
    Rejected,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VerificationResult {
    pub verdict: Verdict,
    /// Why the segment was rejected, if it was.
    pub reason: Option<String>,
    /// Indices into the segment's candidate list; one per distinct exit stack.
    pub accepting_candidates: Vec<usize>,
    /// Loop multiplicities for the first accepting candidate.
    pub witness: Option<Vec<u64>>,
    pub candidates_tried: usize,
    pub solver_nodes: u64,
    pub cache_hit: bool,
    pub elapsed: Duration,
}

#[derive(Clone, Debug)]
struct Cached {
    verdict: Verdict,
    reason: Option<String>,
    accepting: Vec<usize>,
    witness: Option<Vec<u64>>,
    feasible: BTreeSet<CallStack>,
    candidates_tried: usize,
}

/// Per-session verification state: the call stacks the program may be in
/// and the duplicate-segment cache.
#[derive(Clone, Debug)]
pub struct SessionState {
    pub feasible: BTreeSet<CallStack>,
    pub rejected: bool,
    cache: HashMap<String, Cached>,
    pub cache_hits: u64,
    pub cache_misses: u64,
}

impl Default for SessionState {
    fn default() -> Self {
        SessionState::new()
    }
}

impl SessionState {
    /// A fresh session at program entry (empty call stack).
    pub fn new() -> Self {
        Self::with_feasible(BTreeSet::from([CallStack::empty()]))
    }

    pub fn with_feasible(feasible: BTreeSet<CallStack>) -> Self {
        SessionState { feasible, rejected: false, cache: HashMap::new(), cache_hits: 0, cache_misses: 0 }
    }

    pub fn cache_hit_ratio(&self) -> f64 {
        let total = self.cache_hits + self.cache_misses;
        if total == 0 {
            0.0
        } else {
            self.cache_hits as f64 / total as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct ProjectedCandidate {
    entry: CallStack,
    exit: CallStack,
    base: CounterVector,
    loops: Vec<CounterVector>,
}

/// Verifies measurements taken under one counter configuration.
#[derive(Clone, Debug)]
pub struct Verifier<'a> {
    db: &'a SegmentDatabase,
    config: CounterConfig,
    offset: Option<CounterVector>,
    cache: bool,
    /// Per segment: (database index, projected candidate), in solving order.
    projected: HashMap<(String, String), Vec<(usize, ProjectedCandidate)>>,
}

fn project_candidate(config: &CounterConfig, c: &PathCandidate) -> ProjectedCandidate {
    let mut loops: Vec<CounterVector> = Vec::with_capacity(c.loops.len());
    for l in &c.loops {
        let p = config.project(l);
        if !p.is_zero() {
            loops.push(p);
        }
    }
    ProjectedCandidate {
        entry: c.entry_stack.clone(),
        exit: c.exit_stack.clone(),
        base: config.project(&c.base),
        loops,
    }
}

impl<'a> Verifier<'a> {
    /// A verifier reading registers wired as `config` over the database's
    /// counters. Nondeterministic events are refused.
    pub fn new(db: &'a SegmentDatabase, config: CounterConfig) -> Result<Self, VerifyError> {
        if config.input_dimension() != db.dimension() {
            return Err(VerifyError::Hpc(HpcError::Dimension {
                what: "counter configuration".into(),
                expected: db.dimension(),
                found: config.input_dimension(),
            }));
        }
        config.check_deterministic(&db.counters)?;
        let projected = db
            .segments()
            .map(|s| {
                let mut cands: Vec<(usize, ProjectedCandidate)> =
                    s.candidates.iter().map(|c| project_candidate(&config, c)).enumerate().collect();
                cands.sort_by_key(|(i, c)| (c.loops.len(), *i));
                ((s.start.clone(), s.end.clone()), cands)
            })
            .collect();
        Ok(Verifier { db, config, offset: None, cache: true, projected })
    }

    /// A verifier for a measurement log whose registers are named `names`
    /// (composites joined with `+`).
    pub fn for_counters(db: &'a SegmentDatabase, names: &[String]) -> Result<Self, VerifyError> {
        let spec = names.join(",");
        let config = CounterConfig::parse(&spec, &db.counters).map_err(|_| VerifyError::Counters {
            log: names.to_vec(),
            db: db.counters.iter().map(|c| c.name.clone()).collect(),
        })?;
        Self::new(db, config)
    }

    /// Constant per-segment measurement overhead, in projected registers.
    pub fn with_offset(mut self, offset: Option<CounterVector>) -> Result<Self, VerifyError> {
        if let Some(o) = &offset {
            if o.dim() != self.config.output_dimension() {
                return Err(VerifyError::Offset { expected: self.config.output_dimension(), found: o.dim() });
            }
        }
        self.offset = offset;
        Ok(self)
    }

    pub fn with_cache(mut self, enabled: bool) -> Self {
        self.cache = enabled;
        self
    }

    pub fn config(&self) -> &CounterConfig {
        &self.config
    }

    pub fn database(&self) -> &SegmentDatabase {
        self.db
    }

    fn reject(state: &mut SessionState, reason: &str, started: Instant) -> VerificationResult {
        state.rejected = true;
        VerificationResult {
            verdict: Verdict::Rejected,
            reason: Some(reason.to_string()),
            accepting_candidates: Vec::new(),
            witness: None,
            candidates_tried: 0,
            solver_nodes: 0,
            cache_hit: false,
            elapsed: started.elapsed(),
        }
    }

    /// Decides one segment and updates `state`.
    pub fn verify_segment(&self, state: &mut SessionState, m: &Measurement) -> VerificationResult {
        let started = Instant::now();
        if state.rejected {
            return Self::reject(state, "session-rejected", started);
        }
        if m.delta.dim() != self.config.output_dimension() {
            return Self::reject(state, "dimension-mismatch", started);
        }
        let Some(segment) = self.db.segment(&m.start, &m.end) else {
            return Self::reject(state, "no-such-segment", started);
        };

        if let Some(skip) = &segment.skip {
            let mut next: BTreeSet<CallStack> =
                skip.iter().filter(|t| state.feasible.contains(&t.entry_stack)).map(|t| t.exit_stack.clone()).collect();
            if next.is_empty() {
                next = skip.iter().map(|t| t.exit_stack.clone()).collect();
            }
            state.feasible = next;
            return VerificationResult {
                verdict: Verdict::Accepted,
                reason: None,
                accepting_candidates: Vec::new(),
                witness: None,
                candidates_tried: 0,
                solver_nodes: 0,
                cache_hit: false,
                elapsed: started.elapsed(),
            };
        }

        let delta = match &self.offset {
            None => m.delta.clone(),
            Some(o) => match m.delta.checked_sub(o) {
                Some(d) => d,
                None => return Self::reject(state, "below-offset", started),
            },
        };

        let key = self.cache.then(|| dedup_key(&m.start, &m.end, &delta, &state.feasible));
        if let Some(hit) = key.as_ref().and_then(|k| state.cache.get(k)) {
            let hit = hit.clone();
            state.cache_hits += 1;
            return self.apply(state, hit, 0, true, started);
        }
        state.cache_misses += 1;

        let projected = &self.projected[&(m.start.clone(), m.end.clone())];
        let mut accepting = Vec::new();
        let mut witness = None;
        let mut exits = BTreeSet::new();
        let mut tried = 0;
        let mut nodes = 0;
        for (index, cand) in projected.iter().map(|(i, c)| (*i, c)) {
            if !state.feasible.contains(&cand.entry) || exits.contains(&cand.exit) {
                continue;
            }
            tried += 1;
            let outcome = solve_cone(&ConeProblem::from_measurement(&delta, &cand.base, &cand.loops));
            nodes += outcome.nodes;
            if let Some(w) = outcome.witness {
                if witness.is_none() {
                    witness = Some(self.expand_witness(&segment.candidates[index], &w));
                }
                accepting.push(index);
                exits.insert(cand.exit.clone());
            }
        }
        let result = if accepting.is_empty() {
            Cached {
                verdict: Verdict::Rejected,
                reason: Some("no-candidate".into()),
                accepting,
                witness: None,
                feasible: state.feasible.clone(),
                candidates_tried: tried,
            }
        } else {
            Cached {
                verdict: Verdict::Accepted,
                reason: None,
                accepting,
                witness,
                feasible: exits,
                candidates_tried: tried,
            }
        };
        if let Some(k) = key {
            state.cache.insert(k, result.clone());
        }
        self.apply(state, result, nodes, false, started)
    }

    /// Maps a witness over the projected nonzero loops back onto the
    /// candidate's full loop list.
    fn expand_witness(&self, c: &PathCandidate, w: &[u64]) -> Vec<u64> {
        let mut out = vec![0; c.loops.len()];
        let mut k = 0;
        for (i, l) in c.loops.iter().enumerate() {
            if !self.config.project(l).is_zero() {
                out[i] = w[k];
                k += 1;
            }
        }
        out
    }

    fn apply(
        &self,
        state: &mut SessionState,
        c: Cached,
        nodes: u64,
        hit: bool,
        started: Instant,
    ) -> VerificationResult {
        match c.verdict {
            Verdict::Accepted => state.feasible = c.feasible,
            Verdict::Rejected => state.rejected = true,
        }
        VerificationResult {
            verdict: c.verdict,
            reason: c.reason,
            accepting_candidates: c.accepting,
            witness: c.witness,
            candidates_tried: c.candidates_tried,
            solver_nodes: nodes,
            cache_hit: hit,
            elapsed: started.elapsed(),
        }
    }

    /// Verifies a whole measurement sequence from program entry, stopping at
    /// the first rejection.
    pub fn verify_trace_measurements(&self, measurements: &[Measurement]) -> TraceReport {
        let mut state = SessionState::new();
        let mut results = Vec::with_capacity(measurements.len());
        for m in measurements {
            let r = self.verify_segment(&mut state, m);
            let rejected = r.verdict == Verdict::Rejected;
            results.push(r);
            if rejected {
                break;
            }
        }
        TraceReport::new(measurements, results, &state)
    }
}

/// Outcome of verifying one measurement sequence.
#[derive(Clone, Debug)]
pub struct TraceReport {
    pub segments: Vec<(Measurement, VerificationResult)>,
    pub total: usize,
    pub rejected_at: Option<usize>,
    pub cache_hits: u64,
    pub cache_misses: u64,
}

impl TraceReport {
    fn new(measurements: &[Measurement], results: Vec<VerificationResult>, state: &SessionState) -> Self {
        let rejected_at = results.iter().position(|r| r.verdict == Verdict::Rejected);
        TraceReport {
            segments: measurements.iter().cloned().zip(results).collect(),
            total: measurements.len(),
            rejected_at,
            cache_hits: state.cache_hits,
            cache_misses: state.cache_misses,
        }
    }

    pub fn accepted(&self) -> bool {
        self.rejected_at.is_none() && self.segments.len() == self.total
    }

    /// Solver invocations, counting cached segments once.
    pub fn solver_invocations(&self) -> u64 {
        self.cache_misses
    }

    pub fn cache_hit_ratio(&self) -> f64 {
        let total = self.cache_hits + self.cache_misses;
        if total == 0 {
            0.0
        } else {
            self.cache_hits as f64 / total as f64
        }
    }

    /// The report document. Wall-clock times are included only on request
    /// so that the default document is reproducible.
    pub fn to_document(&self, timings: bool) -> ReportDocument {
        let segments = self
            .segments
            .iter()
            .enumerate()
            .map(|(index, (m, r))| SegmentRecord {
                index,
                start: m.start.clone(),
                end: m.end.clone(),
                verdict: r.verdict,
                reason: r.reason.clone(),
                witness: r.witness.clone(),
                candidates_tried: r.candidates_tried,
                solver_nodes: r.solver_nodes,
                cache_hit: r.cache_hit,
                elapsed: timings.then_some(r.elapsed.as_secs_f64()),
            })
            .collect();
        ReportDocument {
            segments,
            summary: Summary {
                segments: self.total,
                accepted: self.accepted(),
                rejected_at: self.rejected_at,
                cache_hits: self.cache_hits,
                cache_misses: self.cache_misses,
                cache_hit_ratio: self.cache_hit_ratio(),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SegmentRecord {
    pub index: usize,
    pub start: String,
    pub end: String,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Vec<u64>>,
    pub candidates_tried: usize,
    pub solver_nodes: u64,
    pub cache_hit: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elapsed: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub segments: usize,
    pub accepted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rejected_at: Option<usize>,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub cache_hit_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportDocument {
    pub segments: Vec<SegmentRecord>,
    pub summary: Summary,
}
