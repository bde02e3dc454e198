// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeSet, HashMap};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;

use super::mutate::{MutationKind, MutationSpec, Mutator};
use super::AttackError;
use crate::cfg::{
    segment_entry_stacks, segment_instruction_counts, split_trace, AnnotatedCfg, BlockTrace, CallStack, Measurement,
};
use crate::preprocess::SegmentDatabase;
use crate::sim::Simulator;
use crate::verifier::{SessionState, Verdict, Verifier};

/// Result of one experiment on one distinct segment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SegmentOutcome {
    /// Index of the first occurrence in the trace.
    pub index: usize,
    pub start: String,
    pub end: String,
    /// Occurrences in the trace with the same blocks, entry stack and
    /// feasible set.
    pub occurrences: u64,
    /// Instructions over all occurrences.
    pub instruction_count: u64,
    pub attempted: usize,
    pub detected: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SegmentOutcome {
    pub fn rate(&self) -> Option<BigRational> {
        (self.attempted > 0).then(|| ratio(self.detected as u64, self.attempted as u64))
    }
}

fn ratio(a: u64, b: u64) -> BigRational {
    BigRational::new(BigInt::from(a), BigInt::from(b))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReliabilityReport {
    pub spec: MutationSpec,
    pub per_segment: Vec<SegmentOutcome>,
    /// Mean detection rate over segment occurrences.
    pub metric_uniform: Option<BigRational>,
    /// Detection rate weighted by instruction count.
    pub metric_weighted: Option<BigRational>,
}

impl ReliabilityReport {
    /// Aggregates per-segment outcomes. Segments without mutants are left
    /// out of both means; `None` if none remain.
    pub fn from_outcomes(spec: MutationSpec, per_segment: Vec<SegmentOutcome>) -> Self {
        let mut occ = BigRational::zero();
        let mut occ_rate = BigRational::zero();
        let mut instr = BigRational::zero();
        let mut instr_rate = BigRational::zero();
        for s in &per_segment {
            let Some(rate) = s.rate() else { continue };
            let o = ratio(s.occurrences, 1);
            let i = ratio(s.instruction_count, 1);
            occ_rate += &rate * &o;
            occ += o;
            instr_rate += &rate * &i;
            instr += i;
        }
        ReliabilityReport {
            spec,
            metric_uniform: (!occ.is_zero()).then(|| occ_rate / occ),
            metric_weighted: (!instr.is_zero()).then(|| instr_rate / instr),
            per_segment,
        }
    }

    pub fn to_document(&self) -> ReliabilityDocument {
        let show = |q: &Option<BigRational>| q.as_ref().map(|q| q.to_string());
        let float = |q: &Option<BigRational>| q.as_ref().and_then(|q| q.to_f64());
        ReliabilityDocument {
            kind: self.spec.kind,
            repetitions: self.spec.repetitions,
            seed: self.spec.seed,
            perturbation: (self.spec.kind == MutationKind::RandomChange).then_some(PERTURBATION_NOTE),
            metric_uniform: show(&self.metric_uniform),
            metric_weighted: show(&self.metric_weighted),
            uniform: float(&self.metric_uniform),
            weighted: float(&self.metric_weighted),
            segments: self.per_segment.clone(),
        }
    }
}

const PERTURBATION_NOTE: &str = "each counter perturbed independently within +-floor(v/10)";

#[derive(Clone, Debug, Serialize)]
pub struct ReliabilityDocument {
    pub kind: MutationKind,
    pub repetitions: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<&'static str>,
    pub metric_uniform: Option<String>,
    pub metric_weighted: Option<String>,
    pub uniform: Option<f64>,
    pub weighted: Option<f64>,
    pub segments: Vec<SegmentOutcome>,
}

/// A distinct segment of the trace together with its verification context.
struct Group {
    index: usize,
    segment: BlockTrace,
    entry_stack: CallStack,
    feasible: BTreeSet<CallStack>,
    measured: Measurement,
    occurrences: u64,
    instructions: u64,
}

/// Mutates every segment of `trace` under each spec and reports how often
/// the verifier rejects the mutants.
pub fn evaluate(
    cfg: &AnnotatedCfg,
    db: &SegmentDatabase,
    sim: &Simulator<'_>,
    trace: &BlockTrace,
    specs: &[MutationSpec],
) -> Result<Vec<ReliabilityReport>, AttackError> {
    db.check_digest(cfg)?;
    let segments = split_trace(cfg, trace)?;
    let stacks = segment_entry_stacks(cfg, trace)?;
    let counts = segment_instruction_counts(cfg, &segments);
    let verifier = Verifier::new(db, sim.config().clone())?.with_cache(false);

    let mut state = SessionState::new();
    let mut groups: Vec<Group> = Vec::new();
    let mut lookup: HashMap<(&[_], &CallStack, BTreeSet<CallStack>), usize> = HashMap::new();
    for (i, seg) in segments.iter().enumerate() {
        let feasible = state.feasible.clone();
        let measured = sim.measure_segment(seg);
        if verifier.verify_segment(&mut state, &measured).verdict == Verdict::Rejected {
            return Err(AttackError::TraceRejected(i));
        }
        let key = (seg.steps.as_slice(), &stacks[i], feasible.clone());
        match lookup.get(&key) {
            Some(&g) => {
                groups[g].occurrences += 1;
                groups[g].instructions += counts[i];
            }
            None => {
                lookup.insert(key, groups.len());
                groups.push(Group {
                    index: i,
                    segment: seg.clone(),
                    entry_stack: stacks[i].clone(),
                    feasible,
                    measured,
                    occurrences: 1,
                    instructions: counts[i],
                });
            }
        }
    }
    drop(lookup);

    let mutator = Mutator::new(cfg, sim);
    Ok(specs
        .iter()
        .map(|spec| {
            let outcomes = groups.par_iter().map(|g| run_group(&mutator, &verifier, g, spec)).collect();
            ReliabilityReport::from_outcomes(*spec, outcomes)
        })
        .collect())
}

/// Seed for one segment, so that segments draw independent mutants.
pub(crate) fn segment_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn run_group(mutator: &Mutator<'_>, verifier: &Verifier<'_>, g: &Group, spec: &MutationSpec) -> SegmentOutcome {
    let local = MutationSpec { seed: segment_seed(spec.seed, g.index), ..*spec };
    let rejects = |m: &Measurement| {
        let mut state = SessionState::with_feasible(g.feasible.clone());
        verifier.verify_segment(&mut state, m).verdict == Verdict::Rejected
    };
    let result: Result<(usize, usize), AttackError> = if spec.kind == MutationKind::RandomChange {
        mutator.perturbations(&g.measured.delta, &local).map(|deltas| {
            let detected = deltas
                .par_iter()
                .filter(|d| rejects(&Measurement { delta: (*d).clone(), ..g.measured.clone() }))
                .count();
            (deltas.len(), detected)
        })
    } else {
        mutator.edits(&g.segment, &g.entry_stack, &local).map(|edits| {
            let detected = edits
                .par_iter()
                .map_init(Vec::new, |buf, e| {
                    e.apply_into(&g.segment.steps, buf);
                    let mutant = BlockTrace::new(std::mem::take(buf));
                    let m = mutator.simulator().measure_segment(&mutant);
                    *buf = mutant.steps;
                    rejects(&m)
                })
                .filter(|&r| r)
                .count();
            (edits.len(), detected)
        })
    };
    let (attempted, detected, error) = match result {
        Ok((a, d)) => (a, d, None),
        Err(e) => (0, 0, Some(e.to_string())),
    };
    SegmentOutcome {
        index: g.index,
        start: g.measured.start.clone(),
        end: g.measured.end.clone(),
        occurrences: g.occurrences,
        instruction_count: g.instructions,
        attempted,
        detected,
        error,
    }
}

/// Aligned text table: one row per experiment, one column per mutation
/// kind, cells "uniform, weighted".
pub fn format_table(rows: &[(String, Vec<ReliabilityReport>)]) -> String {
    let cell =
        |q: &Option<BigRational>| q.as_ref().and_then(|q| q.to_f64()).map_or("n/a".to_string(), |v| format!("{v:.3}"));
    let mut header = vec!["experiment".to_string()];
    header.extend(MutationKind::ALL.iter().map(|k| k.name().to_string()));
    let mut table = vec![header];
    for (name, reports) in rows {
        let mut line = vec![name.clone()];
        for kind in MutationKind::ALL {
            line.push(match reports.iter().find(|r| r.spec.kind == kind) {
                Some(r) => format!("{}, {}", cell(&r.metric_uniform), cell(&r.metric_weighted)),
                None => "-".to_string(),
            });
        }
        table.push(line);
    }
    let widths: Vec<usize> =
        (0..table[0].len()).map(|c| table.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (i, row) in table.iter().enumerate() {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(s, &w)| format!("{s:<w$}")).collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            out.push_str(&rule.join("  "));
            out.push('\n');
        }
    }
    out.push_str(&format!("random_change: {PERTURBATION_NOTE}\n"));
    out
}
