// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AttackError;
use crate::cfg::{validate_trace_from, AnnotatedCfg, BlockId, BlockTrace, CallStack, Measurement};
use crate::sim::Simulator;
use crate::vector::CounterVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationKind {
    ReplaceBlock,
    ReplaceUnique,
    InsertUnique,
    RemoveBlock,
    RandomChange,
}

impl MutationKind {
    pub const ALL: [MutationKind; 5] = [
        MutationKind::ReplaceBlock,
        MutationKind::ReplaceUnique,
        MutationKind::InsertUnique,
        MutationKind::RemoveBlock,
        MutationKind::RandomChange,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MutationKind::ReplaceBlock => "replace_block",
            MutationKind::ReplaceUnique => "replace_unique",
            MutationKind::InsertUnique => "insert_unique",
            MutationKind::RemoveBlock => "remove_block",
            MutationKind::RandomChange => "random_change",
        }
    }

    pub fn default_repetitions(self) -> usize {
        match self {
            MutationKind::ReplaceBlock | MutationKind::ReplaceUnique => 1000,
            _ => 100,
        }
    }
}

impl fmt::Display for MutationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MutationKind {
    type Err = AttackError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MutationKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| AttackError::UnknownKind(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationSpec {
    pub kind: MutationKind,
    pub repetitions: usize,
    pub seed: u64,
}

impl MutationSpec {
    pub fn new(kind: MutationKind, seed: u64) -> Self {
        MutationSpec { kind, repetitions: kind.default_repetitions(), seed }
    }

    pub fn with_repetitions(mut self, repetitions: usize) -> Self {
        assert!(repetitions >= 1, "repetitions must be positive");
        self.repetitions = repetitions;
        self
    }
}

/// A mutated segment: either different executed blocks or a corrupted
/// measurement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Mutant {
    Blocks(BlockTrace),
    Measurement(Measurement),
}

/// One block-level change. Positions index the original segment; the two
/// measurement points that delimit it are never touched.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) enum Edit {
    Replace(usize, BlockId),
    /// Inserts before the given position.
    Insert(usize, BlockId),
    Remove(usize),
}

impl Edit {
    pub(crate) fn apply_into(self, seg: &[BlockId], out: &mut Vec<BlockId>) {
        out.clear();
        match self {
            Edit::Replace(p, b) => {
                out.extend_from_slice(seg);
                out[p] = b;
            }
            Edit::Insert(p, b) => {
                out.extend_from_slice(&seg[..p]);
                out.push(b);
                out.extend_from_slice(&seg[p..]);
            }
            Edit::Remove(p) => {
                out.extend_from_slice(&seg[..p]);
                out.extend_from_slice(&seg[p + 1..]);
            }
        }
    }

    /// The same mutant expressed at its leftmost position, so that equal
    /// results compare equal.
    fn canonical(self, seg: &[BlockId]) -> Edit {
        match self {
            Edit::Insert(mut p, b) => {
                while p > 1 && seg[p - 1] == b {
                    p -= 1;
                }
                Edit::Insert(p, b)
            }
            Edit::Remove(mut p) => {
                while p > 1 && seg[p - 1] == seg[p] {
                    p -= 1;
                }
                Edit::Remove(p)
            }
            e => e,
        }
    }
}

/// Exhaustive enumeration is used when the mutant space is at most this many
/// times the requested repetitions.
const EXHAUSTIVE_FACTOR: usize = 4;
/// Rejection-sampling draws per requested mutant before falling back.
const DRAWS_PER_MUTANT: usize = 50;
/// Largest space enumerated after rejection sampling falls short.
const EXHAUSTIVE_LIMIT: usize = 4_000_000;

/// Generates mutants for segments of one program under one counter
/// configuration.
pub struct Mutator<'a> {
    cfg: &'a AnnotatedCfg,
    sim: &'a Simulator<'a>,
    /// Blocks that can appear in a trace.
    pool: Vec<BlockId>,
    /// Blocks whose projected delta differs from every other block's.
    unique: Vec<BlockId>,
}

impl<'a> Mutator<'a> {
    pub fn new(cfg: &'a AnnotatedCfg, sim: &'a Simulator<'a>) -> Self {
        let pool: Vec<BlockId> = cfg.block_ids().filter(|&b| cfg.block(b).instruction_count > 0).collect();
        let mut by_delta: BTreeMap<CounterVector, Vec<BlockId>> = BTreeMap::new();
        for &b in &pool {
            by_delta.entry(sim.config().project(sim.deltas().get(b))).or_default().push(b);
        }
        let mut unique: Vec<BlockId> = by_delta.into_values().filter(|v| v.len() == 1).map(|v| v[0]).collect();
        unique.sort();
        Mutator { cfg, sim, pool, unique }
    }

    pub fn unique_blocks(&self) -> &[BlockId] {
        &self.unique
    }

    /// Distinct mutants of `segment`, which starts under `entry_stack`.
    /// `measured` is the segment's genuine measurement.
    pub fn mutate(
        &self,
        segment: &BlockTrace,
        entry_stack: &CallStack,
        measured: &Measurement,
        spec: &MutationSpec,
    ) -> Result<Vec<Mutant>, AttackError> {
        if spec.kind == MutationKind::RandomChange {
            return Ok(self
                .perturbations(&measured.delta, spec)?
                .into_iter()
                .map(|delta| Mutant::Measurement(Measurement { delta, ..measured.clone() }))
                .collect());
        }
        let mut buf = Vec::new();
        Ok(self
            .edits(segment, entry_stack, spec)?
            .into_iter()
            .map(|e| {
                e.apply_into(&segment.steps, &mut buf);
                Mutant::Blocks(BlockTrace::new(buf.clone()))
            })
            .collect())
    }

    fn choices(&self, kind: MutationKind) -> &[BlockId] {
        match kind {
            MutationKind::ReplaceBlock => &self.pool,
            _ => &self.unique,
        }
    }

    /// Structurally invalid, pairwise distinct block edits.
    pub(crate) fn edits(
        &self,
        segment: &BlockTrace,
        entry_stack: &CallStack,
        spec: &MutationSpec,
    ) -> Result<Vec<Edit>, AttackError> {
        let seg = &segment.steps;
        let choices = self.choices(spec.kind);
        let n = seg.len();
        if n < 2 {
            return Err(AttackError::NoMutation("segment has no blocks".into()));
        }
        let interior = n - 2;
        let space = match spec.kind {
            MutationKind::ReplaceBlock | MutationKind::ReplaceUnique => interior.saturating_mul(choices.len()),
            MutationKind::InsertUnique => (n - 1).saturating_mul(choices.len()),
            MutationKind::RemoveBlock => interior,
            MutationKind::RandomChange => unreachable!("not a block edit"),
        };
        if space == 0 {
            return Err(AttackError::NoMutation(match spec.kind {
                MutationKind::RemoveBlock | MutationKind::ReplaceBlock => "segment has no interior blocks".into(),
                _ => "no unique block to draw from".into(),
            }));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut scratch = BlockTrace::new(Vec::with_capacity(n + 1));
        let mut invalid = |e: Edit| {
            e.apply_into(seg, &mut scratch.steps);
            !matches!(validate_trace_from(self.cfg, &scratch, entry_stack), Ok(true))
        };

        let exhaustive = |invalid: &mut dyn FnMut(Edit) -> bool, rng: &mut ChaCha8Rng| {
            let mut all: Vec<Edit> = Vec::new();
            let mut seen = HashSet::new();
            let mut consider = |e: Edit| {
                let e = e.canonical(seg);
                if seen.insert(e) && invalid(e) {
                    all.push(e);
                }
            };
            match spec.kind {
                MutationKind::RemoveBlock => (1..n - 1).for_each(|p| consider(Edit::Remove(p))),
                MutationKind::InsertUnique => {
                    for p in 1..n {
                        choices.iter().for_each(|&b| consider(Edit::Insert(p, b)));
                    }
                }
                _ => {
                    for p in 1..n - 1 {
                        choices.iter().filter(|&&b| b != seg[p]).for_each(|&b| consider(Edit::Replace(p, b)));
                    }
                }
            }
            all.shuffle(rng);
            all.truncate(spec.repetitions);
            all
        };

        let edits = if space <= EXHAUSTIVE_FACTOR.saturating_mul(spec.repetitions) {
            exhaustive(&mut invalid, &mut rng)
        } else {
            let mut chosen = Vec::new();
            let mut seen = HashSet::new();
            let draws = DRAWS_PER_MUTANT.saturating_mul(spec.repetitions);
            for _ in 0..draws {
                if chosen.len() == spec.repetitions {
                    break;
                }
                let e = match spec.kind {
                    MutationKind::RemoveBlock => Edit::Remove(rng.random_range(1..n - 1)),
                    MutationKind::InsertUnique => {
                        Edit::Insert(rng.random_range(1..n), choices[rng.random_range(0..choices.len())])
                    }
                    _ => {
                        let p = rng.random_range(1..n - 1);
                        let b = choices[rng.random_range(0..choices.len())];
                        if b == seg[p] {
                            continue;
                        }
                        Edit::Replace(p, b)
                    }
                }
                .canonical(seg);
                if seen.insert(e) && invalid(e) {
                    chosen.push(e);
                }
            }
            if chosen.len() < spec.repetitions && space <= EXHAUSTIVE_LIMIT {
                exhaustive(&mut invalid, &mut rng)
            } else {
                chosen
            }
        };
        if edits.is_empty() {
            return Err(AttackError::NoMutation("every mutant is a valid path".into()));
        }
        let mut edits = edits;
        edits.sort();
        Ok(edits)
    }

    /// Distinct nonzero perturbations of `delta`, each counter independently
    /// within ±⌊v/10⌋. Returns the perturbed deltas.
    pub(crate) fn perturbations(
        &self,
        delta: &CounterVector,
        spec: &MutationSpec,
    ) -> Result<Vec<CounterVector>, AttackError> {
        let bounds: Vec<u64> = delta.values().iter().map(|&v| v / 10).collect();
        // Number of nonzero perturbations, saturating.
        let space = bounds
            .iter()
            .try_fold(1usize, |acc, &k| usize::try_from(2 * k + 1).ok().and_then(|w| acc.checked_mul(w)))
            .map_or(usize::MAX, |s| s - 1);
        if space == 0 {
            return Err(AttackError::NoMutation("every counter is below 10".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let apply = |r: &[i64]| {
            CounterVector::new(delta.values().iter().zip(r).map(|(&v, &x)| (v as i64 + x) as u64).collect())
        };
        let mut picks: Vec<Vec<i64>> = if space <= EXHAUSTIVE_FACTOR.saturating_mul(spec.repetitions) {
            let mut all = Vec::with_capacity(space);
            let mut r: Vec<i64> = bounds.iter().map(|&k| -(k as i64)).collect();
            'outer: loop {
                if r.iter().any(|&x| x != 0) {
                    all.push(r.clone());
                }
                for (x, &k) in r.iter_mut().zip(&bounds) {
                    if *x < k as i64 {
                        *x += 1;
                        continue 'outer;
                    }
                    *x = -(k as i64);
                }
                break;
            }
            all.shuffle(&mut rng);
            all.truncate(spec.repetitions);
            all
        } else {
            let mut seen = HashSet::new();
            while seen.len() < spec.repetitions {
                let r: Vec<i64> = bounds.iter().map(|&k| rng.random_range(-(k as i64)..=k as i64)).collect();
                if r.iter().any(|&x| x != 0) {
                    seen.insert(r);
                }
            }
            seen.into_iter().collect()
        };
        picks.sort();
        Ok(picks.iter().map(|r| apply(r)).collect())
    }

    pub(crate) fn simulator(&self) -> &Simulator<'a> {
        self.sim
    }
}
