// SPDX-License-Identifier: Apache-2.0

//! Synthetic control-flow attacks and the two reliability metrics.
//!
//! Block-level mutants are re-measured as if the attacker had executed the
//! altered blocks; `random_change` corrupts the measurement itself.

mod evaluate;
mod mutate;

use thiserror::Error;

use crate::cfg::CfgError;
use crate::preprocess::PreprocessError;
use crate::verifier::VerifyError;

pub use evaluate::{evaluate, format_table, ReliabilityDocument, ReliabilityReport, SegmentOutcome};
pub use mutate::{Mutant, MutationKind, MutationSpec, Mutator};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AttackError {
    #[error(transparent)]
    Cfg(#[from] CfgError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("unknown mutation kind {0}")]
    UnknownKind(String),
    #[error("no applicable mutation: {0}")]
    NoMutation(String),
    #[error("the unmodified trace is rejected at segment {0}")]
    TraceRejected(usize),
}

#[cfg(test)]
mod tests {
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use proptest::prelude::*;

    use super::*;
    use crate::cfg::EdgeKind::{Branch, Fallthrough};
    use crate::cfg::{split_trace, validate_trace_from, BlockTrace, CallStack, Measurement};
    use crate::hpc::CounterConfig;
    use crate::preprocess::enumerate_segments;
    use crate::sim::Simulator;
    use crate::testutil::delta_graph;
    use crate::vector::CounterVector;
    use crate::verifier::{SessionState, Verdict, Verifier};

    fn q(a: i64, b: i64) -> BigRational {
        BigRational::new(BigInt::from(a), BigInt::from(b))
    }

    /// S -> b0 -> ... -> b7 -> T with a skip edge b0 -> b2 so one removal is valid.
    fn chain(skip: bool) -> crate::cfg::AnnotatedCfg {
        let ids: Vec<String> = (0..8).map(|i| format!("b{i}")).collect();
        let deltas: Vec<[u64; 2]> = (0..8).map(|i| [i as u64 + 1, (i % 3) as u64]).collect();
        let mut blocks: Vec<(&str, &str, bool, &[u64])> = vec![("S", "m", true, &[1, 0])];
        for (id, d) in ids.iter().zip(&deltas) {
            blocks.push((id, "m", false, d));
        }
        blocks.push(("T", "m", true, &[1, 0]));
        let mut edges = vec![("S", "b0", Fallthrough), ("b7", "T", Fallthrough)];
        for w in ids.windows(2) {
            edges.push((&w[0], &w[1], Fallthrough));
        }
        if skip {
            edges.push(("b0", "b2", Branch));
        }
        delta_graph(&["instret", "x"], &blocks, &edges)
    }

    fn setup(g: &crate::cfg::AnnotatedCfg) -> (BlockTrace, Measurement) {
        let steps = ["S", "b0", "b1", "b2", "b3", "b4", "b5", "b6", "b7", "T"];
        let t = BlockTrace::from_ids(g, &steps).unwrap();
        let sim = Simulator::new(g, None, CounterConfig::identity(2)).unwrap();
        let m = sim.measure_segment(&t);
        (t, m)
    }

    #[test]
    fn remove_block_yields_one_mutant_per_block() {
        let g = chain(false);
        let (t, m) = setup(&g);
        let sim = Simulator::new(&g, None, CounterConfig::identity(2)).unwrap();
        let mutator = Mutator::new(&g, &sim);
        let spec = MutationSpec::new(MutationKind::RemoveBlock, 1).with_repetitions(100);
        let mutants = mutator.mutate(&t, &CallStack::empty(), &m, &spec).unwrap();
        assert_eq!(mutants.len(), 8);
        // The valid shortcut removal is excluded.
        let g = chain(true);
        let (t, m) = setup(&g);
        let sim = Simulator::new(&g, None, CounterConfig::identity(2)).unwrap();
        let mutants = Mutator::new(&g, &sim).mutate(&t, &CallStack::empty(), &m, &spec).unwrap();
        assert_eq!(mutants.len(), 7);
        for mu in &mutants {
            let Mutant::Blocks(b) = mu else { panic!() };
            assert!(!validate_trace_from(&g, b, &CallStack::empty()).unwrap());
        }
    }

    #[test]
    fn two_block_segment_has_no_removal() {
        let g =
            delta_graph(&["instret"], &[("S", "m", true, &[1]), ("T", "m", true, &[1])], &[("S", "T", Fallthrough)]);
        let t = BlockTrace::from_ids(&g, &["S", "T"]).unwrap();
        let sim = Simulator::new(&g, None, CounterConfig::identity(1)).unwrap();
        let m = sim.measure_segment(&t);
        let spec = MutationSpec::new(MutationKind::RemoveBlock, 1);
        let err = Mutator::new(&g, &sim).mutate(&t, &CallStack::empty(), &m, &spec).unwrap_err();
        assert!(matches!(err, AttackError::NoMutation(_)));
    }

    #[test]
    fn random_change_stays_within_ten_percent() {
        let g = chain(false);
        let sim = Simulator::new(&g, None, CounterConfig::identity(2)).unwrap();
        let mutator = Mutator::new(&g, &sim);
        let delta = CounterVector::new(vec![100, 50]);
        let spec = MutationSpec::new(MutationKind::RandomChange, 3).with_repetitions(200);
        let out = mutator.perturbations(&delta, &spec).unwrap();
        // 21 * 11 - 1 = 230 possibilities, all distinct
        assert_eq!(out.len(), 200);
        let mut seen = std::collections::BTreeSet::new();
        for v in &out {
            assert!(v[0].abs_diff(100) <= 10 && v[1].abs_diff(50) <= 5);
            assert_ne!(*v, delta);
            assert!(seen.insert(v.clone()));
        }
        let third = CounterVector::new(vec![100, 50, 7]);
        let sim3 = Simulator::new(&g, None, CounterConfig::identity(2)).unwrap();
        let out = Mutator::new(&g, &sim3).perturbations(&third, &spec).unwrap();
        assert!(out.iter().all(|v| v[2] == 7));
    }

    #[test]
    fn mutants_are_seed_deterministic_and_distinct() {
        let g = chain(true);
        let (t, m) = setup(&g);
        let sim = Simulator::new(&g, None, CounterConfig::identity(2)).unwrap();
        let mutator = Mutator::new(&g, &sim);
        for kind in MutationKind::ALL {
            let spec = MutationSpec::new(kind, 11).with_repetitions(20);
            let a = mutator.mutate(&t, &CallStack::empty(), &m, &spec).unwrap();
            let b = mutator.mutate(&t, &CallStack::empty(), &m, &spec).unwrap();
            assert_eq!(a, b, "{kind}");
            let mut sorted = a.clone();
            sorted.dedup();
            assert_eq!(sorted.len(), a.len());
            assert!(a.len() <= 20);
        }
    }

    #[test]
    fn insert_unique_detection_matches_the_verifier() {
        let g = chain(true);
        let (t, m) = setup(&g);
        let db = enumerate_segments(&g, None).unwrap();
        let sim = Simulator::new(&g, None, CounterConfig::identity(2)).unwrap();
        let verifier = Verifier::new(&db, CounterConfig::identity(2)).unwrap();
        let spec = MutationSpec::new(MutationKind::InsertUnique, 5).with_repetitions(30);
        let local = MutationSpec { seed: evaluate::segment_seed(5, 0), ..spec };
        let mutants = Mutator::new(&g, &sim).mutate(&t, &CallStack::empty(), &m, &local).unwrap();
        let mut detected = 0;
        for mu in &mutants {
            let Mutant::Blocks(b) = mu else { panic!() };
            let v = verifier.verify_segment(&mut SessionState::new(), &sim.measure_segment(b));
            detected += usize::from(v.verdict == Verdict::Rejected);
        }
        let report = evaluate(&g, &db, &sim, &t, &[spec]).unwrap();
        let seg = &report[0].per_segment[0];
        assert_eq!((seg.attempted, seg.detected), (mutants.len(), detected));
        assert!(detected > 0);
    }

    #[test]
    fn crafted_metrics() {
        let spec = MutationSpec::new(MutationKind::RemoveBlock, 0);
        let seg = |i: usize, ins: u64, detected: usize| SegmentOutcome {
            index: i,
            start: "a".into(),
            end: "b".into(),
            occurrences: 1,
            instruction_count: ins,
            attempted: 10,
            detected,
            error: None,
        };
        let mut segs: Vec<_> = (0..10).map(|i| seg(i, 10, 10)).collect();
        segs.push(seg(10, 10_000, 0));
        let r = ReliabilityReport::from_outcomes(spec, segs);
        assert_eq!(r.metric_uniform, Some(q(10, 11)));
        assert_eq!(r.metric_weighted, Some(q(100, 10_100)));
    }

    #[test]
    fn repeated_segments_weigh_by_frequency() {
        // A 5-instruction loop segment seen 9 times counts 9 times.
        let spec = MutationSpec::new(MutationKind::RemoveBlock, 0);
        let mk = |occ, ins, det| SegmentOutcome {
            index: 0,
            start: "a".into(),
            end: "b".into(),
            occurrences: occ,
            instruction_count: ins,
            attempted: 2,
            detected: det,
            error: None,
        };
        let r = ReliabilityReport::from_outcomes(spec, vec![mk(9, 45, 2), mk(1, 5, 0)]);
        assert_eq!(r.metric_uniform, Some(q(9, 10)));
        assert_eq!(r.metric_weighted, Some(q(45, 50)));
        let skipped = SegmentOutcome { attempted: 0, detected: 0, error: Some("none".into()), ..mk(100, 100, 0) };
        let r = ReliabilityReport::from_outcomes(spec, vec![skipped]);
        assert_eq!(r.metric_uniform, None);
    }

    #[test]
    fn evaluate_counts_identical_iterations_once() {
        // Measured loop L -> B -> L, iterated four times.
        let g = delta_graph(
            &["instret"],
            &[("A", "m", true, &[1]), ("L", "m", true, &[2]), ("B", "m", false, &[3]), ("C", "m", true, &[1])],
            &[("A", "L", Fallthrough), ("L", "B", Branch), ("B", "L", Branch), ("L", "C", Fallthrough)],
        );
        let t = BlockTrace::from_ids(&g, &["A", "L", "B", "L", "B", "L", "B", "L", "B", "L", "C"]).unwrap();
        assert_eq!(split_trace(&g, &t).unwrap().len(), 6);
        let db = enumerate_segments(&g, None).unwrap();
        let sim = Simulator::new(&g, None, CounterConfig::identity(1)).unwrap();
        let r = evaluate(&g, &db, &sim, &t, &[MutationSpec::new(MutationKind::RemoveBlock, 1)]).unwrap();
        let loop_seg = r[0].per_segment.iter().find(|s| s.start == "L" && s.end == "L").unwrap();
        assert_eq!(loop_seg.occurrences, 4);
        assert_eq!(loop_seg.instruction_count, 20);
        assert_eq!((loop_seg.attempted, loop_seg.detected), (1, 1));
    }

    #[test]
    fn unmodified_trace_must_verify() {
        let g = chain(false);
        let (t, _) = setup(&g);
        let other = chain(true);
        let db = enumerate_segments(&other, None).unwrap();
        let sim = Simulator::new(&g, None, CounterConfig::identity(2)).unwrap();
        assert!(evaluate(&g, &db, &sim, &t, &[MutationSpec::new(MutationKind::RemoveBlock, 1)]).is_err());
    }

    #[test]
    fn table_layout() {
        let spec = MutationSpec::new(MutationKind::RemoveBlock, 0);
        let r = ReliabilityReport::from_outcomes(
            spec,
            vec![SegmentOutcome {
                index: 0,
                start: "a".into(),
                end: "b".into(),
                occurrences: 1,
                instruction_count: 4,
                attempted: 4,
                detected: 3,
                error: None,
            }],
        );
        let t = format_table(&[("basic".into(), vec![r])]);
        let lines: Vec<&str> = t.lines().collect();
        assert!(lines[0].starts_with("experiment"));
        assert!(lines[2].contains("0.750, 0.750"));
        assert!(lines[2].contains('-'));
    }

    proptest! {
        #[test]
        fn metrics_lie_between_extreme_rates(
            segs in proptest::collection::vec((1u64..5, 1u64..1000, 1usize..20, 0usize..20), 1..12)
        ) {
            let outcomes: Vec<SegmentOutcome> = segs
                .iter()
                .enumerate()
                .map(|(i, &(occ, ins, att, det))| SegmentOutcome {
                    index: i,
                    start: "a".into(),
                    end: "b".into(),
                    occurrences: occ,
                    instruction_count: ins * occ,
                    attempted: att,
                    detected: det.min(att),
                    error: None,
                })
                .collect();
            let rates: Vec<BigRational> = outcomes.iter().map(|o| o.rate().unwrap()).collect();
            let lo = rates.iter().min().unwrap().clone();
            let hi = rates.iter().max().unwrap().clone();
            let r = ReliabilityReport::from_outcomes(MutationSpec::new(MutationKind::RemoveBlock, 0), outcomes);
            for m in [r.metric_uniform.unwrap(), r.metric_weighted.unwrap()] {
                prop_assert!(lo <= m && m <= hi);
            }
        }
    }
}
