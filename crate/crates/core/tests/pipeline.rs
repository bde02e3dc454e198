// SPDX-License-Identifier: Apache-2.0

use cfa_core::attack::{evaluate, MutationKind, MutationSpec};
use cfa_core::cfg::{load_cfg, BlockTrace};
use cfa_core::demo::{demo_program, random_cfg, RandomCfgLimits, THREE_COUNTERS};
use cfa_core::hpc::{BlockDeltas, CounterConfig, EventTable};
use cfa_core::preprocess::{enumerate_segments, SegmentDatabase};
use cfa_core::protocol::{attested_run, IpcModel, VerifState, TRACEE};
use cfa_core::sim::{random_valid_walk, Simulator, WalkConstraints};
use cfa_core::verifier::Verifier;
use proptest::prelude::*;

fn simulator<'a>(cfg: &'a cfa_core::cfg::AnnotatedCfg, table: &EventTable, spec: Option<&str>) -> Simulator<'a> {
    let deltas = BlockDeltas::resolve(cfg, Some(table)).unwrap();
    let config = match spec {
        Some(s) => CounterConfig::parse(s, deltas.counters()).unwrap(),
        None => CounterConfig::all_deterministic(deltas.counters()),
    };
    Simulator::from_deltas(cfg, deltas, config).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn valid_walks_are_accepted(graph in 0u64..1_000_000, walk in 0u64..1_000, three in any::<bool>()) {
        let table = EventTable::toy_isa();
        let cfg = random_cfg(graph, &RandomCfgLimits::default(), &table).unwrap();
        let db = enumerate_segments(&cfg, Some(&table)).unwrap();
        let sim = simulator(&cfg, &table, three.then_some(THREE_COUNTERS));
        let constraints = WalkConstraints { max_loop_iterations: 50, ..WalkConstraints::default() };
        let trace = random_valid_walk(&cfg, walk, &constraints).unwrap();
        let ms = sim.measure(&trace).unwrap();
        let report = Verifier::new(&db, sim.config().clone()).unwrap().verify_trace_measurements(&ms);
        prop_assert!(report.accepted(), "rejected at {:?}", report.rejected_at);
    }

    #[test]
    fn reloaded_artifacts_give_the_same_verdicts(graph in 0u64..1_000_000, walk in 0u64..1_000) {
        let table = EventTable::toy_isa();
        let cfg = random_cfg(graph, &RandomCfgLimits::default(), &table).unwrap();
        let db = enumerate_segments(&cfg, Some(&table)).unwrap();
        let cfg2 = load_cfg(&cfg.to_json()).unwrap();
        prop_assert_eq!(cfg2.digest(), cfg.digest());
        let db2 = SegmentDatabase::from_json(&db.to_json()).unwrap();
        prop_assert_eq!(db2.to_json(), db.to_json());

        let trace = random_valid_walk(&cfg, walk, &WalkConstraints::default()).unwrap();
        let trace2 = BlockTrace::from_document(&cfg2, &trace.to_document(&cfg)).unwrap();
        prop_assert_eq!(&trace2, &trace);
        let sim = simulator(&cfg, &table, None);
        let ms = sim.measure(&trace).unwrap();
        let a = Verifier::new(&db, sim.config().clone()).unwrap().verify_trace_measurements(&ms);
        let b = Verifier::new(&db2, sim.config().clone()).unwrap().verify_trace_measurements(&ms);
        prop_assert_eq!(a.to_document(false), b.to_document(false));
    }
}

#[test]
fn evaluation_is_reproducible() {
    let table = EventTable::toy_isa();
    let compiled = demo_program("hello").unwrap().compile(&table).unwrap();
    let db = enumerate_segments(&compiled.cfg, Some(&table)).unwrap();
    let sim = simulator(&compiled.cfg, &table, Some(THREE_COUNTERS));
    let trace = compiled.run(1);
    let specs: Vec<_> = MutationKind::ALL.iter().map(|&k| MutationSpec::new(k, 11).with_repetitions(20)).collect();
    let a = evaluate(&compiled.cfg, &db, &sim, &trace, &specs).unwrap();
    let b = evaluate(&compiled.cfg, &db, &sim, &trace, &specs).unwrap();
    assert_eq!(a, b);
    for r in &a {
        assert!(r.per_segment.iter().all(|s| s.detected <= s.attempted && s.attempted <= 20));
    }
}

#[test]
fn honest_run_is_attested_to_the_end() {
    let table = EventTable::toy_isa();
    let compiled = demo_program("crypto-ecalls").unwrap().compile(&table).unwrap();
    let db = enumerate_segments(&compiled.cfg, Some(&table)).unwrap();
    let sim = simulator(&compiled.cfg, &table, None);
    let ms = sim.measure(&compiled.run(4)).unwrap();
    let verifier = Verifier::new(&db, sim.config().clone()).unwrap();
    let run = attested_run(&verifier, &ms, IpcModel::FourSwitch);
    assert_eq!(run.halted_at, None);
    assert_eq!(run.world.context_switches, 4 * ms.len() as u64);
    assert_eq!(run.world.enclave(TRACEE).unwrap().verif_state, VerifState::Verified);

    let mut forged = ms.clone();
    let k = forged.len() / 2;
    let mut values = forged[k].delta.values().to_vec();
    values[0] += 1;
    forged[k].delta = cfa_core::CounterVector::new(values);
    let run = attested_run(&verifier, &forged, IpcModel::EightSwitch);
    assert_eq!(run.halted_at, Some(k));
    let tracee = run.world.enclave(TRACEE).unwrap();
    assert_eq!(tracee.verif_state, VerifState::Halted);
    assert!(tracee.shm_locked && !tracee.runnable);
}
