// SPDX-License-Identifier: Apache-2.0

//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use cfa_cli::demos;
use cfa_core::attack::{evaluate, MutationKind, MutationSpec, ReliabilityReport, SegmentOutcome};
use cfa_core::demo::{demo_program, random_cfg, RandomCfgLimits, THREE_COUNTERS};
use cfa_core::hpc::{BlockDeltas, CounterConfig, EventTable};
use cfa_core::preprocess::{enumerate_segments, preprocess, Budgets};
use cfa_core::protocol::{adversarial_alphabet, explore, standard_world, IpcModel};
use cfa_core::sim::{random_valid_walk, Simulator, WalkConstraints};
use cfa_core::verifier::{cone_member, ConeProblem, Verifier};
use cfa_core::CounterVector;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn within(started: Instant, limit: Duration) -> Result<(), String> {
    let t = started.elapsed();
    if t <= limit {
        Ok(())
    } else {
        Err(format!("took {:.1}s, limit {}s", t.as_secs_f64(), limit.as_secs()))
    }
}

fn soundness() -> Outcome {
    let started = Instant::now();
    let table = EventTable::toy_isa();
    let limits = RandomCfgLimits::default();
    let walk = WalkConstraints { max_loop_iterations: 50, ..WalkConstraints::default() };
    // Longer walks where the graph allows them.
    let long = WalkConstraints { min_segments: 4, ..walk };
    let (mut traces, mut segments, mut steps) = (0usize, 0usize, 0usize);
    for seed in 0..500u64 {
        let cfg = random_cfg(seed, &limits, &table).map_err(|e| format!("graph {seed}: {e}"))?;
        let db = enumerate_segments(&cfg, Some(&table)).map_err(|e| format!("graph {seed}: {e}"))?;
        let deltas = BlockDeltas::resolve(&cfg, Some(&table)).map_err(|e| e.to_string())?;
        let config = CounterConfig::all_deterministic(deltas.counters());
        let sim = Simulator::from_deltas(&cfg, deltas, config.clone()).map_err(|e| e.to_string())?;
        let verifier = Verifier::new(&db, config).map_err(|e| e.to_string())?;
        for w in 0..20u64 {
            let trace = random_valid_walk(&cfg, seed * 1000 + w, &long)
                .or_else(|_| random_valid_walk(&cfg, seed * 1000 + w, &walk))
                .map_err(|e| format!("graph {seed} walk {w}: {e}"))?;
            let ms = sim.measure(&trace).map_err(|e| e.to_string())?;
            let report = verifier.verify_trace_measurements(&ms);
            if !report.accepted() {
                return Err(format!("graph {seed} walk {w} rejected at segment {:?}", report.rejected_at));
            }
            traces += 1;
            segments += ms.len();
            steps += trace.len();
        }
    }
    within(started, Duration::from_secs(300))?;
    Ok(format!(
        "{traces} walks ({steps} blocks, {segments} segments) accepted in {:.1}s",
        started.elapsed().as_secs_f64()
    ))
}

/// Exhaustive search for `Σ x_i g_i = target`, largest coefficients last.
fn brute_force(target: &[i128], gens: &[Vec<i128>]) -> bool {
    fn go(rest: &[i128], gens: &[Vec<i128>]) -> bool {
        if rest.iter().any(|&t| t < 0) {
            return false;
        }
        let Some((g, tail)) = gens.split_first() else {
            return rest.iter().all(|&t| t == 0);
        };
        if g.iter().all(|&c| c == 0) {
            return go(rest, tail);
        }
        let mut cur = rest.to_vec();
        loop {
            if go(&cur, tail) {
                return true;
            }
            for (c, &gi) in cur.iter_mut().zip(g) {
                *c -= gi;
            }
            if cur.iter().any(|&t| t < 0) {
                return false;
            }
        }
    }
    go(target, gens)
}

fn oracle_agreement() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut members, mut total) = (0, 0);
    for i in 0..10_000 {
        let d = rng.random_range(1..=4);
        let n = rng.random_range(0..=5);
        let gens: Vec<Vec<u64>> = (0..n)
            .map(|_| (0..d).map(|_| if rng.random_bool(0.3) { 0 } else { rng.random_range(0..=20) }).collect())
            .collect();
        // Half the targets are built from the generators so that both
        // answers occur often.
        let target: Vec<i128> = if i % 2 == 0 {
            let mut t = vec![0i128; d];
            for g in &gens {
                let k = rng.random_range(0..=6);
                for (tj, &gj) in t.iter_mut().zip(g) {
                    *tj += (k * gj) as i128;
                }
            }
            let bump = rng.random_range(0..d);
            if rng.random_bool(0.3) {
                t[bump] += 1;
            }
            t.into_iter().map(|v| v.min(200)).collect()
        } else {
            (0..d).map(|_| rng.random_range(-3..=200)).collect()
        };
        let problem = ConeProblem::new(target.clone(), gens.iter().cloned().map(CounterVector::new).collect());
        let signed: Vec<Vec<i128>> = gens.iter().map(|g| g.iter().map(|&v| v as i128).collect()).collect();
        let expected = brute_force(&target, &signed);
        let got = cone_member(&problem);
        if let Some(x) = &got {
            if !problem.check(x) {
                return Err(format!("problem {i}: witness {x:?} does not reproduce {target:?}"));
            }
        }
        if got.is_some() != expected {
            return Err(format!(
                "problem {i}: solver {} but brute force {expected} for {target:?} {gens:?}",
                got.is_some()
            ));
        }
        members += expected as usize;
        total += 1;
    }
    within(started, Duration::from_secs(120))?;
    Ok(format!("{total} problems agree ({members} members) in {:.1}s", started.elapsed().as_secs_f64()))
}

fn metric_arithmetic() -> Outcome {
    let outcome = |index, detected, instruction_count| SegmentOutcome {
        index,
        start: format!("s{index}"),
        end: format!("e{index}"),
        occurrences: 1,
        instruction_count,
        attempted: 10,
        detected,
        error: None,
    };
    let mut segs: Vec<SegmentOutcome> = (0..10).map(|i| outcome(i, 10, 10)).collect();
    segs.push(outcome(10, 0, 10_000));
    let r = ReliabilityReport::from_outcomes(MutationSpec::new(MutationKind::RemoveBlock, 0), segs);
    let q = |a: i64, b: i64| BigRational::new(BigInt::from(a), BigInt::from(b));
    let (u, w) = (r.metric_uniform.clone(), r.metric_weighted.clone());
    if u == Some(q(10, 11)) && w == Some(q(100, 10_100)) {
        Ok(format!("uniform {}, weighted {}", u.unwrap(), w.unwrap()))
    } else {
        Err(format!("uniform {u:?}, weighted {w:?}"))
    }
}

/// Reports for one demo under `counters` (all when `None`).
fn demo_reports(
    name: &str,
    counters: Option<&str>,
    kinds: &[MutationKind],
    reps: usize,
) -> Result<Vec<ReliabilityReport>, String> {
    let table = EventTable::toy_isa();
    let compiled = demo_program(name).ok_or("unknown demo")?.compile(&table).map_err(|e| e.to_string())?;
    let trace = compiled.run(demos::TRACE_SEED);
    let (db, _) = preprocess(&compiled.cfg, Some(&table), Budgets::default()).map_err(|e| e.to_string())?;
    let deltas = BlockDeltas::resolve(&compiled.cfg, Some(&table)).map_err(|e| e.to_string())?;
    let config = match counters {
        Some(s) => CounterConfig::parse(s, deltas.counters()).map_err(|e| e.to_string())?,
        None => CounterConfig::all_deterministic(deltas.counters()),
    };
    let sim = Simulator::from_deltas(&compiled.cfg, deltas, config).map_err(|e| e.to_string())?;
    let specs: Vec<MutationSpec> = kinds.iter().map(|&k| MutationSpec::new(k, 5).with_repetitions(reps)).collect();
    evaluate(&compiled.cfg, &db, &sim, &trace, &specs).map_err(|e| e.to_string())
}

fn float(q: &Option<BigRational>) -> f64 {
    q.as_ref().and_then(|q| q.to_f64()).unwrap_or(f64::NAN)
}

fn in_loop_points() -> Outcome {
    let started = Instant::now();
    let kinds = [MutationKind::RemoveBlock];
    let without = demo_reports("crypto", Some(THREE_COUNTERS), &kinds, 100)?;
    let with = demo_reports("crypto-ecalls", Some(THREE_COUNTERS), &kinds, 100)?;
    let (a, b) = (float(&without[0].metric_weighted), float(&with[0].metric_weighted));
    within(started, Duration::from_secs(600))?;
    let detail = format!("remove_block weighted {a:.3} without, {b:.3} with in-loop points");
    if a < 0.2 && b > 0.95 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn counter_count() -> Outcome {
    let three = demo_reports("crypto", Some(THREE_COUNTERS), &MutationKind::ALL, 100)?;
    let all = demo_reports("crypto", None, &MutationKind::ALL, 100)?;
    let mut cells = Vec::new();
    for (t, a) in three.iter().zip(&all) {
        let (wt, wa) = (float(&t.metric_weighted), float(&a.metric_weighted));
        if wa.is_nan() || wa < wt {
            return Err(format!("{}: weighted {wa:.3} at 17 counters < {wt:.3} at 3", t.spec.kind));
        }
        cells.push(format!("{} {wt:.3}->{wa:.3}", t.spec.kind));
        if t.spec.kind == MutationKind::RandomChange {
            let u = float(&a.metric_uniform);
            if u.is_nan() || u < 0.99 {
                return Err(format!("random_change uniform {u:.3} at 17 counters"));
            }
        }
    }
    Ok(format!("weighted 3->17 counters: {}", cells.join(", ")))
}

fn dedup() -> Outcome {
    let table = EventTable::toy_isa();
    let compiled = demo_program("dedup").ok_or("unknown demo")?.compile(&table).map_err(|e| e.to_string())?;
    let trace = compiled.run(demos::TRACE_SEED);
    let db = enumerate_segments(&compiled.cfg, Some(&table)).map_err(|e| e.to_string())?;
    let deltas = BlockDeltas::resolve(&compiled.cfg, Some(&table)).map_err(|e| e.to_string())?;
    let config = CounterConfig::all_deterministic(deltas.counters());
    let sim = Simulator::from_deltas(&compiled.cfg, deltas, config.clone()).map_err(|e| e.to_string())?;
    let ms = sim.measure(&trace).map_err(|e| e.to_string())?;
    let report = Verifier::new(&db, config).map_err(|e| e.to_string())?.verify_trace_measurements(&ms);
    let detail = format!(
        "{} segments, hit ratio {:.4}, {} solver invocations",
        ms.len(),
        report.cache_hit_ratio(),
        report.solver_invocations()
    );
    if report.accepted() && ms.len() >= 1000 && report.cache_hit_ratio() >= 0.99 && report.solver_invocations() <= 5 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn protocol_explore() -> Outcome {
    let started = Instant::now();
    let r = explore(&standard_world(IpcModel::EightSwitch), &adversarial_alphabet(), 10, 2_000_000)
        .map_err(|e| e.to_string())?;
    within(started, Duration::from_secs(60))?;
    let detail = format!(
        "{} states, {} transitions, {} reads outside VERIFIED, {} violations",
        r.states,
        r.transitions,
        r.reads_outside_verified,
        r.violations.len()
    );
    if r.reads_outside_verified == 0 && r.violations.is_empty() && r.halted_states > 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Runs `args` through the CLI, returning (exit status, stdout).
fn cli(args: &[&str]) -> (i32, Vec<u8>) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = cfa_cli::main_with(std::iter::once("cfa").chain(args.iter().copied()), &mut out, &mut err);
    (code, out)
}

fn cli_determinism() -> Outcome {
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("demos");
    let d = |f: &str| shipped.join(f).to_string_lossy().into_owned();
    let mut checked = 0;
    let run_all = |dir: &Path| -> Result<Vec<(String, i32, Vec<u8>)>, String> {
        let p = |f: &str| dir.join(f).to_string_lossy().into_owned();
        std::fs::write(
            dir.join("script.json"),
            serde_json::to_string(&cfa_core::protocol::adversarial_alphabet()).map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;
        let commands: Vec<Vec<String>> = vec![
            vec!["demo".into(), "all".into(), "--out-dir".into(), p("demos")],
            vec![
                "preprocess".into(),
                "--cfg".into(),
                d("crypto.cfg.json"),
                "--table".into(),
                d("toy_isa.table.json"),
                "--out".into(),
                p("crypto.db.json"),
            ],
            vec![
                "simulate".into(),
                "--cfg".into(),
                d("crypto.cfg.json"),
                "--table".into(),
                d("toy_isa.table.json"),
                "--trace".into(),
                d("crypto.trace.json"),
                "--out".into(),
                p("crypto.log.json"),
            ],
            vec!["verify".into(), "--db".into(), p("crypto.db.json"), "--measurements".into(), p("crypto.log.json")],
            vec![
                "--format".into(),
                "json".into(),
                "verify".into(),
                "--db".into(),
                p("crypto.db.json"),
                "--measurements".into(),
                p("crypto.log.json"),
            ],
            vec!["walk".into(), "--cfg".into(), d("hello.cfg.json"), "--seed".into(), "7".into()],
            vec!["counters".into(), "--db".into(), p("crypto.db.json")],
            vec!["attack-eval".into(), "--manifest".into(), d("basic.manifest.json"), "--reps".into(), "10".into()],
            vec![
                "--format".into(),
                "json".into(),
                "attack-eval".into(),
                "--manifest".into(),
                d("added-ecalls.manifest.json"),
                "--reps".into(),
                "10".into(),
            ],
            vec!["protocol".into(), "run".into(), "--script".into(), p("script.json")],
            vec!["protocol".into(), "explore".into(), "--depth".into(), "6".into()],
            vec![
                "protocol".into(),
                "attest".into(),
                "--db".into(),
                p("crypto.db.json"),
                "--measurements".into(),
                p("crypto.log.json"),
            ],
        ];
        let mut results = Vec::new();
        for c in &commands {
            let args: Vec<&str> = c.iter().map(String::as_str).collect();
            let (code, out) = cli(&args);
            // Paths of the round's directory are the only expected difference.
            let text = String::from_utf8_lossy(&out).replace(&dir.to_string_lossy().into_owned(), "<dir>");
            results.push((c[..2].join(" "), code, text.into_bytes()));
        }
        let mut names: Vec<_> =
            std::fs::read_dir(dir).map_err(|e| e.to_string())?.flatten().map(|e| e.path()).collect();
        names.sort();
        for path in names.into_iter().filter(|p| p.is_file()) {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            results.push((name, 0, std::fs::read(&path).map_err(|e| e.to_string())?));
        }
        Ok(results)
    };
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = run_all(a.path())?;
    let second = run_all(b.path())?;
    for ((name, c1, o1), (_, c2, o2)) in first.iter().zip(&second) {
        if c1 != c2 || o1 != o2 {
            return Err(format!("{name}: outputs differ between runs"));
        }
        if *c1 != 0 {
            return Err(format!("{name}: exit status {c1}"));
        }
        checked += 1;
    }
    Ok(format!("{checked} outputs byte-identical across two runs"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 soundness on random graphs", soundness),
        ("2 cone solver agrees with brute force", oracle_agreement),
        ("3 metric arithmetic", metric_arithmetic),
        ("4 in-loop measurement points", in_loop_points),
        ("5 counter count", counter_count),
        ("6 duplicate-segment caching", dedup),
        ("7 protocol exploration", protocol_explore),
        ("8 CLI determinism", cli_determinism),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, check) in criteria {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        match check() {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
