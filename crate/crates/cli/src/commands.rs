// SPDX-License-Identifier: Apache-2.0

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use cfa_core::attack::{evaluate, format_table, AttackError, MutationKind, MutationSpec, ReliabilityDocument};
use cfa_core::cfg::{load_cfg, AnnotatedCfg, BlockTrace, CfgError, MeasurementLog, TraceDocument};
use cfa_core::hpc::{rank_counter_subsets, BlockDeltas, CounterConfig, CounterInfo, EventTable};
use cfa_core::preprocess::{preprocess, Budgets, PreprocessError, SegmentDatabase};
use cfa_core::protocol::{
    adversarial_alphabet, attested_run, explore, honest_alphabet, run_script, standard_world, IpcModel, ProtocolEvent,
    World,
};
use cfa_core::sim::{measurements_from_log, random_valid_walk, SimError, Simulator, WalkConstraints};
use cfa_core::verifier::{Verdict, Verifier, VerifyError};
use cfa_core::CounterVector;
use serde::Serialize;

use crate::manifest::RunManifest;
use crate::{
    Alphabet, AttackArgs, Cli, Command, CountersArgs, DemoArgs, Format, GraphArgs, Ipc, PreprocessArgs,
    ProtocolCommand, SimulateArgs, VerifyArgs, WalkArgs, EXIT_DIGEST, EXIT_ERROR, EXIT_OK, EXIT_REJECTED,
};

/// Two artifacts name different graphs.
#[derive(Debug, thiserror::Error)]
#[error("{what} refers to graph {found}, but {against} was built for {expected}")]
struct DigestMismatch {
    what: String,
    against: String,
    expected: String,
    found: String,
}

/// Exit status for a failed command.
pub(crate) fn exit_code(e: &anyhow::Error) -> i32 {
    let digest = e.chain().any(|c| {
        c.downcast_ref::<DigestMismatch>().is_some()
            || c.downcast_ref::<CfgError>().is_some_and(cfg_digest)
            || c.downcast_ref::<PreprocessError>().is_some_and(preprocess_digest)
            || c.downcast_ref::<SimError>().is_some_and(|s| match s {
                SimError::Cfg(c) => cfg_digest(c),
                SimError::Preprocess(p) => preprocess_digest(p),
                _ => false,
            })
            || c.downcast_ref::<AttackError>().is_some_and(|a| match a {
                AttackError::Cfg(c) => cfg_digest(c),
                AttackError::Preprocess(p) => preprocess_digest(p),
                _ => false,
            })
    });
    if digest {
        EXIT_DIGEST
    } else {
        EXIT_ERROR
    }
}

fn cfg_digest(e: &CfgError) -> bool {
    matches!(e, CfgError::DigestMismatch { .. })
}

fn preprocess_digest(e: &PreprocessError) -> bool {
    match e {
        PreprocessError::DigestMismatch { .. } => true,
        PreprocessError::Cfg(c) => cfg_digest(c),
        _ => false,
    }
}

/// Runs the parsed command and returns its exit status.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    let ctx = Ctx { format: cli.format, timings: cli.timings };
    match &cli.command {
        Command::Preprocess(a) => ctx.preprocess(a, out),
        Command::Verify(a) => ctx.verify(a, out),
        Command::Simulate(a) => ctx.simulate(a, out),
        Command::Walk(a) => ctx.walk(a, out),
        Command::AttackEval(a) => ctx.attack_eval(a, out),
        Command::Protocol(p) => ctx.protocol(p, out),
        Command::Counters(a) => ctx.counters(a, out),
        Command::Demo(a) => ctx.demo(a, out),
    }
}

struct Ctx {
    format: Format,
    timings: bool,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn pretty<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

fn load_graph(cfg: &Path, table: Option<&Path>) -> Result<(AnnotatedCfg, Option<EventTable>)> {
    let graph = load_cfg(&read(cfg)?).with_context(|| format!("loading {}", cfg.display()))?;
    let table = match table {
        Some(p) => Some(EventTable::from_json(&read(p)?).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    Ok((graph, table))
}

fn load_db(path: &Path) -> Result<SegmentDatabase> {
    SegmentDatabase::from_json(&read(path)?).with_context(|| format!("loading {}", path.display()))
}

fn load_trace(cfg: &AnnotatedCfg, path: &Path) -> Result<BlockTrace> {
    let doc: TraceDocument = parse_json(path)?;
    BlockTrace::from_document(cfg, &doc).with_context(|| format!("loading {}", path.display()))
}

fn parse_offset(spec: Option<&str>) -> Result<Option<CounterVector>> {
    spec.map(|s| {
        let values = s
            .split(',')
            .map(|v| v.trim().parse::<u64>().with_context(|| format!("bad offset component {v:?}")))
            .collect::<Result<Vec<_>>>()?;
        Ok(CounterVector::new(values))
    })
    .transpose()
}

fn counter_config(spec: Option<&str>, counters: &[CounterInfo]) -> Result<CounterConfig> {
    Ok(match spec {
        Some(s) => CounterConfig::parse(s, counters)?,
        None => CounterConfig::all_deterministic(counters),
    })
}

fn ipc_model(ipc: Ipc) -> IpcModel {
    match ipc {
        Ipc::Eight => IpcModel::EightSwitch,
        Ipc::Four => IpcModel::FourSwitch,
    }
}

fn check_log(log: &MeasurementLog, db: &SegmentDatabase) -> Result<()> {
    if log.cfg_ref != db.cfg_digest {
        return Err(DigestMismatch {
            what: "measurement log".into(),
            against: "the database".into(),
            expected: db.cfg_digest.clone(),
            found: log.cfg_ref.clone(),
        }
        .into());
    }
    Ok(())
}

/// A verifier for the log's counters, or for `--counters` if given.
fn log_verifier<'a>(db: &'a SegmentDatabase, log: &MeasurementLog, counters: Option<&str>) -> Result<Verifier<'a>> {
    match counters {
        Some(spec) => {
            let config = CounterConfig::parse(spec, &db.counters)?;
            let names = config.names(&db.counters);
            if names != log.counters {
                return Err(VerifyError::Counters { log: log.counters.clone(), db: names }.into());
            }
            Ok(Verifier::new(db, config)?)
        }
        None => Ok(Verifier::for_counters(db, &log.counters)?),
    }
}

#[derive(Serialize)]
struct PreprocessSummary<'a> {
    database: &'a Path,
    cfg_digest: &'a str,
    segments: usize,
    candidates: usize,
    stats: &'a cfa_core::preprocess::PreprocessStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    elapsed: Option<f64>,
}

#[derive(Serialize)]
struct Experiments<'a> {
    experiments: Vec<ExperimentReport<'a>>,
}

#[derive(Serialize)]
struct ExperimentReport<'a> {
    name: &'a str,
    counters: Vec<String>,
    reports: Vec<ReliabilityDocument>,
    #[serde(skip_serializing_if = "Option::is_none")]
    elapsed: Option<f64>,
}

#[derive(Serialize)]
struct ScriptReport<'a> {
    steps: &'a [cfa_core::protocol::ScriptStep],
    world: &'a World,
}

#[derive(Serialize)]
struct RankedDocument {
    counters: Vec<String>,
    rank: usize,
    gram_determinant: String,
    covolume: f64,
}

#[derive(Serialize)]
struct CountersReport {
    k: usize,
    loops: usize,
    subsets: usize,
    ranked: Vec<RankedDocument>,
}

impl Ctx {
    fn json(&self) -> bool {
        self.format == Format::Json
    }

    fn elapsed(&self, started: Instant) -> Option<f64> {
        self.timings.then(|| started.elapsed().as_secs_f64())
    }

    fn preprocess(&self, a: &PreprocessArgs, out: &mut dyn Write) -> Result<i32> {
        let started = Instant::now();
        let GraphArgs { cfg, table } = &a.graph;
        let (graph, table) = load_graph(cfg, table.as_deref())?;
        let budgets = Budgets { paths: a.budget_paths, cycles: a.budget_cycles, ..Budgets::default() };
        let (db, stats) = preprocess(&graph, table.as_ref(), budgets)?;
        write_file(&a.out, &db.to_json())?;
        let elapsed = self.elapsed(started);
        if self.json() {
            let summary = PreprocessSummary {
                database: &a.out,
                cfg_digest: &db.cfg_digest,
                segments: stats.segments.len(),
                candidates: db.candidate_count(),
                stats: &stats,
                elapsed,
            };
            writeln!(out, "{}", pretty(&summary)?)?;
        } else {
            writeln!(
                out,
                "{} segments, {} candidates, expanded graph {} nodes / {} edges",
                stats.segments.len(),
                db.candidate_count(),
                stats.expanded_nodes,
                stats.expanded_edges
            )?;
            for s in &stats.segments {
                let skip = if s.skip { " (skip)" } else { "" };
                writeln!(
                    out,
                    "  {} -> {}: {} paths, {} candidates, up to {} loops{skip}",
                    s.start, s.end, s.paths, s.candidates, s.max_loops
                )?;
            }
            writeln!(out, "wrote {}", a.out.display())?;
            if let Some(t) = elapsed {
                writeln!(out, "elapsed {t:.3}s")?;
            }
        }
        Ok(EXIT_OK)
    }

    fn verify(&self, a: &VerifyArgs, out: &mut dyn Write) -> Result<i32> {
        let db = load_db(&a.db)?;
        let log: MeasurementLog = parse_json(&a.measurements)?;
        check_log(&log, &db)?;
        let verifier = log_verifier(&db, &log, a.counters.as_deref())?
            .with_offset(parse_offset(a.offset.as_deref())?)?
            .with_cache(!a.no_cache);
        let report = verifier.verify_trace_measurements(&measurements_from_log(&log));
        let doc = report.to_document(self.timings);
        if self.json() {
            writeln!(out, "{}", pretty(&doc)?)?;
        } else {
            for s in &doc.segments {
                let verdict = match s.verdict {
                    Verdict::Accepted => "accepted",
                    Verdict::Rejected => "REJECTED",
                };
                let cache = if s.cache_hit { ", cached" } else { "" };
                write!(
                    out,
                    "segment {} {} -> {}: {verdict} ({} candidates tried, {} solver nodes{cache}",
                    s.index, s.start, s.end, s.candidates_tried, s.solver_nodes
                )?;
                if let Some(t) = s.elapsed {
                    write!(out, ", {:.6}s", t)?;
                }
                writeln!(out, ")")?;
                if let Some(r) = &s.reason {
                    writeln!(out, "  reason: {r}")?;
                }
            }
            let sum = &doc.summary;
            match sum.rejected_at {
                Some(i) => writeln!(out, "rejected at segment {i} of {}", sum.segments)?,
                None => writeln!(out, "accepted all {} segments", sum.segments)?,
            }
            writeln!(
                out,
                "cache: {} hits, {} misses, hit ratio {:.4}",
                sum.cache_hits, sum.cache_misses, sum.cache_hit_ratio
            )?;
        }
        Ok(if report.accepted() { EXIT_OK } else { EXIT_REJECTED })
    }

    fn simulate(&self, a: &SimulateArgs, out: &mut dyn Write) -> Result<i32> {
        let (graph, table) = load_graph(&a.graph.cfg, a.graph.table.as_deref())?;
        let trace = load_trace(&graph, &a.trace)?;
        let deltas = BlockDeltas::resolve(&graph, table.as_ref())?;
        let config = counter_config(a.counters.as_deref(), deltas.counters())?;
        let sim = Simulator::from_deltas(&graph, deltas, config)?.with_offset(parse_offset(a.offset.as_deref())?)?;
        let log = sim.log(&sim.measure(&trace)?);
        emit(out, a.out.as_deref(), &pretty(&log)?)?;
        Ok(EXIT_OK)
    }

    fn walk(&self, a: &WalkArgs, out: &mut dyn Write) -> Result<i32> {
        let graph = load_cfg(&read(&a.cfg)?).with_context(|| format!("loading {}", a.cfg.display()))?;
        let constraints = WalkConstraints {
            min_segments: a.min_segments,
            max_segments: a.max_segments,
            max_loop_iterations: a.max_loop_iterations,
            ..WalkConstraints::default()
        };
        let trace = random_valid_walk(&graph, a.seed, &constraints)?;
        emit(out, a.out.as_deref(), &pretty(&trace.to_document(&graph))?)?;
        Ok(EXIT_OK)
    }

    fn attack_eval(&self, a: &AttackArgs, out: &mut dyn Write) -> Result<i32> {
        let mut experiments = Vec::new();
        for path in &a.manifest {
            let manifest = RunManifest::load(path)?;
            for e in manifest.experiments {
                let started = Instant::now();
                let ctx = || format!("experiment {}", e.name);
                let (graph, table) = load_graph(&e.cfg, e.table.as_deref()).with_context(ctx)?;
                let trace = load_trace(&graph, &e.trace).with_context(ctx)?;
                let db = match &e.db {
                    Some(p) => load_db(p)?,
                    None => {
                        let budgets = Budgets {
                            paths: e.budget_paths.unwrap_or(Budgets::default().paths),
                            cycles: e.budget_cycles.unwrap_or(Budgets::default().cycles),
                            ..Budgets::default()
                        };
                        preprocess(&graph, table.as_ref(), budgets).with_context(ctx)?.0
                    }
                };
                let deltas = BlockDeltas::resolve(&graph, table.as_ref())?;
                let config = counter_config(e.counters.as_deref(), &db.counters).with_context(ctx)?;
                let names = config.names(&db.counters);
                let sim = Simulator::from_deltas(&graph, deltas, config)?;
                let seed = a.seed.unwrap_or(e.seed);
                let kinds = e.kinds.clone().unwrap_or_else(|| MutationKind::ALL.to_vec());
                let specs: Vec<MutationSpec> = kinds
                    .into_iter()
                    .map(|k| {
                        let reps = a.reps.or(e.repetitions).unwrap_or(k.default_repetitions());
                        MutationSpec::new(k, seed).with_repetitions(reps)
                    })
                    .collect();
                let reports = evaluate(&graph, &db, &sim, &trace, &specs).with_context(ctx)?;
                experiments.push((e.name, names, reports, self.elapsed(started)));
            }
        }
        if self.json() {
            let doc = Experiments {
                experiments: experiments
                    .iter()
                    .map(|(name, counters, reports, elapsed)| ExperimentReport {
                        name,
                        counters: counters.clone(),
                        reports: reports.iter().map(|r| r.to_document()).collect(),
                        elapsed: *elapsed,
                    })
                    .collect(),
            };
            writeln!(out, "{}", pretty(&doc)?)?;
        } else {
            let rows: Vec<_> = experiments.iter().map(|(n, _, r, _)| (n.clone(), r.clone())).collect();
            write!(out, "{}", format_table(&rows))?;
            for (name, counters, _, elapsed) in &experiments {
                write!(out, "{name}: {}", counters.join(","))?;
                if let Some(t) = elapsed {
                    write!(out, " ({t:.3}s)")?;
                }
                writeln!(out)?;
            }
        }
        Ok(EXIT_OK)
    }

    fn protocol(&self, p: &ProtocolCommand, out: &mut dyn Write) -> Result<i32> {
        match p {
            ProtocolCommand::Run { script, ipc } => {
                let events: Vec<ProtocolEvent> = parse_json(script)?;
                let mut world = World::new(ipc_model(*ipc));
                let steps = run_script(&mut world, &events);
                if self.json() {
                    writeln!(out, "{}", pretty(&ScriptReport { steps: &steps, world: &world })?)?;
                } else {
                    for s in &steps {
                        writeln!(out, "{:>4} {} => {}", s.index, compact(&s.event)?, compact(&s.effect)?)?;
                    }
                    writeln!(out, "context switches: {}", world.context_switches)?;
                    for (id, e) in &world.enclaves {
                        writeln!(out, "enclave {id}: {}", compact(e)?)?;
                    }
                }
                Ok(EXIT_OK)
            }
            ProtocolCommand::Explore { depth, alphabet, budget_states, ipc } => {
                let events = match alphabet {
                    Alphabet::Honest => honest_alphabet(),
                    Alphabet::Adversarial => adversarial_alphabet(),
                };
                let report = explore(&standard_world(ipc_model(*ipc)), &events, *depth, *budget_states)?;
                if self.json() {
                    writeln!(out, "{}", pretty(&report)?)?;
                } else {
                    writeln!(
                        out,
                        "depth {}: {} states, {} transitions",
                        report.depth, report.states, report.transitions
                    )?;
                    writeln!(
                        out,
                        "host reads: {} granted, {} denied, {} outside VERIFIED",
                        report.reads_granted, report.reads_denied, report.reads_outside_verified
                    )?;
                    writeln!(out, "halted states: {}", report.halted_states)?;
                    writeln!(out, "violations: {}", report.violations.len())?;
                    for v in &report.violations {
                        writeln!(out, "  {} after {} events", v.invariant, v.events.len())?;
                        for e in &v.events {
                            writeln!(out, "    {}", compact(e)?)?;
                        }
                    }
                }
                Ok(if report.violations.is_empty() { EXIT_OK } else { EXIT_REJECTED })
            }
            ProtocolCommand::Attest { db, measurements, counters, ipc } => {
                let db = load_db(db)?;
                let log: MeasurementLog = parse_json(measurements)?;
                check_log(&log, &db)?;
                let verifier = log_verifier(&db, &log, counters.as_deref())?;
                let run = attested_run(&verifier, &measurements_from_log(&log), ipc_model(*ipc));
                if self.json() {
                    writeln!(out, "{}", pretty(&run)?)?;
                } else {
                    for s in &run.steps {
                        writeln!(out, "{:>4} {} => {}", s.index, compact(&s.event)?, compact(&s.effect)?)?;
                    }
                    match run.halted_at {
                        Some(i) => writeln!(out, "tracee halted at segment {i}")?,
                        None => writeln!(out, "all {} segments verified", log.measurements.len())?,
                    }
                    writeln!(out, "context switches: {}", run.world.context_switches)?;
                }
                Ok(if run.halted_at.is_some() { EXIT_REJECTED } else { EXIT_OK })
            }
        }
    }

    fn counters(&self, a: &CountersArgs, out: &mut dyn Write) -> Result<i32> {
        let db = load_db(&a.db)?;
        let usable: Vec<usize> = (0..db.counters.len()).filter(|&i| db.counters[i].deterministic).collect();
        if a.k == 0 || a.k > usable.len() {
            bail!("subset size {} must be between 1 and {}", a.k, usable.len());
        }
        let mut loops: Vec<CounterVector> = db
            .segments()
            .flat_map(|s| s.candidates.iter())
            .flat_map(|c| c.loops.iter())
            .map(|l| CounterVector::new(usable.iter().map(|&i| l.values()[i]).collect()))
            .collect();
        loops.sort();
        loops.dedup();
        let ranked = rank_counter_subsets(&loops, usable.len(), a.k);
        let report = CountersReport {
            k: a.k,
            loops: loops.len(),
            subsets: ranked.len(),
            ranked: ranked
                .iter()
                .take(a.top)
                .map(|r| RankedDocument {
                    counters: r.counters.iter().map(|&i| db.counters[usable[i]].name.clone()).collect(),
                    rank: r.score.rank,
                    gram_determinant: r.score.gram_determinant.to_string(),
                    covolume: r.score.covolume(),
                })
                .collect(),
        };
        if self.json() {
            writeln!(out, "{}", pretty(&report)?)?;
        } else {
            writeln!(out, "{} distinct loops, {} subsets of {} counters", report.loops, report.subsets, report.k)?;
            for (i, r) in report.ranked.iter().enumerate() {
                writeln!(out, "{:>3}. rank {} covolume {:.4e}  {}", i + 1, r.rank, r.covolume, r.counters.join(","))?;
            }
        }
        Ok(EXIT_OK)
    }

    fn demo(&self, a: &DemoArgs, out: &mut dyn Write) -> Result<i32> {
        let written = crate::demos::write_demo(&a.name, &a.out_dir)?;
        if self.json() {
            let files: Vec<&PathBuf> = written.iter().collect();
            writeln!(out, "{}", pretty(&files)?)?;
        } else {
            for p in &written {
                writeln!(out, "wrote {}", p.display())?;
            }
        }
        Ok(EXIT_OK)
    }
}

fn compact<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string(value)?)
}

fn emit(out: &mut dyn Write, path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_file(p, &format!("{text}\n")),
        None => Ok(writeln!(out, "{text}")?),
    }
}
