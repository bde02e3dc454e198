// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::ops::ControlFlow;
use std::sync::{Arc, OnceLock};

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use rayon::prelude::*;
use serde::Serialize;

use super::cycles::elementary_circuits;
use super::db::{PathCandidate, Segment, SegmentDatabase, SkipTransition};
use super::expand::{expand, ExpandedGraph, NodeId, DEFAULT_NODE_BUDGET};
use super::PreprocessError;
use crate::cfg::{AnnotatedCfg, BlockId};
use crate::hpc::{BlockDeltas, EventTable};
use crate::vector::CounterVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Budgets {
    /// Simple paths per (start, end) segment.
    pub paths: usize,
    /// Elementary circuits in one candidate's loop closure.
    pub cycles: usize,
    /// Nodes of the call-string expansion.
    pub nodes: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets { paths: 100_000, cycles: 10_000, nodes: DEFAULT_NODE_BUDGET }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SegmentStats {
    pub start: String,
    pub end: String,
    pub paths: usize,
    pub candidates: usize,
    pub max_loops: usize,
    pub skip: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PreprocessStats {
    pub expanded_nodes: usize,
    pub expanded_edges: usize,
    pub segments: Vec<SegmentStats>,
}

/// Distinct nonzero loops of one strongly connected component.
struct ComponentLoops {
    circuits: usize,
    loops: BTreeSet<(CounterVector, u64)>,
}

type LoopCache = Vec<OnceLock<Option<Arc<ComponentLoops>>>>;

struct Context<'a> {
    cfg: &'a AnnotatedCfg,
    deltas: &'a BlockDeltas,
    graph: &'a ExpandedGraph,
    budgets: Budgets,
    is_mp: Vec<bool>,
    /// Non-measurement nodes from which a measurement point is reachable.
    live: Vec<bool>,
    /// Cyclic component of each non-measurement node.
    component: Vec<Option<usize>>,
    members: Vec<Vec<NodeId>>,
    loops: LoopCache,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord)]
struct RawCandidate {
    entry: usize,
    exit: usize,
    base: CounterVector,
    instructions: u64,
    components: Vec<usize>,
}

#[derive(Default)]
struct KeyPaths {
    paths: usize,
    raw: BTreeSet<RawCandidate>,
}

/// Enumerates the database with default budgets.
pub fn enumerate_segments(cfg: &AnnotatedCfg, table: Option<&EventTable>) -> Result<SegmentDatabase, PreprocessError> {
    preprocess(cfg, table, Budgets::default()).map(|(db, _)| db)
}

/// Builds the segment database for `cfg`: every simple path between
/// consecutive measurement points in the call-string expansion, each with
/// the loops of every cyclic component its interior touches.
pub fn preprocess(
    cfg: &AnnotatedCfg,
    table: Option<&EventTable>,
    budgets: Budgets,
) -> Result<(SegmentDatabase, PreprocessStats), PreprocessError> {
    let deltas = BlockDeltas::resolve(cfg, table)?;
    let graph = expand(cfg, budgets.nodes)?;
    let ctx = Context::new(cfg, &deltas, &graph, budgets);

    let starts: Vec<NodeId> = (0..graph.node_count()).filter(|&n| ctx.is_mp[n]).collect();
    let per_start: Vec<BTreeMap<(BlockId, BlockId), KeyPaths>> =
        starts.par_iter().map(|&s| ctx.paths_from(s)).collect::<Result<_, _>>()?;

    let mut merged: BTreeMap<(BlockId, BlockId), KeyPaths> = BTreeMap::new();
    for map in per_start {
        for (key, kp) in map {
            let entry = merged.entry(key).or_default();
            entry.paths += kp.paths;
            entry.raw.extend(kp.raw);
            if entry.paths > budgets.paths {
                return Err(ctx.path_budget(key));
            }
        }
    }

    let mut segments = Vec::new();
    let mut stats = Vec::new();
    for (&(start, end), kp) in &merged {
        let mut candidates = BTreeSet::new();
        for raw in &kp.raw {
            candidates.insert(ctx.candidate(raw, start, end)?);
        }
        let candidates: Vec<PathCandidate> = candidates.into_iter().collect();
        stats.push(SegmentStats {
            start: cfg.block(start).id.clone(),
            end: cfg.block(end).id.clone(),
            paths: kp.paths,
            candidates: candidates.len(),
            max_loops: candidates.iter().map(|c| c.loops.len()).max().unwrap_or(0),
            skip: false,
        });
        segments.push(Segment {
            start: cfg.block(start).id.clone(),
            end: cfg.block(end).id.clone(),
            candidates,
            skip: None,
        });
    }
    for (start, end) in cfg.skip_segments() {
        let transitions = ctx.skip_transitions(start, end);
        stats.push(SegmentStats {
            start: cfg.block(start).id.clone(),
            end: cfg.block(end).id.clone(),
            paths: 0,
            candidates: 0,
            max_loops: 0,
            skip: true,
        });
        segments.push(Segment {
            start: cfg.block(start).id.clone(),
            end: cfg.block(end).id.clone(),
            candidates: Vec::new(),
            skip: Some(transitions),
        });
    }
    stats.sort_by(|a, b| (&a.start, &a.end).cmp(&(&b.start, &b.end)));

    let db = SegmentDatabase::new(cfg.digest().to_string(), deltas.counters().to_vec(), segments);
    let stats =
        PreprocessStats { expanded_nodes: graph.node_count(), expanded_edges: graph.edge_count(), segments: stats };
    Ok((db, stats))
}

impl<'a> Context<'a> {
    fn new(cfg: &'a AnnotatedCfg, deltas: &'a BlockDeltas, graph: &'a ExpandedGraph, budgets: Budgets) -> Self {
        let n = graph.node_count();
        let is_mp: Vec<bool> = (0..n).map(|v| cfg.is_measurement_point(graph.block(v))).collect();

        let mut preds = vec![Vec::new(); n];
        for v in 0..n {
            for &w in graph.successors(v) {
                preds[w].push(v);
            }
        }
        let mut live = vec![false; n];
        let mut queue: VecDeque<NodeId> = (0..n).filter(|&v| is_mp[v]).collect();
        while let Some(w) = queue.pop_front() {
            for &v in &preds[w] {
                if !is_mp[v] && !live[v] {
                    live[v] = true;
                    queue.push_back(v);
                }
            }
        }

        // Cyclic components of the graph with measurement points removed.
        let mut sub: DiGraph<NodeId, ()> = DiGraph::new();
        let mut local = vec![None; n];
        for v in (0..n).filter(|&v| !is_mp[v]) {
            local[v] = Some(sub.add_node(v));
        }
        for v in 0..n {
            let Some(a) = local[v] else { continue };
            for &w in graph.successors(v) {
                if let Some(b) = local[w] {
                    sub.add_edge(a, b, ());
                }
            }
        }
        let mut component = vec![None; n];
        let mut members = Vec::new();
        for scc in tarjan_scc(&sub) {
            let cyclic = scc.len() > 1 || sub.contains_edge(scc[0], scc[0]);
            if !cyclic {
                continue;
            }
            let mut nodes: Vec<NodeId> = scc.iter().map(|&i: &NodeIndex| sub[i]).collect();
            nodes.sort_unstable();
            for &v in &nodes {
                component[v] = Some(members.len());
            }
            members.push(nodes);
        }
        let loops = (0..members.len()).map(|_| OnceLock::new()).collect();
        Context { cfg, deltas, graph, budgets, is_mp, live, component, members, loops }
    }

    fn path_budget(&self, (start, end): (BlockId, BlockId)) -> PreprocessError {
        PreprocessError::PathBudget {
            start: self.cfg.block(start).id.clone(),
            end: self.cfg.block(end).id.clone(),
            budget: self.budgets.paths,
        }
    }

    fn cycle_budget(&self, start: BlockId, end: BlockId) -> PreprocessError {
        PreprocessError::CycleBudget {
            start: self.cfg.block(start).id.clone(),
            end: self.cfg.block(end).id.clone(),
            budget: self.budgets.cycles,
        }
    }

    fn paths_from(&self, s: NodeId) -> Result<BTreeMap<(BlockId, BlockId), KeyPaths>, PreprocessError> {
        let g = self.graph;
        let start_block = g.block(s);
        let mut out: BTreeMap<(BlockId, BlockId), KeyPaths> = BTreeMap::new();
        let mut path = vec![s];
        let mut next = vec![0usize];
        let mut on_path: HashSet<NodeId> = HashSet::new();
        while let Some(&v) = path.last() {
            let i = next.last_mut().expect("parallel stacks");
            let Some(&w) = g.successors(v).get(*i) else {
                path.pop();
                next.pop();
                on_path.remove(&v);
                continue;
            };
            *i += 1;
            if self.is_mp[w] {
                let key = (start_block, g.block(w));
                if self.cfg.is_skip_segment(key.0, key.1) {
                    continue;
                }
                let kp = out.entry(key).or_default();
                kp.paths += 1;
                if kp.paths > self.budgets.paths {
                    return Err(self.path_budget(key));
                }
                kp.raw.insert(self.raw_candidate(&path, w));
            } else if self.live[w] && on_path.insert(w) {
                path.push(w);
                next.push(0);
            }
        }
        Ok(out)
    }

    fn raw_candidate(&self, path: &[NodeId], end: NodeId) -> RawCandidate {
        let g = self.graph;
        let mut base = CounterVector::zeros(self.deltas.dimension());
        let mut instructions = 0;
        for &v in path[1..].iter().chain([&end]) {
            base += self.deltas.get(g.block(v));
            instructions += self.cfg.block(g.block(v)).instruction_count;
        }
        let mut components: Vec<usize> = path[1..].iter().filter_map(|&v| self.component[v]).collect();
        components.sort_unstable();
        components.dedup();
        RawCandidate { entry: g.stack_id(path[0]), exit: g.stack_id(end), base, instructions, components }
    }

    fn component_loops(&self, c: usize) -> Option<Arc<ComponentLoops>> {
        self.loops[c]
            .get_or_init(|| {
                let nodes = &self.members[c];
                let adj: Vec<Vec<usize>> = nodes
                    .iter()
                    .map(|&v| self.graph.successors(v).iter().filter_map(|w| nodes.binary_search(w).ok()).collect())
                    .collect();
                let mut circuits = 0usize;
                let mut loops = BTreeSet::new();
                let complete = elementary_circuits(&adj, |cycle| {
                    circuits += 1;
                    if circuits > self.budgets.cycles {
                        return ControlFlow::Break(());
                    }
                    let mut delta = CounterVector::zeros(self.deltas.dimension());
                    let mut count = 0;
                    for &i in cycle {
                        let b = self.graph.block(nodes[i]);
                        delta += self.deltas.get(b);
                        count += self.cfg.block(b).instruction_count;
                    }
                    if !delta.is_zero() {
                        loops.insert((delta, count));
                    }
                    ControlFlow::Continue(())
                });
                complete.then(|| Arc::new(ComponentLoops { circuits, loops }))
            })
            .clone()
    }

    fn candidate(&self, raw: &RawCandidate, start: BlockId, end: BlockId) -> Result<PathCandidate, PreprocessError> {
        let mut circuits = 0;
        let mut loops = BTreeSet::new();
        for &c in &raw.components {
            let found = self.component_loops(c).ok_or_else(|| self.cycle_budget(start, end))?;
            circuits += found.circuits;
            if circuits > self.budgets.cycles {
                return Err(self.cycle_budget(start, end));
            }
            loops.extend(found.loops.iter().cloned());
        }
        let (loops, loop_instruction_counts) = loops.into_iter().unzip();
        Ok(PathCandidate {
            entry_stack: self.stack(raw.entry),
            exit_stack: self.stack(raw.exit),
            base: raw.base.clone(),
            base_instruction_count: raw.instructions,
            loops,
            loop_instruction_counts,
        })
    }

    fn stack(&self, stack_id: usize) -> crate::cfg::CallStack {
        self.graph.stack_by_id(self.cfg, stack_id)
    }

    fn skip_transitions(&self, start: BlockId, end: BlockId) -> Vec<SkipTransition> {
        let g = self.graph;
        let ends = g.nodes_of(end);
        let mut out = BTreeSet::new();
        for &s in g.nodes_of(start) {
            let mut seen = HashSet::from([s]);
            let mut queue = VecDeque::from([s]);
            let mut reached = Vec::new();
            while let Some(v) = queue.pop_front() {
                for &w in g.successors(v) {
                    if g.block(w) == end {
                        reached.push(w);
                    }
                    if !self.is_mp[w] && seen.insert(w) {
                        queue.push_back(w);
                    }
                }
            }
            // The skipped region may be absent from the graph; then any
            // expanded copy of the end point is possible.
            if reached.is_empty() {
                reached.extend_from_slice(ends);
            }
            let entry_stack = g.call_stack(self.cfg, s);
            if reached.is_empty() {
                out.insert(SkipTransition { entry_stack: entry_stack.clone(), exit_stack: entry_stack });
                continue;
            }
            for e in reached {
                out.insert(SkipTransition { entry_stack: entry_stack.clone(), exit_stack: g.call_stack(self.cfg, e) });
            }
        }
        out.into_iter().collect()
    }
}
