// SPDX-License-Identifier: Apache-2.0

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SimError;
use crate::cfg::{AnnotatedCfg, BlockTrace};
use crate::preprocess::{expand, ExpandedGraph, NodeId, DEFAULT_NODE_BUDGET};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WalkConstraints {
    pub min_segments: usize,
    pub max_segments: usize,
    /// Extra visits allowed to any (block, call stack) within one segment.
    pub max_loop_iterations: u32,
    pub max_steps: usize,
}

impl Default for WalkConstraints {
    fn default() -> Self {
        WalkConstraints { min_segments: 1, max_segments: 50, max_loop_iterations: 10, max_steps: 1_000_000 }
    }
}

const ATTEMPTS: usize = 64;
/// Chance of stopping at a measurement point once enough segments exist.
const STOP_PROBABILITY: f64 = 0.2;

struct Walker<'a> {
    graph: &'a ExpandedGraph,
    is_mp: Vec<bool>,
    preds: Vec<Vec<NodeId>>,
    limit: u32,
    visits: Vec<u32>,
    touched: Vec<NodeId>,
    /// Non-measurement nodes that can still reach a measurement point
    /// through nodes with visits left.
    good: Vec<bool>,
}

impl Walker<'_> {
    fn exhausted(&self, n: NodeId) -> bool {
        self.visits[n] >= self.limit
    }

    fn recompute_good(&mut self) {
        self.good.iter_mut().for_each(|g| *g = false);
        let mut queue: VecDeque<NodeId> = (0..self.is_mp.len()).filter(|&v| self.is_mp[v]).collect();
        while let Some(w) = queue.pop_front() {
            for &v in &self.preds[w] {
                if !self.is_mp[v] && !self.good[v] && !self.exhausted(v) {
                    self.good[v] = true;
                    queue.push_back(v);
                }
            }
        }
    }

    fn reset_segment(&mut self) {
        let dirty = self.touched.iter().any(|&n| self.exhausted(n));
        for &n in &self.touched {
            self.visits[n] = 0;
        }
        self.touched.clear();
        if dirty {
            self.recompute_good();
        }
    }

    fn visit(&mut self, n: NodeId) {
        if self.visits[n] == 0 {
            self.touched.push(n);
        }
        self.visits[n] += 1;
        if self.exhausted(n) && !self.is_mp[n] {
            self.recompute_good();
        }
    }

    fn attempt(&mut self, rng: &mut ChaCha8Rng, c: &WalkConstraints) -> Option<Vec<NodeId>> {
        self.visits.iter_mut().for_each(|v| *v = 0);
        self.touched.clear();
        self.recompute_good();
        let mut current = 0;
        let mut trace = vec![current];
        let mut segments = 0;
        while trace.len() < c.max_steps {
            if self.is_mp[current] && trace.len() > 1 {
                segments += 1;
                let dead_end = self.graph.successors(current).is_empty();
                if segments >= c.max_segments
                    || (segments >= c.min_segments && (dead_end || rng.random_bool(STOP_PROBABILITY)))
                {
                    return Some(trace);
                }
            }
            if self.is_mp[current] {
                self.reset_segment();
            }
            let options: Vec<NodeId> = self
                .graph
                .successors(current)
                .iter()
                .copied()
                .filter(|&w| self.is_mp[w] || (self.good[w] && !self.exhausted(w)))
                .collect();
            if options.is_empty() {
                return None;
            }
            current = options[rng.random_range(0..options.len())];
            if !self.is_mp[current] {
                self.visit(current);
            }
            trace.push(current);
        }
        None
    }
}

/// A random trace from the program entry that passes `validate_trace`.
///
/// Within each segment every expanded node is visited at most
/// `1 + max_loop_iterations` times. Failed attempts are retried with
/// derived seeds.
pub fn random_valid_walk(cfg: &AnnotatedCfg, seed: u64, constraints: &WalkConstraints) -> Result<BlockTrace, SimError> {
    let graph = expand(cfg, DEFAULT_NODE_BUDGET)?;
    let n = graph.node_count();
    let mut preds = vec![Vec::new(); n];
    for v in 0..n {
        for &w in graph.successors(v) {
            preds[w].push(v);
        }
    }
    let mut walker = Walker {
        is_mp: (0..n).map(|v| cfg.is_measurement_point(graph.block(v))).collect(),
        graph: &graph,
        preds,
        limit: constraints.max_loop_iterations.saturating_add(1),
        visits: vec![0; n],
        touched: Vec::new(),
        good: vec![false; n],
    };
    for attempt in 0..ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt as u64);
        if let Some(nodes) = walker.attempt(&mut rng, constraints) {
            return Ok(BlockTrace::new(nodes.into_iter().map(|v| graph.block(v)).collect()));
        }
    }
    Err(SimError::WalkFailed { attempts: ATTEMPTS })
}
