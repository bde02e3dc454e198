// SPDX-License-Identifier: Apache-2.0

use std::collections::{HashMap, VecDeque};

use super::PreprocessError;
use crate::cfg::{AnnotatedCfg, BlockId, CallStack, Transfer};

/// Index of a node in an [`ExpandedGraph`].
pub type NodeId = usize;

/// Call-string expansion of a graph: one node per (block, call stack) pair
/// reachable from the program entry with an empty stack.
#[derive(Clone, Debug)]
pub struct ExpandedGraph {
    nodes: Vec<(BlockId, usize)>,
    stacks: Vec<Vec<BlockId>>,
    index: HashMap<(BlockId, usize), NodeId>,
    succ: Vec<Vec<NodeId>>,
    by_block: Vec<Vec<NodeId>>,
}

pub const DEFAULT_NODE_BUDGET: usize = 1_000_000;

struct Interner {
    stacks: Vec<Vec<BlockId>>,
    index: HashMap<Vec<BlockId>, usize>,
}

impl Interner {
    fn intern(&mut self, s: Vec<BlockId>) -> usize {
        if let Some(&i) = self.index.get(&s) {
            return i;
        }
        self.stacks.push(s.clone());
        self.index.insert(s, self.stacks.len() - 1);
        self.stacks.len() - 1
    }
}

/// Expands `cfg` by call strings. Call edges push the call-site block,
/// return edges pop it and must land on one of its return sites.
pub fn expand(cfg: &AnnotatedCfg, node_budget: usize) -> Result<ExpandedGraph, PreprocessError> {
    let mut interner = Interner { stacks: Vec::new(), index: HashMap::new() };
    let empty = interner.intern(Vec::new());
    let mut nodes = vec![(cfg.entry(), empty)];
    let mut index = HashMap::from([((cfg.entry(), empty), 0)]);
    let mut succ: Vec<Vec<NodeId>> = vec![Vec::new()];
    let mut queue = VecDeque::from([0]);

    while let Some(n) = queue.pop_front() {
        let (block, sid) = nodes[n];
        let mut targets = Vec::new();
        for (edge, transfer) in cfg.out_edges(block) {
            let stack = &interner.stacks[sid];
            let next = match transfer {
                Transfer::Intra => Some((edge.to, sid)),
                Transfer::Call => {
                    let mut s = stack.clone();
                    s.push(block);
                    Some((edge.to, interner.intern(s)))
                }
                Transfer::Return => match stack.split_last() {
                    Some((&site, rest)) if cfg.returns_to(site, edge.to) => {
                        let rest = rest.to_vec();
                        Some((edge.to, interner.intern(rest)))
                    }
                    _ => None,
                },
                Transfer::ReturnLink => None,
            };
            let Some(key) = next else { continue };
            let id = match index.get(&key) {
                Some(&id) => id,
                None => {
                    if nodes.len() >= node_budget {
                        return Err(PreprocessError::NodeBudget { budget: node_budget, reached: nodes.len() + 1 });
                    }
                    nodes.push(key);
                    succ.push(Vec::new());
                    index.insert(key, nodes.len() - 1);
                    queue.push_back(nodes.len() - 1);
                    nodes.len() - 1
                }
            };
            if !targets.contains(&id) {
                targets.push(id);
            }
        }
        succ[n] = targets;
    }

    let mut by_block = vec![Vec::new(); cfg.blocks().len()];
    for (i, &(b, _)) in nodes.iter().enumerate() {
        by_block[b.index()].push(i);
    }
    Ok(ExpandedGraph { nodes, stacks: interner.stacks, index, succ, by_block })
}

impl ExpandedGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.succ.iter().map(Vec::len).sum()
    }

    pub fn block(&self, n: NodeId) -> BlockId {
        self.nodes[n].0
    }

    /// Call sites on the stack of `n`, outermost first.
    pub fn frames(&self, n: NodeId) -> &[BlockId] {
        &self.stacks[self.nodes[n].1]
    }

    pub fn call_stack(&self, cfg: &AnnotatedCfg, n: NodeId) -> CallStack {
        CallStack { frames: self.frames(n).iter().map(|&b| cfg.block(b).id.clone()).collect() }
    }

    pub fn successors(&self, n: NodeId) -> &[NodeId] {
        &self.succ[n]
    }

    /// Every expanded copy of `block`.
    pub fn nodes_of(&self, block: BlockId) -> &[NodeId] {
        &self.by_block[block.index()]
    }

    pub fn find(&self, cfg: &AnnotatedCfg, block: BlockId, stack: &CallStack) -> Option<NodeId> {
        let frames: Option<Vec<BlockId>> = stack.frames.iter().map(|f| cfg.lookup(f)).collect();
        let frames = frames?;
        self.nodes_of(block).iter().copied().find(|&n| self.frames(n) == frames.as_slice())
    }

    pub(crate) fn stack_by_id(&self, cfg: &AnnotatedCfg, stack_id: usize) -> CallStack {
        CallStack { frames: self.stacks[stack_id].iter().map(|&b| cfg.block(b).id.clone()).collect() }
    }

    pub(crate) fn stack_id(&self, n: NodeId) -> usize {
        self.nodes[n].1
    }

    #[allow(dead_code)]
    pub(crate) fn lookup(&self, block: BlockId, stack_id: usize) -> Option<NodeId> {
        self.index.get(&(block, stack_id)).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hpc::EventTable;
    use crate::program::{FunctionDef, Program, Stmt};

    #[test]
    fn single_function_is_isomorphic() {
        let p =
            Program::new(vec![FunctionDef::new("main", &["addi"], vec![Stmt::repeat(2, vec![Stmt::block(&["add"])])])]);
        let c = p.compile(&EventTable::toy_isa()).unwrap();
        let g = expand(&c.cfg, 1000).unwrap();
        assert_eq!(g.node_count(), c.cfg.blocks().len());
        assert_eq!(g.edge_count(), c.cfg.edges().len());
        assert!((0..g.node_count()).all(|n| g.frames(n).is_empty()));
    }

    #[test]
    fn two_call_sites_duplicate_callee() {
        let p = Program::new(vec![
            FunctionDef::new("main", &["addi"], vec![Stmt::call("f"), Stmt::call("f")]),
            FunctionDef::new("f", &["addi"], vec![Stmt::block(&["mul"])]),
        ]);
        let c = p.compile(&EventTable::toy_isa()).unwrap();
        let g = expand(&c.cfg, 1000).unwrap();
        let f_entry = c.cfg.functions()[1].entry;
        assert_eq!(g.nodes_of(f_entry).len(), 2);
    }

    #[test]
    fn call_string_count_matches_call_graph_enumeration() {
        // main -> a1,a2 ; each a -> b1,b2 ; each b -> leaf (twice per caller).
        let mut fns = vec![FunctionDef::new("main", &["addi"], vec![Stmt::call("a1"), Stmt::call("a2")])];
        for a in ["a1", "a2"] {
            fns.push(FunctionDef::new(a, &["addi"], vec![Stmt::call("b1"), Stmt::call("b2")]));
        }
        for b in ["b1", "b2"] {
            fns.push(FunctionDef::new(b, &["addi"], vec![Stmt::call("leaf"), Stmt::call("leaf")]));
        }
        fns.push(FunctionDef::new("leaf", &["mul"], vec![]));
        let p = Program::new(fns);
        let c = p.compile(&EventTable::toy_isa()).unwrap();
        let g = expand(&c.cfg, 10_000).unwrap();

        // Oracle: count call strings per function by DFS over call sites.
        let cfg = &c.cfg;
        let mut strings = vec![0usize; cfg.functions().len()];
        fn walk(cfg: &AnnotatedCfg, f: usize, strings: &mut [usize]) {
            strings[f] += 1;
            for &b in &cfg.functions()[f].blocks {
                for (e, t) in cfg.out_edges(b) {
                    if t == Transfer::Call {
                        walk(cfg, cfg.block(e.to).function.index(), strings);
                    }
                }
            }
        }
        walk(cfg, 0, &mut strings);
        assert_eq!(strings[5], 8);
        let expected: usize = cfg.functions().iter().enumerate().map(|(i, f)| f.blocks.len() * strings[i]).sum();
        assert_eq!(g.node_count(), expected);
    }

    #[test]
    fn node_budget_is_enforced() {
        let p = Program::new(vec![
            FunctionDef::new("main", &["addi"], vec![Stmt::call("f"), Stmt::call("f")]),
            FunctionDef::new("f", &["addi"], vec![]),
        ]);
        let c = p.compile(&EventTable::toy_isa()).unwrap();
        let err = expand(&c.cfg, 3).unwrap_err();
        assert!(matches!(err, PreprocessError::NodeBudget { budget: 3, reached: 4 }));
    }
}
