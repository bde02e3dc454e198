// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::document::{BlockDocument, CfgDocument, EdgeDocument, FunctionDocument, SkipDocument};
use super::CfgError;
use crate::digest::content_digest;
use crate::vector::CounterVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(pub u32);

impl BlockId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FuncId(pub u32);

impl FuncId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Fallthrough,
    Branch,
    Call,
    Return,
    Indirect,
}

/// How an edge moves control once call strings are taken into account.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transfer {
    /// Stays in the function, call stack unchanged.
    Intra,
    /// Enters a callee's entry block and pushes the call site.
    Call,
    /// Leaves a function to a return site, popping the matching frame.
    Return,
    /// Intra-function edge out of a call block: names the call's return
    /// site and is never taken directly.
    ReturnLink,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BasicBlock {
    pub id: String,
    pub function: FuncId,
    pub instructions: Option<Vec<String>>,
    pub delta: Option<CounterVector>,
    pub is_measurement_point: bool,
    pub instruction_count: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub from: BlockId,
    pub to: BlockId,
    pub kind: EdgeKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Function {
    pub name: String,
    pub entry: BlockId,
    pub blocks: Vec<BlockId>,
}

/// A validated control-flow graph annotated with counter information.
///
/// Immutable after construction; `load_cfg` checks every structural
/// invariant, including the ban on recursion.
#[derive(Clone, Debug)]
pub struct AnnotatedCfg {
    counters: Vec<String>,
    functions: Vec<Function>,
    blocks: Vec<BasicBlock>,
    edges: Vec<Edge>,
    entry: BlockId,
    skip_segments: BTreeSet<(BlockId, BlockId)>,
    block_index: HashMap<String, BlockId>,
    out_edges: Vec<Vec<usize>>,
    transfers: Vec<Transfer>,
    digest: String,
}

impl PartialEq for AnnotatedCfg {
    fn eq(&self, other: &Self) -> bool {
        self.counters == other.counters
            && self.functions == other.functions
            && self.blocks == other.blocks
            && self.edges == other.edges
            && self.entry == other.entry
            && self.skip_segments == other.skip_segments
    }
}

impl Eq for AnnotatedCfg {}

/// Parses and validates a graph document.
pub fn load_cfg(document: &str) -> Result<AnnotatedCfg, CfgError> {
    let doc: CfgDocument = serde_json::from_str(document).map_err(|e| CfgError::Schema(e.to_string()))?;
    AnnotatedCfg::from_document(doc)
}

impl AnnotatedCfg {
    pub fn from_document(doc: CfgDocument) -> Result<Self, CfgError> {
        let dim = doc.counters.len();
        if dim == 0 {
            return Err(CfgError::Schema("counter list is empty".into()));
        }

        let mut func_index: HashMap<&str, FuncId> = HashMap::new();
        for (i, f) in doc.functions.iter().enumerate() {
            if func_index.insert(f.name.as_str(), FuncId(i as u32)).is_some() {
                return Err(CfgError::DuplicateFunction(f.name.clone()));
            }
        }

        let mut block_index: HashMap<String, BlockId> = HashMap::new();
        let mut blocks = Vec::with_capacity(doc.blocks.len());
        for (i, b) in doc.blocks.iter().enumerate() {
            if block_index.insert(b.id.clone(), BlockId(i as u32)).is_some() {
                return Err(CfgError::DuplicateBlock(b.id.clone()));
            }
            let function = *func_index
                .get(b.function.as_str())
                .ok_or_else(|| CfgError::UnknownFunction { block: b.id.clone(), function: b.function.clone() })?;
            if b.instructions.is_none() && b.delta.is_none() {
                return Err(CfgError::MissingAnnotation(b.id.clone()));
            }
            if let Some(delta) = &b.delta {
                if delta.len() != dim {
                    return Err(CfgError::DeltaDimension { block: b.id.clone(), expected: dim, found: delta.len() });
                }
            }
            if let Some(ins) = &b.instructions {
                if ins.len() as u64 != b.instruction_count {
                    return Err(CfgError::InstructionCount {
                        block: b.id.clone(),
                        declared: b.instruction_count,
                        listed: ins.len(),
                    });
                }
            }
            blocks.push(BasicBlock {
                id: b.id.clone(),
                function,
                instructions: b.instructions.clone(),
                delta: b.delta.clone().map(CounterVector::new),
                is_measurement_point: b.is_measurement_point,
                instruction_count: b.instruction_count,
            });
        }

        let lookup = |id: &str| -> Result<BlockId, CfgError> {
            block_index.get(id).copied().ok_or_else(|| CfgError::UnknownBlock(id.to_string()))
        };

        let mut functions = Vec::with_capacity(doc.functions.len());
        let mut owner: Vec<Option<FuncId>> = vec![None; blocks.len()];
        for (i, f) in doc.functions.iter().enumerate() {
            let fid = FuncId(i as u32);
            let entry = lookup(&f.entry)?;
            let mut members = Vec::with_capacity(f.blocks.len());
            for id in &f.blocks {
                let b = lookup(id)?;
                if owner[b.index()].replace(fid).is_some() {
                    return Err(CfgError::Membership(format!("block {id} listed by more than one function")));
                }
                if blocks[b.index()].function != fid {
                    return Err(CfgError::Membership(format!(
                        "block {id} is listed by function {} but declares function {}",
                        f.name,
                        doc.functions[blocks[b.index()].function.index()].name
                    )));
                }
                members.push(b);
            }
            if !members.contains(&entry) {
                return Err(CfgError::Membership(format!(
                    "entry {} of function {} is not one of its blocks",
                    f.entry, f.name
                )));
            }
            functions.push(Function { name: f.name.clone(), entry, blocks: members });
        }
        if let Some(pos) = owner.iter().position(Option::is_none) {
            return Err(CfgError::Membership(format!("block {} is not listed by any function", blocks[pos].id)));
        }

        let mut edges = Vec::with_capacity(doc.edges.len());
        let mut seen = BTreeSet::new();
        for e in &doc.edges {
            let from = block_index.get(&e.from).copied();
            let to = block_index.get(&e.to).copied();
            let (Some(from), Some(to)) = (from, to) else {
                return Err(CfgError::DanglingEdge { from: e.from.clone(), to: e.to.clone() });
            };
            if !seen.insert((from, to, e.kind)) {
                return Err(CfgError::BadEdge {
                    from: e.from.clone(),
                    to: e.to.clone(),
                    reason: "duplicate edge".into(),
                });
            }
            edges.push(Edge { from, to, kind: e.kind });
        }

        let entry = lookup(&doc.entry)?;
        if !blocks[entry.index()].is_measurement_point {
            return Err(CfgError::EntryNotMeasurementPoint(doc.entry.clone()));
        }

        let mut skip_segments = BTreeSet::new();
        for s in &doc.skip_segments {
            let start = lookup(&s.start)?;
            let end = lookup(&s.end)?;
            for (b, id) in [(start, &s.start), (end, &s.end)] {
                if !blocks[b.index()].is_measurement_point {
                    return Err(CfgError::Schema(format!("skip segment endpoint {id} is not a measurement point")));
                }
            }
            skip_segments.insert((start, end));
        }

        let mut out_edges = vec![Vec::new(); blocks.len()];
        for (i, e) in edges.iter().enumerate() {
            out_edges[e.from.index()].push(i);
        }

        let mut cfg = AnnotatedCfg {
            counters: doc.counters.clone(),
            functions,
            blocks,
            edges,
            entry,
            skip_segments,
            block_index,
            out_edges,
            transfers: Vec::new(),
            digest: String::new(),
        };
        cfg.transfers = cfg.classify_edges()?;
        cfg.check_recursion()?;
        cfg.digest = content_digest(&cfg.to_document());
        Ok(cfg)
    }

    fn is_entry_of_other(&self, from: BlockId, to: BlockId) -> bool {
        let callee = self.blocks[to.index()].function;
        callee != self.blocks[from.index()].function && self.functions[callee.index()].entry == to
    }

    fn classify_edges(&self) -> Result<Vec<Transfer>, CfgError> {
        let bad = |e: &Edge, reason: &str| CfgError::BadEdge {
            from: self.blocks[e.from.index()].id.clone(),
            to: self.blocks[e.to.index()].id.clone(),
            reason: reason.to_string(),
        };
        let same_fn = |e: &Edge| self.blocks[e.from.index()].function == self.blocks[e.to.index()].function;

        let mut is_call = vec![false; self.edges.len()];
        for (i, e) in self.edges.iter().enumerate() {
            match e.kind {
                EdgeKind::Call => {
                    if !self.is_entry_of_other(e.from, e.to) {
                        // A call to the caller's own entry is recursion; report it as such.
                        if same_fn(e) && self.functions[self.blocks[e.to.index()].function.index()].entry == e.to {
                            let name = &self.functions[self.blocks[e.from.index()].function.index()].name;
                            return Err(CfgError::Recursion(vec![name.clone()]));
                        }
                        return Err(bad(e, "call edge must target another function's entry block"));
                    }
                    is_call[i] = true;
                }
                EdgeKind::Indirect if !same_fn(e) => {
                    if !self.is_entry_of_other(e.from, e.to) {
                        return Err(bad(e, "indirect edge leaves the function without targeting an entry block"));
                    }
                    is_call[i] = true;
                }
                EdgeKind::Fallthrough | EdgeKind::Branch if !same_fn(e) => {
                    return Err(bad(e, "fallthrough and branch edges must stay within one function"));
                }
                EdgeKind::Return if same_fn(e) => {
                    return Err(bad(e, "return edge must leave the function"));
                }
                _ => {}
            }
        }

        let mut call_block = vec![false; self.blocks.len()];
        for (i, e) in self.edges.iter().enumerate() {
            if is_call[i] {
                call_block[e.from.index()] = true;
            }
        }

        let mut transfers = Vec::with_capacity(self.edges.len());
        for (i, e) in self.edges.iter().enumerate() {
            let t = if is_call[i] {
                Transfer::Call
            } else if e.kind == EdgeKind::Return {
                Transfer::Return
            } else if call_block[e.from.index()] {
                Transfer::ReturnLink
            } else {
                Transfer::Intra
            };
            transfers.push(t);
        }

        // Every return edge must land on a return site of some call into its function.
        let mut sites: HashMap<FuncId, BTreeSet<BlockId>> = HashMap::new();
        for (i, c) in self.edges.iter().enumerate() {
            if transfers[i] != Transfer::Call {
                continue;
            }
            let callee = self.blocks[c.to.index()].function;
            for &k in &self.out_edges[c.from.index()] {
                if transfers[k] == Transfer::ReturnLink {
                    sites.entry(callee).or_default().insert(self.edges[k].to);
                }
            }
        }
        for (i, e) in self.edges.iter().enumerate() {
            if transfers[i] != Transfer::Return {
                continue;
            }
            let callee = self.blocks[e.from.index()].function;
            if !sites.get(&callee).is_some_and(|s| s.contains(&e.to)) {
                return Err(bad(e, "return edge does not reach a return site of any call into this function"));
            }
        }
        Ok(transfers)
    }

    fn check_recursion(&self) -> Result<(), CfgError> {
        let n = self.functions.len();
        let mut callees: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for (i, e) in self.edges.iter().enumerate() {
            if self.transfers[i] == Transfer::Call {
                let caller = self.blocks[e.from.index()].function.index();
                let callee = self.blocks[e.to.index()].function.index();
                callees[caller].insert(callee);
            }
        }
        // Iterative DFS with colors; a gray target closes a cycle.
        let mut color = vec![0u8; n];
        for root in 0..n {
            if color[root] != 0 {
                continue;
            }
            let mut stack: Vec<(usize, Vec<usize>)> = vec![(root, callees[root].iter().copied().collect())];
            let mut path = vec![root];
            color[root] = 1;
            while let Some((_, pending)) = stack.last_mut() {
                match pending.pop() {
                    Some(next) if color[next] == 1 => {
                        let start = path.iter().position(|&f| f == next).unwrap();
                        let names = path[start..].iter().map(|&f| self.functions[f].name.clone()).collect();
                        return Err(CfgError::Recursion(names));
                    }
                    Some(next) if color[next] == 0 => {
                        color[next] = 1;
                        path.push(next);
                        let mut succ: Vec<usize> = callees[next].iter().copied().collect();
                        succ.reverse();
                        stack.push((next, succ));
                    }
                    Some(_) => {}
                    None => {
                        let (done, _) = stack.pop().unwrap();
                        color[done] = 2;
                        path.pop();
                    }
                }
            }
        }
        Ok(())
    }

    /// Serializes back into the document form accepted by [`load_cfg`].
    pub fn to_document(&self) -> CfgDocument {
        CfgDocument {
            counters: self.counters.clone(),
            functions: self
                .functions
                .iter()
                .map(|f| FunctionDocument {
                    name: f.name.clone(),
                    entry: self.block(f.entry).id.clone(),
                    blocks: f.blocks.iter().map(|&b| self.block(b).id.clone()).collect(),
                })
                .collect(),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockDocument {
                    id: b.id.clone(),
                    function: self.functions[b.function.index()].name.clone(),
                    instruction_count: b.instruction_count,
                    is_measurement_point: b.is_measurement_point,
                    instructions: b.instructions.clone(),
                    delta: b.delta.clone().map(CounterVector::into_values),
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeDocument {
                    from: self.block(e.from).id.clone(),
                    to: self.block(e.to).id.clone(),
                    kind: e.kind,
                })
                .collect(),
            entry: self.block(self.entry).id.clone(),
            skip_segments: self
                .skip_segments
                .iter()
                .map(|&(s, e)| SkipDocument { start: self.block(s).id.clone(), end: self.block(e).id.clone() })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("serializable graph")
    }

    /// Content digest of the canonical document; traces and databases refer
    /// to the graph by this value.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn counters(&self) -> &[String] {
        &self.counters
    }

    pub fn dimension(&self) -> usize {
        self.counters.len()
    }

    pub fn entry(&self) -> BlockId {
        self.entry
    }

    pub fn blocks(&self) -> &[BasicBlock] {
        &self.blocks
    }

    pub fn block(&self, id: BlockId) -> &BasicBlock {
        &self.blocks[id.index()]
    }

    pub fn block_ids(&self) -> impl Iterator<Item = BlockId> + '_ {
        (0..self.blocks.len() as u32).map(BlockId)
    }

    pub fn lookup(&self, id: &str) -> Option<BlockId> {
        self.block_index.get(id).copied()
    }

    pub fn functions(&self) -> &[Function] {
        &self.functions
    }

    pub fn function(&self, id: FuncId) -> &Function {
        &self.functions[id.index()]
    }

    pub fn function_of(&self, block: BlockId) -> &Function {
        self.function(self.block(block).function)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn is_measurement_point(&self, block: BlockId) -> bool {
        self.blocks[block.index()].is_measurement_point
    }

    pub fn is_skip_segment(&self, start: BlockId, end: BlockId) -> bool {
        self.skip_segments.contains(&(start, end))
    }

    pub fn skip_segments(&self) -> impl Iterator<Item = (BlockId, BlockId)> + '_ {
        self.skip_segments.iter().copied()
    }

    /// Outgoing edges of `block` together with their transfer class.
    pub fn out_edges(&self, block: BlockId) -> impl Iterator<Item = (&Edge, Transfer)> + '_ {
        self.out_edges[block.index()].iter().map(move |&i| (&self.edges[i], self.transfers[i]))
    }

    /// Return sites of the call made by `call_site`.
    pub fn return_sites(&self, call_site: BlockId) -> impl Iterator<Item = BlockId> + '_ {
        self.out_edges(call_site).filter(|(_, t)| *t == Transfer::ReturnLink).map(|(e, _)| e.to)
    }

    /// Whether `to` is a return site of `call_site`.
    pub fn returns_to(&self, call_site: BlockId, to: BlockId) -> bool {
        self.return_sites(call_site).any(|r| r == to)
    }

    /// Classifies the edge `from -> to`, preferring a transferable edge over
    /// a return link with the same endpoints.
    pub(crate) fn transition_kind(&self, from: BlockId, to: BlockId) -> Option<Transfer> {
        // Prefer a transferable edge when a return link shares the endpoints.
        let mut found = None;
        for (e, t) in self.out_edges(from) {
            if e.to == to {
                if t != Transfer::ReturnLink {
                    return Some(t);
                }
                found = Some(t);
            }
        }
        found
    }
}
