// SPDX-License-Identifier: Apache-2.0

//! Structured toy programs compiled to annotated graphs.
//!
//! A [`Program`] is a list of functions made of straight-line blocks, loops,
//! conditionals and calls. Compiling it yields the graph document, and
//! running the compiled form with a seed yields the block trace an
//! instruction-level tracer would record.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cfg::{
    AnnotatedCfg, BlockDocument, BlockId, BlockTrace, CfgDocument, CfgError, EdgeDocument, EdgeKind, FunctionDocument,
    SkipDocument,
};
use crate::hpc::EventTable;

#[derive(Clone, Debug, PartialEq)]
pub enum Iterations {
    Fixed(u32),
    /// Uniform in `lo..=hi` each time the loop is entered.
    Uniform(u32, u32),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Stmt {
    Block(Vec<String>),
    /// A block ending in `ecall`: a measurement point.
    Ecall(Vec<String>),
    Loop {
        iterations: Iterations,
        body: Vec<Stmt>,
        ecall_in_latch: bool,
    },
    /// `then_prob` is the chance of taking the `then` arm.
    If {
        then_prob: f64,
        then_: Vec<Stmt>,
        else_: Vec<Stmt>,
    },
    Call(String),
    /// Call through a pointer; targets are picked uniformly at run time.
    CallIndirect(Vec<String>),
}

impl Stmt {
    pub fn block(ins: &[&str]) -> Stmt {
        Stmt::Block(ins.iter().map(|s| s.to_string()).collect())
    }

    pub fn ecall(ins: &[&str]) -> Stmt {
        Stmt::Ecall(ins.iter().map(|s| s.to_string()).collect())
    }

    pub fn repeat(n: u32, body: Vec<Stmt>) -> Stmt {
        Stmt::Loop { iterations: Iterations::Fixed(n), body, ecall_in_latch: false }
    }

    pub fn call(f: &str) -> Stmt {
        Stmt::Call(f.to_string())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FunctionDef {
    pub name: String,
    pub prologue: Vec<String>,
    pub body: Vec<Stmt>,
}

impl FunctionDef {
    pub fn new(name: &str, prologue: &[&str], body: Vec<Stmt>) -> Self {
        FunctionDef { name: name.to_string(), prologue: prologue.iter().map(|s| s.to_string()).collect(), body }
    }
}

/// A program; the first function is the entry point. Its first and last
/// blocks are measurement points.
#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    pub functions: Vec<FunctionDef>,
    /// Makes every loop latch a measurement point, overriding the per-loop flag.
    pub ecall_every_latch: bool,
}

const LOOP_HEAD: [&str; 2] = ["addi", "bne"];
const LATCH: [&str; 2] = ["addi", "jal"];
const RETURN: [&str; 2] = ["lw", "jalr"];

#[derive(Clone, Debug)]
enum Node {
    Block(usize),
    Loop { head: usize, latch: usize, iterations: Iterations, body: Vec<Node> },
    If { cond: usize, then_prob: f64, then_: Vec<Node>, else_: Vec<Node> },
    Call { site: usize, callees: Vec<usize> },
}

struct Pred {
    from: usize,
    kind: EdgeKind,
    /// Functions whose exit returns into whichever block comes next.
    returning: Vec<usize>,
}

struct Builder<'a> {
    program: &'a Program,
    blocks: Vec<BlockDocument>,
    edges: Vec<EdgeDocument>,
    edge_set: BTreeSet<(usize, usize, EdgeKind)>,
    members: Vec<Vec<String>>,
    counters: Vec<String>,
    entries: Vec<usize>,
    exits: Vec<usize>,
    next_local: Vec<usize>,
}

impl Builder<'_> {
    fn new_block(&mut self, func: usize, mut instructions: Vec<String>, mp: bool) -> usize {
        if instructions.is_empty() {
            instructions.push("addi".into());
        }
        if mp {
            instructions.push("ecall".into());
        }
        let name = &self.program.functions[func].name;
        let id = format!("{name}.{}", self.next_local[func]);
        self.next_local[func] += 1;
        self.members[func].push(id.clone());
        self.blocks.push(BlockDocument {
            id,
            function: name.clone(),
            instruction_count: instructions.len() as u64,
            is_measurement_point: mp,
            instructions: Some(instructions),
            delta: None,
        });
        self.blocks.len() - 1
    }

    fn edge(&mut self, from: usize, to: usize, kind: EdgeKind) {
        if !self.edge_set.insert((from, to, kind)) {
            return;
        }
        self.edges.push(EdgeDocument { from: self.blocks[from].id.clone(), to: self.blocks[to].id.clone(), kind });
    }

    fn connect(&mut self, preds: Vec<Pred>, to: usize) {
        for p in preds {
            self.edge(p.from, to, p.kind);
            for f in p.returning {
                self.edge(self.exits[f], to, EdgeKind::Return);
            }
        }
    }

    fn function_index(&self, name: &str) -> Result<usize, CfgError> {
        self.program
            .functions
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| CfgError::Schema(format!("call to undefined function {name}")))
    }

    fn compile(
        &mut self,
        func: usize,
        stmts: &[Stmt],
        mut preds: Vec<Pred>,
    ) -> Result<(Vec<Node>, Vec<Pred>), CfgError> {
        let mut nodes = Vec::with_capacity(stmts.len());
        for stmt in stmts {
            match stmt {
                Stmt::Block(ins) | Stmt::Ecall(ins) => {
                    let b = self.new_block(func, ins.clone(), matches!(stmt, Stmt::Ecall(_)));
                    self.connect(preds, b);
                    preds = vec![Pred { from: b, kind: EdgeKind::Fallthrough, returning: vec![] }];
                    nodes.push(Node::Block(b));
                }
                Stmt::Loop { iterations, body, ecall_in_latch } => {
                    let head = self.new_block(func, LOOP_HEAD.iter().map(|s| s.to_string()).collect(), false);
                    self.connect(preds, head);
                    let (body_nodes, body_preds) =
                        self.compile(func, body, vec![Pred { from: head, kind: EdgeKind::Branch, returning: vec![] }])?;
                    let mp = *ecall_in_latch || self.program.ecall_every_latch;
                    let latch = self.new_block(func, LATCH.iter().map(|s| s.to_string()).collect(), mp);
                    self.connect(body_preds, latch);
                    self.edge(latch, head, EdgeKind::Branch);
                    preds = vec![Pred { from: head, kind: EdgeKind::Fallthrough, returning: vec![] }];
                    nodes.push(Node::Loop { head, latch, iterations: iterations.clone(), body: body_nodes });
                }
                Stmt::If { then_prob, then_, else_ } => {
                    let cond = self.new_block(func, vec!["lw".into(), "beq".into()], false);
                    self.connect(preds, cond);
                    let (t_nodes, mut t_preds) = self.compile(
                        func,
                        then_,
                        vec![Pred { from: cond, kind: EdgeKind::Branch, returning: vec![] }],
                    )?;
                    let (e_nodes, e_preds) = self.compile(
                        func,
                        else_,
                        vec![Pred { from: cond, kind: EdgeKind::Fallthrough, returning: vec![] }],
                    )?;
                    t_preds.extend(e_preds);
                    preds = t_preds;
                    nodes.push(Node::If { cond, then_prob: *then_prob, then_: t_nodes, else_: e_nodes });
                }
                Stmt::Call(name) => {
                    let callee = self.function_index(name)?;
                    let site = self.new_block(func, vec!["addi".into(), "jal".into()], false);
                    self.connect(preds, site);
                    self.edge(site, self.entries[callee], EdgeKind::Call);
                    preds = vec![Pred { from: site, kind: EdgeKind::Fallthrough, returning: vec![callee] }];
                    nodes.push(Node::Call { site, callees: vec![callee] });
                }
                Stmt::CallIndirect(names) => {
                    let callees = names.iter().map(|n| self.function_index(n)).collect::<Result<Vec<_>, _>>()?;
                    let site = self.new_block(func, vec!["lw".into(), "jalr".into()], false);
                    self.connect(preds, site);
                    for &c in &callees {
                        self.edge(site, self.entries[c], EdgeKind::Indirect);
                    }
                    preds = vec![Pred { from: site, kind: EdgeKind::Fallthrough, returning: callees.clone() }];
                    nodes.push(Node::Call { site, callees });
                }
            }
        }
        Ok((nodes, preds))
    }
}

/// A compiled program: its graph plus the structure needed to execute it.
#[derive(Clone, Debug)]
pub struct CompiledProgram {
    pub cfg: AnnotatedCfg,
    bodies: Vec<Vec<Node>>,
    entries: Vec<usize>,
    exits: Vec<usize>,
    /// Maps builder block index to graph block id.
    ids: Vec<BlockId>,
}

impl Program {
    pub fn new(functions: Vec<FunctionDef>) -> Self {
        Program { functions, ecall_every_latch: false }
    }

    /// Builds the graph document without validating it.
    pub fn to_document(&self, table: &EventTable) -> Result<CfgDocument, CfgError> {
        Ok(self.build(table)?.0)
    }

    fn build(&self, table: &EventTable) -> Result<(CfgDocument, Vec<Vec<Node>>, Vec<usize>, Vec<usize>), CfgError> {
        if self.functions.is_empty() {
            return Err(CfgError::Schema("program has no functions".into()));
        }
        let n = self.functions.len();
        let mut b = Builder {
            program: self,
            blocks: Vec::new(),
            edges: Vec::new(),
            edge_set: BTreeSet::new(),
            members: vec![Vec::new(); n],
            counters: table.names(),
            entries: Vec::new(),
            exits: Vec::new(),
            next_local: vec![0; n],
        };
        for (i, f) in self.functions.iter().enumerate() {
            let entry = b.new_block(i, f.prologue.clone(), i == 0);
            b.entries.push(entry);
        }
        for i in 0..n {
            let exit = if i == 0 {
                b.new_block(i, vec!["addi".into()], true)
            } else {
                b.new_block(i, RETURN.iter().map(|s| s.to_string()).collect(), false)
            };
            b.exits.push(exit);
        }
        let mut bodies = Vec::with_capacity(n);
        for (i, f) in self.functions.iter().enumerate() {
            let start = vec![Pred { from: b.entries[i], kind: EdgeKind::Fallthrough, returning: vec![] }];
            let (nodes, preds) = b.compile(i, &f.body, start)?;
            let exit = b.exits[i];
            b.connect(preds, exit);
            bodies.push(nodes);
        }
        let doc = CfgDocument {
            counters: b.counters.clone(),
            functions: self
                .functions
                .iter()
                .enumerate()
                .map(|(i, f)| FunctionDocument {
                    name: f.name.clone(),
                    entry: b.blocks[b.entries[i]].id.clone(),
                    blocks: b.members[i].clone(),
                })
                .collect(),
            entry: b.blocks[b.entries[0]].id.clone(),
            blocks: b.blocks,
            edges: b.edges,
            skip_segments: Vec::<SkipDocument>::new(),
        };
        Ok((doc, bodies, b.entries, b.exits))
    }

    pub fn compile(&self, table: &EventTable) -> Result<CompiledProgram, CfgError> {
        let (doc, bodies, entries, exits) = self.build(table)?;
        let cfg = AnnotatedCfg::from_document(doc)?;
        // Builder indices coincide with document order, which the loader keeps.
        let ids = (0..cfg.blocks().len() as u32).map(BlockId).collect();
        Ok(CompiledProgram { cfg, bodies, entries, exits, ids })
    }
}

impl CompiledProgram {
    /// Executes the program once; branch outcomes and variable loop counts
    /// are drawn from `seed`.
    pub fn run(&self, seed: u64) -> BlockTrace {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut steps = Vec::new();
        self.run_function(0, &mut rng, &mut steps);
        BlockTrace::new(steps)
    }

    fn run_function(&self, f: usize, rng: &mut ChaCha8Rng, out: &mut Vec<BlockId>) {
        out.push(self.ids[self.entries[f]]);
        self.run_nodes(&self.bodies[f], rng, out);
        out.push(self.ids[self.exits[f]]);
    }

    fn run_nodes(&self, nodes: &[Node], rng: &mut ChaCha8Rng, out: &mut Vec<BlockId>) {
        for node in nodes {
            match node {
                Node::Block(b) => out.push(self.ids[*b]),
                Node::Loop { head, latch, iterations, body } => {
                    let n = match *iterations {
                        Iterations::Fixed(n) => n,
                        Iterations::Uniform(lo, hi) => rng.random_range(lo..=hi),
                    };
                    for _ in 0..n {
                        out.push(self.ids[*head]);
                        self.run_nodes(body, rng, out);
                        out.push(self.ids[*latch]);
                    }
                    out.push(self.ids[*head]);
                }
                Node::If { cond, then_prob, then_, else_ } => {
                    out.push(self.ids[*cond]);
                    if rng.random_bool(*then_prob) {
                        self.run_nodes(then_, rng, out);
                    } else {
                        self.run_nodes(else_, rng, out);
                    }
                }
                Node::Call { site, callees } => {
                    out.push(self.ids[*site]);
                    let callee = callees[rng.random_range(0..callees.len())];
                    self.run_function(callee, rng, out);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::{validate_trace, Transfer};

    fn demo() -> Program {
        Program::new(vec![
            FunctionDef::new(
                "main",
                &["addi"],
                vec![
                    Stmt::call("f"),
                    Stmt::repeat(3, vec![Stmt::block(&["add", "lw"]), Stmt::call("f")]),
                    Stmt::If { then_prob: 0.5, then_: vec![Stmt::block(&["xor"])], else_: vec![] },
                    Stmt::CallIndirect(vec!["f".into(), "g".into()]),
                ],
            ),
            FunctionDef::new("f", &["addi", "sw"], vec![Stmt::block(&["mul"])]),
            FunctionDef::new("g", &["addi"], vec![]),
        ])
    }

    #[test]
    fn compiled_program_traces_are_valid() {
        let table = EventTable::toy_isa();
        let p = demo().compile(&table).unwrap();
        for seed in 0..20 {
            let t = p.run(seed);
            assert!(validate_trace(&p.cfg, &t).unwrap(), "seed {seed}");
        }
    }

    #[test]
    fn call_sites_link_to_return_sites() {
        let table = EventTable::toy_isa();
        let p = demo().compile(&table).unwrap();
        let cfg = &p.cfg;
        let links = cfg
            .block_ids()
            .map(|b| cfg.out_edges(b).filter(|(_, t)| *t == Transfer::ReturnLink).count())
            .sum::<usize>();
        // two direct call sites and one indirect site, one return site each
        assert_eq!(links, 3);
    }

    #[test]
    fn undefined_callee_is_an_error() {
        let p = Program::new(vec![FunctionDef::new("main", &[], vec![Stmt::call("nope")])]);
        assert!(p.compile(&EventTable::toy_isa()).is_err());
    }
}
