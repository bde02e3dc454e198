// SPDX-License-Identifier: Apache-2.0

//! Shipped demonstration programs and a random graph generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cfg::{AnnotatedCfg, BlockDocument, CfgDocument, CfgError, EdgeDocument, EdgeKind, FunctionDocument};
use crate::hpc::EventTable;
use crate::program::{FunctionDef, Iterations, Program, Stmt};

/// The 3-counter configuration: instructions, all branches, loads.
pub const THREE_COUNTERS: &str = "instret,cond_branches+jal_retired+jalr_retired,int_loads";

/// Names accepted by [`demo_program`].
pub const DEMOS: [&str; 6] = ["hello", "crypto", "crypto-ecalls", "dyndispatch", "path-explosion", "dedup"];

pub fn demo_program(name: &str) -> Option<Program> {
    Some(match name {
        "hello" => hello(),
        "crypto" => crypto(false),
        "crypto-ecalls" => crypto(true),
        "dyndispatch" => dyndispatch(),
        "path-explosion" => path_explosion(20),
        "dedup" => dedup(1000),
        _ => return None,
    })
}

fn uniform(lo: u32, hi: u32, body: Vec<Stmt>) -> Stmt {
    Stmt::Loop { iterations: Iterations::Uniform(lo, hi), body, ecall_in_latch: false }
}

fn branch(p: f64, then_: Vec<Stmt>, else_: Vec<Stmt>) -> Stmt {
    Stmt::If { then_prob: p, then_, else_ }
}

/// Short segments, one small loop, one helper call.
pub fn hello() -> Program {
    Program::new(vec![
        FunctionDef::new(
            "main",
            &["addi", "sw"],
            vec![
                Stmt::block(&["lw", "addi"]),
                Stmt::call("puts"),
                Stmt::ecall(&["addi", "addi"]),
                branch(0.5, vec![Stmt::block(&["lw", "xor"])], vec![Stmt::block(&["addi", "sub", "sw"])]),
                Stmt::call("puts"),
            ],
        ),
        FunctionDef::new("puts", &["addi", "sw"], vec![uniform(2, 6, vec![Stmt::block(&["lw", "sw", "addi"])])]),
    ])
}

/// A signing-shaped program dominated by loop nests. With `in_loop_ecalls`
/// every loop latch is a measurement point.
pub fn crypto(in_loop_ecalls: bool) -> Program {
    let mut p = Program::new(vec![
        FunctionDef::new(
            "main",
            &["addi", "sw", "sw"],
            vec![
                Stmt::block(&["lw", "addi"]),
                Stmt::call("keygen"),
                Stmt::ecall(&["addi"]),
                Stmt::call("sign"),
                Stmt::ecall(&["addi"]),
                Stmt::call("verify"),
            ],
        ),
        FunctionDef::new(
            "keygen",
            &["addi", "sw"],
            vec![Stmt::call("hash"), uniform(6, 10, vec![Stmt::block(&["lw", "xor", "sw"]), Stmt::call("fe_mul")])],
        ),
        FunctionDef::new(
            "sign",
            &["addi", "sw", "sw"],
            vec![
                Stmt::call("hash"),
                uniform(
                    12,
                    20,
                    vec![
                        Stmt::call("fe_mul"),
                        branch(0.5, vec![Stmt::call("fe_add")], vec![Stmt::block(&["add", "sll"])]),
                    ],
                ),
                Stmt::call("hash"),
                Stmt::block(&["lw", "sub", "sw"]),
            ],
        ),
        FunctionDef::new(
            "verify",
            &["addi", "sw"],
            vec![
                Stmt::call("hash"),
                uniform(6, 10, vec![Stmt::call("fe_mul"), Stmt::call("fe_add")]),
                Stmt::block(&["lw", "lw", "sub"]),
            ],
        ),
        FunctionDef::new(
            "hash",
            &["addi", "sw"],
            vec![uniform(
                12,
                20,
                vec![
                    Stmt::block(&["lw", "add", "xor", "sll", "add", "sw"]),
                    branch(0.5, vec![Stmt::block(&["xor", "sll", "add"])], vec![]),
                    Stmt::block(&["add", "xor"]),
                ],
            )],
        ),
        FunctionDef::new(
            "fe_mul",
            &["addi"],
            vec![Stmt::repeat(
                4,
                vec![Stmt::repeat(4, vec![Stmt::block(&["lw", "mul", "add"])]), Stmt::block(&["sw", "add"])],
            )],
        ),
        FunctionDef::new("fe_add", &["addi"], vec![Stmt::repeat(4, vec![Stmt::block(&["lw", "lw", "add", "sw"])])]),
    ]);
    p.ecall_every_latch = in_loop_ecalls;
    p
}

/// Indirect calls with three possible targets.
pub fn dyndispatch() -> Program {
    let handler = |name: &str, body: &[&str]| FunctionDef::new(name, &["addi"], vec![Stmt::block(body)]);
    Program::new(vec![
        FunctionDef::new(
            "main",
            &["addi", "sw"],
            vec![Stmt::Loop {
                iterations: Iterations::Uniform(3, 8),
                body: vec![
                    Stmt::block(&["lw", "addi"]),
                    Stmt::CallIndirect(vec!["on_read".into(), "on_write".into(), "on_close".into()]),
                ],
                ecall_in_latch: true,
            }],
        ),
        handler("on_read", &["lw", "lw", "add"]),
        handler("on_write", &["sw", "sw", "xor"]),
        handler("on_close", &["addi", "div"]),
    ])
}

/// `n` sequential two-way branches in one segment: `2^n` paths.
pub fn path_explosion(n: usize) -> Program {
    let body = (0..n)
        .map(|i| {
            let filler = if i % 2 == 0 { "xor" } else { "sll" };
            branch(0.5, vec![Stmt::block(&["lw", filler])], vec![Stmt::block(&["addi", "add", filler])])
        })
        .collect();
    Program::new(vec![FunctionDef::new("main", &["addi"], body)])
}

/// A loop whose latch is a measurement point and whose iterations are
/// identical.
pub fn dedup(iterations: u32) -> Program {
    Program::new(vec![FunctionDef::new(
        "main",
        &["addi"],
        vec![Stmt::Loop {
            iterations: Iterations::Fixed(iterations),
            body: vec![Stmt::block(&["lw", "add", "xor", "sw"])],
            ecall_in_latch: true,
        }],
    )])
}

/// The nested-loop example with two loops sharing block `D`.
pub fn two_loops_document(table: &EventTable) -> CfgDocument {
    let blocks: [(&str, &[&str], bool); 7] = [
        ("A", &["addi", "ecall"], true),
        ("B", &["addi", "add", "bne"], false),
        ("C", &["ecall"], true),
        ("D", &["lw", "beq"], false),
        ("E", &["jal"], false),
        ("F", &["lw", "lw", "add", "beq"], false),
        ("G", &["jal"], false),
    ];
    use EdgeKind::{Branch, Fallthrough};
    let edges = [
        ("A", "B", Fallthrough),
        ("B", "C", Fallthrough),
        ("B", "D", Branch),
        ("D", "E", Fallthrough),
        ("E", "B", Branch),
        ("D", "F", Branch),
        ("F", "G", Fallthrough),
        ("G", "D", Branch),
    ];
    CfgDocument {
        counters: table.names(),
        functions: vec![FunctionDocument {
            name: "main".into(),
            entry: "A".into(),
            blocks: blocks.iter().map(|b| b.0.to_string()).collect(),
        }],
        blocks: blocks
            .iter()
            .map(|(id, ins, mp)| BlockDocument {
                id: id.to_string(),
                function: "main".into(),
                instruction_count: ins.len() as u64,
                is_measurement_point: *mp,
                instructions: Some(ins.iter().map(|s| s.to_string()).collect()),
                delta: None,
            })
            .collect(),
        edges: edges
            .iter()
            .map(|(a, b, k)| EdgeDocument { from: a.to_string(), to: b.to_string(), kind: *k })
            .collect(),
        entry: "A".into(),
        skip_segments: Vec::new(),
    }
}

pub fn two_loops(table: &EventTable) -> AnnotatedCfg {
    AnnotatedCfg::from_document(two_loops_document(table)).expect("demo graph is valid")
}

/// Limits for [`random_cfg`].
#[derive(Clone, Copy, Debug)]
pub struct RandomCfgLimits {
    pub max_blocks: usize,
    pub max_functions: usize,
    /// Chance that a plain block also branches somewhere in its function.
    pub branch_probability: f64,
    /// Chance that a plain block is a measurement point.
    pub measurement_probability: f64,
    /// Chance that a block calls a later function.
    pub call_probability: f64,
}

impl Default for RandomCfgLimits {
    fn default() -> Self {
        RandomCfgLimits {
            max_blocks: 40,
            max_functions: 4,
            branch_probability: 0.25,
            measurement_probability: 0.2,
            call_probability: 0.15,
        }
    }
}

const PLAIN: [&str; 9] = ["add", "addi", "sub", "xor", "sll", "mul", "div", "lw", "sw"];

/// A random graph without recursion: functions only call later functions.
/// Every block lies on a fallthrough chain to its function's exit, extra
/// branch edges add loops and forks, and main's entry and exit are
/// measurement points.
pub fn random_cfg(seed: u64, limits: &RandomCfgLimits, table: &EventTable) -> Result<AnnotatedCfg, CfgError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nf = rng.random_range(1..=limits.max_functions);
    let min_each = 3;
    let total = rng.random_range(nf * min_each..=limits.max_blocks.max(nf * min_each));
    // Split the block budget between functions.
    let mut sizes = vec![min_each; nf];
    for _ in 0..total - nf * min_each {
        sizes[rng.random_range(0..nf)] += 1;
    }
    let name = |f: usize| if f == 0 { "main".to_string() } else { format!("f{f}") };
    let id = |f: usize, i: usize| format!("{}.{i}", name(f));

    let mut blocks = Vec::new();
    let mut edges: Vec<EdgeDocument> = Vec::new();
    let mut functions = Vec::new();
    let mut edge = |from: String, to: String, kind| {
        if !edges.iter().any(|e| e.from == from && e.to == to && e.kind == kind) {
            edges.push(EdgeDocument { from, to, kind });
        }
    };
    for f in 0..nf {
        let k = sizes[f];
        functions.push(FunctionDocument { name: name(f), entry: id(f, 0), blocks: (0..k).map(|i| id(f, i)).collect() });
        for i in 0..k {
            let exit = i == k - 1;
            let mut ins: Vec<String> =
                (0..rng.random_range(1..=4)).map(|_| PLAIN[rng.random_range(0..PLAIN.len())].to_string()).collect();
            let mut mp = f == 0 && (i == 0 || exit);
            if exit {
                if f != 0 {
                    ins.extend(["lw".into(), "jalr".into()]);
                }
            } else if f + 1 < nf && i > 0 && rng.random_bool(limits.call_probability) {
                let callee = rng.random_range(f + 1..nf);
                ins.push("jal".into());
                edge(id(f, i), id(callee, 0), EdgeKind::Call);
                edge(id(callee, sizes[callee] - 1), id(f, i + 1), EdgeKind::Return);
                edge(id(f, i), id(f, i + 1), EdgeKind::Fallthrough);
            } else {
                edge(id(f, i), id(f, i + 1), EdgeKind::Fallthrough);
                if rng.random_bool(limits.branch_probability) {
                    let target = rng.random_range(0..k);
                    ins.push("bne".into());
                    edge(id(f, i), id(f, target), EdgeKind::Branch);
                }
                mp |= rng.random_bool(limits.measurement_probability);
            }
            if mp {
                ins.push("ecall".into());
            }
            blocks.push(BlockDocument {
                id: id(f, i),
                function: name(f),
                instruction_count: ins.len() as u64,
                is_measurement_point: mp,
                instructions: Some(ins),
                delta: None,
            });
        }
    }
    AnnotatedCfg::from_document(CfgDocument {
        counters: table.names(),
        functions,
        blocks,
        edges,
        entry: id(0, 0),
        skip_segments: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::validate_trace;
    use crate::preprocess::{enumerate_segments, PreprocessError};

    #[test]
    fn every_demo_compiles_and_runs() {
        let table = EventTable::toy_isa();
        for name in DEMOS {
            let c = demo_program(name).unwrap().compile(&table).unwrap();
            assert!(validate_trace(&c.cfg, &c.run(7)).unwrap(), "{name}");
        }
    }

    #[test]
    fn two_loops_demo_has_one_segment_with_two_loops() {
        let table = EventTable::toy_isa();
        let db = enumerate_segments(&two_loops(&table), Some(&table)).unwrap();
        let segs: Vec<_> = db.segments().collect();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].candidates.len(), 1);
        assert_eq!(segs[0].candidates[0].loops.len(), 2);
    }

    #[test]
    fn path_explosion_exceeds_default_budget() {
        let table = EventTable::toy_isa();
        let c = path_explosion(20).compile(&table).unwrap();
        let err = enumerate_segments(&c.cfg, Some(&table)).unwrap_err();
        assert!(matches!(err, PreprocessError::PathBudget { .. }));
    }

    #[test]
    fn random_cfgs_respect_limits() {
        let table = EventTable::toy_isa();
        let limits = RandomCfgLimits::default();
        for seed in 0..50 {
            let g = random_cfg(seed, &limits, &table).unwrap();
            assert!(g.blocks().len() <= limits.max_blocks);
            assert!(g.functions().len() <= limits.max_functions);
            assert!(g.is_measurement_point(g.entry()));
        }
    }
}
