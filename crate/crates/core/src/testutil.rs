// SPDX-License-Identifier: Apache-2.0

use crate::cfg::EdgeKind::{Branch, Fallthrough};
use crate::cfg::{AnnotatedCfg, BlockDocument, CfgDocument, EdgeDocument, EdgeKind, FunctionDocument};

/// A graph document with explicit per-block deltas. Blocks are
/// `(id, function, is_measurement_point, delta)`; each function's entry is
/// its first listed block, and the program entry is the first block.
pub fn delta_graph(
    counters: &[&str],
    blocks: &[(&str, &str, bool, &[u64])],
    edges: &[(&str, &str, EdgeKind)],
) -> AnnotatedCfg {
    let mut functions: Vec<FunctionDocument> = Vec::new();
    for (id, f, _, _) in blocks {
        match functions.iter_mut().find(|x| x.name == *f) {
            Some(x) => x.blocks.push(id.to_string()),
            None => functions.push(FunctionDocument {
                name: f.to_string(),
                entry: id.to_string(),
                blocks: vec![id.to_string()],
            }),
        }
    }
    let doc = CfgDocument {
        counters: counters.iter().map(|s| s.to_string()).collect(),
        functions,
        blocks: blocks
            .iter()
            .map(|(id, f, mp, d)| BlockDocument {
                id: id.to_string(),
                function: f.to_string(),
                instruction_count: d[0],
                is_measurement_point: *mp,
                instructions: None,
                delta: Some(d.to_vec()),
            })
            .collect(),
        edges: edges
            .iter()
            .map(|(a, b, k)| EdgeDocument { from: a.to_string(), to: b.to_string(), kind: *k })
            .collect(),
        entry: blocks[0].0.to_string(),
        skip_segments: Vec::new(),
    };
    AnnotatedCfg::from_document(doc).expect("test graph is valid")
}

/// The nested-loop example: A and C are measurement points, B-D-E and
/// D-F-G are loops sharing D.
pub fn two_loops() -> AnnotatedCfg {
    let f = "main";
    delta_graph(
        &["instret", "loads", "branches"],
        &[
            ("A", f, true, &[2, 0, 0]),
            ("B", f, false, &[3, 0, 1]),
            ("C", f, true, &[1, 0, 0]),
            ("D", f, false, &[2, 1, 1]),
            ("E", f, false, &[1, 0, 1]),
            ("F", f, false, &[4, 2, 0]),
            ("G", f, false, &[1, 0, 1]),
        ],
        &[
            ("A", "B", Fallthrough),
            ("B", "C", Fallthrough),
            ("B", "D", Branch),
            ("D", "E", Fallthrough),
            ("E", "B", Branch),
            ("D", "F", Branch),
            ("F", "G", Fallthrough),
            ("G", "D", Branch),
        ],
    )
}
