// SPDX-License-Identifier: Apache-2.0

//! The demonstration inputs shipped under `demos/`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cfa_core::cfg::{AnnotatedCfg, BlockTrace};
use cfa_core::demo::{self, demo_program, THREE_COUNTERS};
use cfa_core::hpc::EventTable;

use crate::manifest::{Experiment, RunManifest};

/// Seed of the shipped program runs.
pub const TRACE_SEED: u64 = 1;
pub const TABLE_FILE: &str = "toy_isa.table.json";

/// Every name accepted by [`write_demo`] besides `all`.
pub const NAMES: [&str; 7] =
    ["two-loops", "hello", "crypto", "crypto-ecalls", "dyndispatch", "path-explosion", "dedup"];

/// Blocks of the shipped walk through the two-loop example.
const TWO_LOOPS_TRACE: [&str; 12] = ["A", "B", "D", "E", "B", "D", "F", "G", "D", "E", "B", "C"];

/// Generated files as (file name, contents), in writing order.
pub fn files(name: &str) -> Result<Vec<(String, String)>> {
    let table = EventTable::toy_isa();
    let mut out = vec![(TABLE_FILE.to_string(), table.to_json())];
    match name {
        "all" => {
            for n in NAMES {
                out.extend(files(n)?.into_iter().skip(1));
            }
            for (file, m) in manifests() {
                out.push((file, serde_json::to_string_pretty(&m)?));
            }
        }
        "two-loops" => {
            let cfg = demo::two_loops(&table);
            let trace = BlockTrace::from_ids(&cfg, &TWO_LOOPS_TRACE)?;
            push_pair(&mut out, name, &cfg, Some(&trace))?;
        }
        _ => {
            let Some(program) = demo_program(name) else {
                bail!("unknown demo {name}; expected one of all, {}", NAMES.join(", "));
            };
            let compiled = program.compile(&table)?;
            // The path-explosion graph is shipped to show the budget error.
            let trace = (name != "path-explosion").then(|| compiled.run(TRACE_SEED));
            push_pair(&mut out, name, &compiled.cfg, trace.as_ref())?;
        }
    }
    Ok(out)
}

fn push_pair(
    out: &mut Vec<(String, String)>,
    name: &str,
    cfg: &AnnotatedCfg,
    trace: Option<&BlockTrace>,
) -> Result<()> {
    out.push((format!("{name}.cfg.json"), cfg.to_json()));
    if let Some(t) = trace {
        out.push((format!("{name}.trace.json"), serde_json::to_string_pretty(&t.to_document(cfg))?));
    }
    Ok(())
}

fn experiment(name: &str, counters: Option<&str>) -> Experiment {
    Experiment {
        name: name.to_string(),
        cfg: format!("{name}.cfg.json").into(),
        table: Some(TABLE_FILE.into()),
        trace: format!("{name}.trace.json").into(),
        db: None,
        counters: counters.map(str::to_string),
        seed: 5,
        repetitions: None,
        kinds: None,
        budget_paths: None,
        budget_cycles: None,
    }
}

/// The three reliability experiments: 3 counters, all counters, and 3
/// counters with measurement points inside the hot loops.
pub fn manifests() -> Vec<(String, RunManifest)> {
    let base = ["hello", "crypto", "dyndispatch"];
    let make = |names: &[&str], counters: Option<&str>| RunManifest {
        experiments: names.iter().map(|n| experiment(n, counters)).collect(),
    };
    vec![
        ("basic.manifest.json".to_string(), make(&base, Some(THREE_COUNTERS))),
        ("added-counters.manifest.json".to_string(), make(&base, None)),
        ("added-ecalls.manifest.json".to_string(), make(&["crypto-ecalls"], Some(THREE_COUNTERS))),
    ]
}

/// Writes the demo `name` (or every demo) into `dir`.
pub fn write_demo(name: &str, dir: &Path) -> Result<Vec<PathBuf>> {
    let files = files(name)?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::with_capacity(files.len());
    for (file, text) in files {
        let path = dir.join(file);
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_demos_are_current() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("demos");
        for (file, text) in files("all").unwrap() {
            let shipped = std::fs::read_to_string(dir.join(&file)).unwrap_or_default();
            assert_eq!(shipped, text + "\n", "demos/{file} is stale; run `cfa demo all --out-dir demos`");
        }
    }

    #[test]
    fn unknown_demo_is_an_error() {
        assert!(files("nope").is_err());
    }
}
