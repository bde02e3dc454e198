// SPDX-License-Identifier: Apache-2.0

//! Attack-evaluation manifests. Paths are relative to the manifest file.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cfa_core::attack::MutationKind;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub experiments: Vec<Experiment>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub name: String,
    pub cfg: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
    pub trace: PathBuf,
    /// Prebuilt database; enumerated on the fly when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub db: Option<PathBuf>,
    /// Counter configuration; every deterministic counter when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counters: Option<String>,
    pub seed: u64,
    /// Mutants per segment; each kind's default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repetitions: Option<usize>,
    /// Mutation kinds to run; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kinds: Option<Vec<MutationKind>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_paths: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_cycles: Option<usize>,
}

impl RunManifest {
    /// Loads a manifest and makes its paths absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut m: RunManifest =
            serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &mut m.experiments {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            fix(&mut e.cfg);
            fix(&mut e.trace);
            e.table.as_mut().map(fix);
            e.db.as_mut().map(fix);
        }
        Ok(m)
    }
}
