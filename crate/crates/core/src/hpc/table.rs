// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::HpcError;
use crate::cfg::{AnnotatedCfg, BasicBlock};
use crate::vector::CounterVector;

/// Name of the fixed counter that every instruction increments by one.
pub const INSTRET: &str = "instret";

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterInfo {
    pub name: String,
    pub deterministic: bool,
}

/// Maps each instruction mnemonic to the counter increments it causes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventTable {
    pub counters: Vec<CounterInfo>,
    pub attribution: BTreeMap<String, CounterVector>,
}

impl EventTable {
    pub fn new(counters: Vec<CounterInfo>, attribution: BTreeMap<String, CounterVector>) -> Result<Self, HpcError> {
        let table = EventTable { counters, attribution };
        table.validate()?;
        Ok(table)
    }

    pub fn from_json(text: &str) -> Result<Self, HpcError> {
        let table: EventTable = serde_json::from_str(text).map_err(|e| HpcError::Schema(e.to_string()))?;
        table.validate()?;
        Ok(table)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable table")
    }

    fn validate(&self) -> Result<(), HpcError> {
        let dim = self.counters.len();
        let instret = self.instret_index().ok_or(HpcError::MissingInstret)?;
        if !self.counters[instret].deterministic {
            return Err(HpcError::Schema(format!("{INSTRET} must be deterministic")));
        }
        for (i, c) in self.counters.iter().enumerate() {
            if self.counters[..i].iter().any(|o| o.name == c.name) {
                return Err(HpcError::Schema(format!("duplicate counter {}", c.name)));
            }
            if c.name.contains('+') || c.name.contains(',') {
                return Err(HpcError::Schema(format!("counter name {} may not contain '+' or ','", c.name)));
            }
        }
        for (mnemonic, v) in &self.attribution {
            if v.dim() != dim {
                return Err(HpcError::Dimension { what: mnemonic.clone(), expected: dim, found: v.dim() });
            }
            if v[instret] != 1 {
                return Err(HpcError::Schema(format!("mnemonic {mnemonic} must increment {INSTRET} by exactly 1")));
            }
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.counters.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.counters.iter().map(|c| c.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.counters.iter().position(|c| c.name == name)
    }

    pub fn instret_index(&self) -> Option<usize> {
        self.index_of(INSTRET)
    }

    pub fn increment(&self, mnemonic: &str) -> Option<&CounterVector> {
        self.attribution.get(mnemonic)
    }

    /// The toy RISC-V-flavoured table: 14 mnemonics, 17 deterministic
    /// events and one nondeterministic cycle counter.
    pub fn toy_isa() -> Self {
        const EVENTS: [&str; 17] = [
            INSTRET,
            "cond_branches",
            "jal_retired",
            "jalr_retired",
            "int_loads",
            "int_stores",
            "int_alu",
            "int_mul",
            "int_div",
            "shifts",
            "logic_ops",
            "imm_arith",
            "reg_subtract",
            "ecalls",
            "mem_ops",
            "control_transfers",
            "uncond_jumps",
        ];
        let mut counters: Vec<CounterInfo> =
            EVENTS.iter().map(|n| CounterInfo { name: n.to_string(), deterministic: true }).collect();
        counters.push(CounterInfo { name: "cycles".into(), deterministic: false });

        let events: &[(&str, &[&str])] = &[
            ("add", &["int_alu"]),
            ("addi", &["int_alu", "imm_arith"]),
            ("sub", &["int_alu", "reg_subtract"]),
            ("xor", &["int_alu", "logic_ops"]),
            ("sll", &["int_alu", "shifts"]),
            ("mul", &["int_mul"]),
            ("div", &["int_div"]),
            ("lw", &["int_loads", "mem_ops"]),
            ("sw", &["int_stores", "mem_ops"]),
            ("beq", &["cond_branches", "control_transfers"]),
            ("bne", &["cond_branches", "control_transfers"]),
            ("jal", &["jal_retired", "control_transfers", "uncond_jumps"]),
            ("jalr", &["jalr_retired", "control_transfers", "uncond_jumps"]),
            ("ecall", &["ecalls"]),
        ];
        let index = |name: &str| counters.iter().position(|c| c.name == name).unwrap();
        let mut attribution = BTreeMap::new();
        for (mnemonic, hits) in events {
            let mut v = vec![0u64; counters.len()];
            v[index(INSTRET)] = 1;
            v[index("cycles")] = 1;
            for h in *hits {
                v[index(h)] += 1;
            }
            attribution.insert(mnemonic.to_string(), CounterVector::new(v));
        }
        EventTable::new(counters, attribution).expect("built-in table is valid")
    }
}

/// Componentwise sum of the increments of every instruction in `block`.
pub fn block_delta(table: &EventTable, block: &BasicBlock) -> Result<CounterVector, HpcError> {
    let instructions = block.instructions.as_ref().ok_or_else(|| HpcError::NoInstructions(block.id.clone()))?;
    mnemonic_delta(table, instructions)
        .map_err(|mnemonic| HpcError::UnknownMnemonic { block: block.id.clone(), mnemonic })
}

pub(crate) fn mnemonic_delta<S: AsRef<str>>(table: &EventTable, instructions: &[S]) -> Result<CounterVector, String> {
    let mut sum = CounterVector::zeros(table.dimension());
    for ins in instructions {
        let inc = table.increment(ins.as_ref()).ok_or_else(|| ins.as_ref().to_string())?;
        sum += inc;
    }
    Ok(sum)
}

/// Full-dimension counter delta of every block in a graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockDeltas {
    deltas: Vec<CounterVector>,
    counters: Vec<CounterInfo>,
}

impl BlockDeltas {
    /// Resolves deltas from mnemonic lists through `table`, or from the
    /// explicit `delta` annotations. A block carrying both must agree.
    pub fn resolve(cfg: &AnnotatedCfg, table: Option<&EventTable>) -> Result<Self, HpcError> {
        let counters = match table {
            Some(t) => {
                if t.names() != cfg.counters() {
                    return Err(HpcError::CounterMismatch { graph: cfg.counters().to_vec(), table: t.names() });
                }
                t.counters.clone()
            }
            None => cfg.counters().iter().map(|n| CounterInfo { name: n.clone(), deterministic: true }).collect(),
        };
        let mut deltas = Vec::with_capacity(cfg.blocks().len());
        for block in cfg.blocks() {
            let computed = match (table, &block.instructions) {
                (Some(t), Some(_)) => Some(block_delta(t, block)?),
                _ => None,
            };
            let delta = match (computed, &block.delta) {
                (Some(c), Some(d)) if &c != d => {
                    return Err(HpcError::InconsistentDelta(block.id.clone()));
                }
                (Some(c), _) => c,
                (None, Some(d)) => d.clone(),
                (None, None) => return Err(HpcError::NoInstructions(block.id.clone())),
            };
            deltas.push(delta);
        }
        Ok(BlockDeltas { deltas, counters })
    }

    pub fn get(&self, block: crate::cfg::BlockId) -> &CounterVector {
        &self.deltas[block.index()]
    }

    pub fn all(&self) -> &[CounterVector] {
        &self.deltas
    }

    pub fn counters(&self) -> &[CounterInfo] {
        &self.counters
    }

    pub fn dimension(&self) -> usize {
        self.counters.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::FuncId;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn block(ins: &[&str]) -> BasicBlock {
        BasicBlock {
            id: "f.0".into(),
            function: FuncId(0),
            instructions: Some(ins.iter().map(|s| s.to_string()).collect()),
            delta: None,
            is_measurement_point: false,
            instruction_count: ins.len() as u64,
        }
    }

    /// instret, composite branch counter, loads.
    fn three_counter_table() -> EventTable {
        let counters = ["instret", "branches", "loads"]
            .iter()
            .map(|n| CounterInfo { name: n.to_string(), deterministic: true })
            .collect();
        let mut attribution = BTreeMap::new();
        attribution.insert("add".to_string(), CounterVector::new(vec![1, 0, 0]));
        attribution.insert("beq".to_string(), CounterVector::new(vec![1, 1, 0]));
        attribution.insert("lw".to_string(), CounterVector::new(vec![1, 0, 1]));
        EventTable::new(counters, attribution).unwrap()
    }

    #[test]
    fn empty_block_is_zero() {
        let t = EventTable::toy_isa();
        assert!(block_delta(&t, &block(&[])).unwrap().is_zero());
    }

    #[test]
    fn add_beq_lw_counts_one_of_each() {
        let t = three_counter_table();
        assert_eq!(block_delta(&t, &block(&["add", "beq", "lw"])).unwrap().values(), &[3, 1, 1]);
    }

    #[test]
    fn unknown_mnemonic_is_named() {
        let t = EventTable::toy_isa();
        let err = block_delta(&t, &block(&["add", "vfmadd"])).unwrap_err();
        assert_eq!(err.to_string(), "block f.0: unknown mnemonic vfmadd");
    }

    #[test]
    fn random_block_matches_naive_tally() {
        let t = EventTable::toy_isa();
        let mnemonics: Vec<&String> = t.attribution.keys().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let ins: Vec<&str> = (0..20).map(|_| mnemonics[rng.random_range(0..mnemonics.len())].as_str()).collect();
            // Independent tally: count occurrences per mnemonic, then scale.
            let mut tally = vec![0u64; t.dimension()];
            for m in t.attribution.keys() {
                let n = ins.iter().filter(|&&i| i == m).count() as u64;
                for (d, inc) in t.attribution[m].values().iter().enumerate() {
                    tally[d] += n * inc;
                }
            }
            assert_eq!(block_delta(&t, &block(&ins)).unwrap().values(), &tally[..]);
        }
    }

    #[test]
    fn toy_isa_shape() {
        let t = EventTable::toy_isa();
        assert_eq!(t.counters.iter().filter(|c| c.deterministic).count(), 17);
        assert_eq!(t.attribution.len(), 14);
        assert_eq!(t.instret_index(), Some(0));
        let round = EventTable::from_json(&t.to_json()).unwrap();
        assert_eq!(round, t);
    }

    #[test]
    fn table_requires_unit_instret() {
        let mut t = three_counter_table();
        t.attribution.insert("mul".into(), CounterVector::new(vec![2, 0, 0]));
        assert!(EventTable::from_json(&serde_json::to_string(&t).unwrap()).is_err());
    }
}
