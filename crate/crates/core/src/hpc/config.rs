// SPDX-License-Identifier: Apache-2.0

use super::{CounterInfo, HpcError};
use crate::vector::CounterVector;

/// Which events are wired to hardware registers.
///
/// Each output register sums one group of events; a group of size one is a
/// plain counter, a larger group is a composite register.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CounterConfig {
    groups: Vec<Vec<usize>>,
    dimension: usize,
}

impl CounterConfig {
    pub fn new(groups: Vec<Vec<usize>>, dimension: usize) -> Result<Self, HpcError> {
        if groups.is_empty() || groups.iter().any(Vec::is_empty) {
            return Err(HpcError::EmptyConfig);
        }
        let mut used = vec![false; dimension];
        for &i in groups.iter().flatten() {
            if i >= dimension {
                return Err(HpcError::UnknownCounter(format!("#{i}")));
            }
            if std::mem::replace(&mut used[i], true) {
                return Err(HpcError::OverlappingGroups(i));
            }
        }
        Ok(CounterConfig { groups, dimension })
    }

    /// Every counter on its own register.
    pub fn identity(dimension: usize) -> Self {
        CounterConfig { groups: (0..dimension).map(|i| vec![i]).collect(), dimension }
    }

    /// All deterministic counters, each on its own register.
    pub fn all_deterministic(counters: &[CounterInfo]) -> Self {
        CounterConfig {
            groups: counters.iter().enumerate().filter(|(_, c)| c.deterministic).map(|(i, _)| vec![i]).collect(),
            dimension: counters.len(),
        }
    }

    /// Parses `name,name+name,...`; `all` selects every deterministic counter.
    pub fn parse(spec: &str, counters: &[CounterInfo]) -> Result<Self, HpcError> {
        let spec = spec.trim();
        if spec == "all" {
            return Ok(Self::all_deterministic(counters));
        }
        let groups = spec
            .split(',')
            .map(|group| {
                group
                    .split('+')
                    .map(|name| {
                        let name = name.trim();
                        counters
                            .iter()
                            .position(|c| c.name == name)
                            .ok_or_else(|| HpcError::UnknownCounter(name.to_string()))
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(groups, counters.len())
    }

    /// Fails if any wired event is nondeterministic.
    pub fn check_deterministic(&self, counters: &[CounterInfo]) -> Result<(), HpcError> {
        for &i in self.groups.iter().flatten() {
            if !counters[i].deterministic {
                return Err(HpcError::Nondeterministic(counters[i].name.clone()));
            }
        }
        Ok(())
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// Dimension of the vectors this config projects from.
    pub fn input_dimension(&self) -> usize {
        self.dimension
    }

    /// Number of registers, i.e. the dimension of projected vectors.
    pub fn output_dimension(&self) -> usize {
        self.groups.len()
    }

    /// Register names, composites joined with `+`.
    pub fn names(&self, counters: &[CounterInfo]) -> Vec<String> {
        self.groups.iter().map(|g| g.iter().map(|&i| counters[i].name.as_str()).collect::<Vec<_>>().join("+")).collect()
    }

    pub fn project(&self, v: &CounterVector) -> CounterVector {
        assert_eq!(v.dim(), self.dimension, "projecting a vector of the wrong dimension");
        CounterVector::new(self.groups.iter().map(|g| g.iter().map(|&i| v[i]).sum()).collect())
    }

    /// The config equivalent to projecting with `self` and then with `outer`,
    /// where `outer` indexes this config's registers.
    pub fn then(&self, outer: &CounterConfig) -> Result<CounterConfig, HpcError> {
        if outer.dimension != self.output_dimension() {
            return Err(HpcError::Dimension {
                what: "composed config".into(),
                expected: self.output_dimension(),
                found: outer.dimension,
            });
        }
        let groups = outer
            .groups
            .iter()
            .map(|g| {
                let mut merged: Vec<usize> = g.iter().flat_map(|&r| self.groups[r].iter().copied()).collect();
                merged.sort_unstable();
                merged
            })
            .collect();
        CounterConfig::new(groups, self.dimension)
    }
}
