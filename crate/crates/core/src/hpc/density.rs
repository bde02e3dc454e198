// SPDX-License-Identifier: Apache-2.0

//! Counter selection by lattice sparsity.
//!
//! The cone of accepted measurements is approximated by the lattice its loop
//! vectors generate. A sparser lattice (larger covolume) accepts fewer
//! forged measurements, so counter subsets are ranked by it.

use std::cmp::Ordering;

use num_bigint::{BigInt, BigUint};
use num_traits::{ToPrimitive, Zero};

use crate::lattice::{gram_determinant, hermite_basis};
use crate::vector::CounterVector;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatticeScore {
    /// Rank of the projected loop lattice.
    pub rank: usize,
    /// Squared covolume, `det(B Bᵀ)` for an integer basis `B`; zero when
    /// there are no nonzero generators.
    pub gram_determinant: BigUint,
}

impl LatticeScore {
    /// Covolume of the lattice (`sqrt` of the Gram determinant).
    pub fn covolume(&self) -> f64 {
        self.gram_determinant.to_f64().unwrap_or(f64::INFINITY).sqrt()
    }

    /// The covolume when it is an integer, as it always is at full rank.
    pub fn exact_covolume(&self) -> Option<BigUint> {
        let root = self.gram_determinant.sqrt();
        (&root * &root == self.gram_determinant).then_some(root)
    }

    /// Sparsity order: larger covolume is sparser. Covolumes of
    /// rank-deficient lattices are taken within their span; an empty
    /// lattice scores zero.
    pub fn sparsity_cmp(&self, other: &Self) -> Ordering {
        self.gram_determinant.cmp(&other.gram_determinant)
    }
}

/// Covolume score of the lattice spanned by `loops` projected onto `subset`.
pub fn lattice_density_score(loops: &[CounterVector], subset: &[usize]) -> LatticeScore {
    assert!(!subset.is_empty(), "counter subset must be nonempty");
    let projected: Vec<Vec<BigInt>> =
        loops.iter().map(|v| subset.iter().map(|&i| BigInt::from(v[i])).collect()).collect();
    let basis = hermite_basis(&projected).expect("BigInt reduction cannot overflow");
    let gram = if basis.rank() == 0 { BigUint::zero() } else { gram_determinant(&basis.rows) };
    LatticeScore { rank: basis.rank(), gram_determinant: gram }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankedSubset {
    pub counters: Vec<usize>,
    pub score: LatticeScore,
}

/// Every size-`k` subset of `0..dimension`, sparsest lattice first; ties keep
/// lexicographic index order.
pub fn rank_counter_subsets(loops: &[CounterVector], dimension: usize, k: usize) -> Vec<RankedSubset> {
    assert!(k >= 1 && k <= dimension, "subset size out of range");
    let mut ranked: Vec<RankedSubset> = combinations(dimension, k)
        .into_iter()
        .map(|counters| {
            let score = lattice_density_score(loops, &counters);
            RankedSubset { counters, score }
        })
        .collect();
    ranked.sort_by(|a, b| b.score.sparsity_cmp(&a.score).then_with(|| a.counters.cmp(&b.counters)));
    ranked
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..k).collect();
    loop {
        out.push(current.clone());
        let Some(i) = (0..k).rev().find(|&i| current[i] < n - k + i) else {
            return out;
        };
        current[i] += 1;
        for j in i + 1..k {
            current[j] = current[j - 1] + 1;
        }
    }
}
