// SPDX-License-Identifier: Apache-2.0

//! Fixed-dimension event-count vectors.

use std::fmt;
use std::ops::{Add, AddAssign, Index};

use serde::{Deserialize, Serialize};

/// A vector of nonnegative event counts, one entry per counter.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CounterVector(Vec<u64>);

impl CounterVector {
    pub fn new(values: Vec<u64>) -> Self {
        CounterVector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        CounterVector(vec![0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[u64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<u64> {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0)
    }

    /// Adds `other` scaled by `factor` in place.
    pub fn add_scaled(&mut self, other: &CounterVector, factor: u64) {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch");
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b * factor;
        }
    }

    /// Componentwise `self - other`, which may go negative.
    pub fn signed_sub(&self, other: &CounterVector) -> Vec<i64> {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch");
        self.0.iter().zip(&other.0).map(|(&a, &b)| a as i64 - b as i64).collect()
    }

    /// Componentwise `self - other`, or `None` if any component would go negative.
    pub fn checked_sub(&self, other: &CounterVector) -> Option<CounterVector> {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch");
        self.0.iter().zip(&other.0).map(|(&a, &b)| a.checked_sub(b)).collect::<Option<Vec<_>>>().map(CounterVector)
    }
}

impl From<Vec<u64>> for CounterVector {
    fn from(values: Vec<u64>) -> Self {
        CounterVector(values)
    }
}

impl Index<usize> for CounterVector {
    type Output = u64;

    fn index(&self, index: usize) -> &u64 {
        &self.0[index]
    }
}

impl AddAssign<&CounterVector> for CounterVector {
    fn add_assign(&mut self, other: &CounterVector) {
        assert_eq!(self.dim(), other.dim(), "dimension mismatch");
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }
}

impl Add<&CounterVector> for &CounterVector {
    type Output = CounterVector;

    fn add(self, other: &CounterVector) -> CounterVector {
        let mut out = self.clone();
        out += other;
        out
    }
}

impl fmt::Display for CounterVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}
