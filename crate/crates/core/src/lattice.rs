// SPDX-License-Identifier: Apache-2.0

//! Integer lattices spanned by row vectors.
//!
//! The reduction is generic over the integer type so the verifier can run it
//! on `i128` (bailing out on overflow) while scoring uses `BigInt`.

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{CheckedAdd, CheckedMul, CheckedSub, Signed, Zero};

pub trait LatticeInt: Integer + Signed + Clone + CheckedMul + CheckedSub + CheckedAdd {}

impl<T: Integer + Signed + Clone + CheckedMul + CheckedSub + CheckedAdd> LatticeInt for T {}

/// An echelon basis of the lattice generated by a set of integer vectors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HermiteBasis<T> {
    /// Basis rows in echelon order; row `k` has its first nonzero entry
    /// (positive) at `pivots[k]`.
    pub rows: Vec<Vec<T>>,
    pub pivots: Vec<usize>,
}

fn axpy<T: LatticeInt>(target: &mut [T], q: &T, source: &[T]) -> Option<()> {
    // target -= q * source
    for (t, s) in target.iter_mut().zip(source) {
        *t = t.checked_sub(&q.checked_mul(s)?)?;
    }
    Some(())
}

/// Row-style Hermite normal form. Returns `None` only if `T` overflows.
pub fn hermite_basis<T: LatticeInt>(generators: &[Vec<T>]) -> Option<HermiteBasis<T>> {
    let dim = generators.first().map_or(0, Vec::len);
    let mut rows: Vec<Vec<T>> = generators.iter().filter(|g| g.iter().any(|x| !x.is_zero())).cloned().collect();
    let mut pivots = Vec::new();
    let mut top = 0;
    for col in 0..dim {
        if top == rows.len() {
            break;
        }
        loop {
            // Smallest nonzero magnitude in this column becomes the pivot.
            let best = (top..rows.len())
                .filter(|&r| !rows[r][col].is_zero())
                .min_by(|&a, &b| rows[a][col].abs().cmp(&rows[b][col].abs()));
            let Some(best) = best else { break };
            rows.swap(top, best);
            let mut done = true;
            for r in top + 1..rows.len() {
                if rows[r][col].is_zero() {
                    continue;
                }
                let q = rows[r][col].div_floor(&rows[top][col]);
                let (head, tail) = rows.split_at_mut(r);
                axpy(&mut tail[0], &q, &head[top])?;
                if !rows[r][col].is_zero() {
                    done = false;
                }
            }
            if done {
                break;
            }
        }
        if top < rows.len() && !rows[top][col].is_zero() {
            if rows[top][col].is_negative() {
                for x in rows[top].iter_mut() {
                    *x = -x.clone();
                }
            }
            for r in 0..top {
                let q = rows[r][col].div_floor(&rows[top][col]);
                if !q.is_zero() {
                    let (head, tail) = rows.split_at_mut(top);
                    axpy(&mut head[r], &q, &tail[0])?;
                }
            }
            pivots.push(col);
            top += 1;
        }
    }
    rows.truncate(top);
    Some(HermiteBasis { rows, pivots })
}

impl<T: LatticeInt> HermiteBasis<T> {
    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    /// Whether `v` is an integer combination of the basis rows. `None` on overflow.
    pub fn contains(&self, v: &[T]) -> Option<bool> {
        let mut rest = v.to_vec();
        for (row, &p) in self.rows.iter().zip(&self.pivots) {
            if rest[p].is_zero() {
                continue;
            }
            let (q, r) = rest[p].div_rem(&row[p]);
            if !r.is_zero() {
                return Some(false);
            }
            axpy(&mut rest, &q, row)?;
        }
        Some(rest.iter().all(Zero::is_zero))
    }
}

/// Determinant of a square matrix by fraction-free (Bareiss) elimination.
pub fn determinant(matrix: &[Vec<BigInt>]) -> BigInt {
    let n = matrix.len();
    if n == 0 {
        return BigInt::from(1);
    }
    let mut m: Vec<Vec<BigInt>> = matrix.to_vec();
    let mut sign = BigInt::from(1);
    let mut prev = BigInt::from(1);
    for k in 0..n - 1 {
        if m[k][k].is_zero() {
            let Some(swap) = (k + 1..n).find(|&r| !m[r][k].is_zero()) else {
                return BigInt::zero();
            };
            m.swap(k, swap);
            sign = -sign;
        }
        for i in k + 1..n {
            for j in k + 1..n {
                let v = &m[i][j] * &m[k][k] - &m[i][k] * &m[k][j];
                m[i][j] = v / &prev;
            }
        }
        prev = m[k][k].clone();
    }
    sign * m[n - 1][n - 1].clone()
}

/// Gram determinant `det(B Bᵀ)` of a set of basis rows; the squared covolume.
pub fn gram_determinant(rows: &[Vec<BigInt>]) -> BigUint {
    let gram: Vec<Vec<BigInt>> =
        rows.iter().map(|a| rows.iter().map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum()).collect()).collect();
    let det = determinant(&gram);
    debug_assert!(det.sign() != Sign::Minus);
    det.to_biguint().unwrap_or_default()
}
