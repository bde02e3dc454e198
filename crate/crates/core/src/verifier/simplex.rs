// SPDX-License-Identifier: Apache-2.0

//! Exact feasibility LP: find rational `x` with `A x = b`, `lo <= x <= hi`.
//!
//! Phase-one bounded-variable simplex on a dense tableau with one artificial
//! per row and Bland's rule, over arbitrary-precision rationals.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

pub type Q = BigRational;

pub fn q(v: i128) -> Q {
    Q::from_integer(BigInt::from(v))
}

/// A feasible point, or `None` if the polytope is empty.
pub fn feasible_point(a: &[Vec<i128>], b: &[i128], lo: &[i128], hi: &[i128]) -> Option<Vec<Q>> {
    let m = a.len();
    let n = lo.len();
    debug_assert!(a.iter().all(|r| r.len() == n) && b.len() == m && hi.len() == n);
    if lo.iter().zip(hi).any(|(l, h)| l > h) {
        return None;
    }
    // Shift to y = x - lo, so 0 <= y <= hi - lo, and make every rhs nonnegative.
    let width: Vec<Q> = lo.iter().zip(hi).map(|(l, h)| q(h - l)).collect();
    let total = n + m;
    let mut rows: Vec<Vec<Q>> = Vec::with_capacity(m);
    let mut rhs: Vec<Q> = Vec::with_capacity(m);
    for r in 0..m {
        let shifted: i128 = b[r] - a[r].iter().zip(lo).map(|(x, l)| x * l).sum::<i128>();
        let sign = if shifted < 0 { -1 } else { 1 };
        let mut row: Vec<Q> = a[r].iter().map(|&x| q(sign * x)).collect();
        row.extend((0..m).map(|k| if k == r { Q::one() } else { Q::zero() }));
        rows.push(row);
        rhs.push(q(sign * shifted));
    }
    let upper = |j: usize| -> Option<&Q> { (j < n).then(|| &width[j]) };

    let mut basis: Vec<usize> = (n..total).collect();
    let mut at_upper = vec![false; total];
    // Reduced costs of the phase-one objective (sum of artificials).
    let mut cost: Vec<Q> =
        (0..total).map(|j| if j < n { -rows.iter().map(|r| r[j].clone()).sum::<Q>() } else { Q::zero() }).collect();

    loop {
        let entering = (0..total).find(|&j| {
            !basis.contains(&j) && ((!at_upper[j] && cost[j].is_negative()) || (at_upper[j] && cost[j].is_positive()))
        });
        let Some(j) = entering else { break };
        let increase = !at_upper[j];

        // Ratio test: step length t >= 0 moving x_j by +t or -t.
        let mut best: Option<(Q, Option<usize>)> = upper(j).map(|u| (u.clone(), None));
        for (i, row) in rows.iter().enumerate() {
            let coef = if increase { row[j].clone() } else { -row[j].clone() };
            if coef.is_zero() {
                continue;
            }
            let limit = if coef.is_positive() {
                &rhs[i] / &coef
            } else {
                match upper(basis[i]) {
                    Some(u) => (u - &rhs[i]) / -&coef,
                    None => continue,
                }
            };
            let better = match &best {
                None => true,
                Some((t, r)) => limit < *t || (limit == *t && r.is_some_and(|r| basis[i] < basis[r])),
            };
            if better {
                best = Some((limit, Some(i)));
            }
        }
        let Some((step, leave)) = best else {
            unreachable!("phase-one objective is bounded below");
        };

        // Move the basic values.
        for (i, row) in rows.iter().enumerate() {
            let delta = &row[j] * &step;
            if increase {
                rhs[i] -= delta;
            } else {
                rhs[i] += delta;
            }
        }
        match leave {
            None => at_upper[j] = !at_upper[j],
            Some(r) => {
                let entering_value = if increase { step } else { upper(j).unwrap() - step };
                let leaving = basis[r];
                let coef = if increase { rows[r][j].clone() } else { -rows[r][j].clone() };
                // The leaving variable stops at whichever bound it hit.
                at_upper[leaving] = coef.is_negative();
                at_upper[j] = false;
                pivot(&mut rows, &mut cost, r, j);
                basis[r] = j;
                rhs[r] = entering_value;
                if cfg!(debug_assertions) {
                    debug_check_bounds(&rhs, &basis, &width);
                }
            }
        }
    }

    let objective: Q = basis.iter().zip(&rhs).filter(|(&v, _)| v >= n).map(|(_, x)| x.clone()).sum();
    if !objective.is_zero() {
        return None;
    }
    let mut y: Vec<Q> = (0..n).map(|j| if at_upper[j] { width[j].clone() } else { Q::zero() }).collect();
    for (i, &v) in basis.iter().enumerate() {
        if v < n {
            y[v] = rhs[i].clone();
        }
    }
    Some(y.into_iter().zip(lo).map(|(v, &l)| v + q(l)).collect())
}

fn pivot(rows: &mut [Vec<Q>], cost: &mut [Q], r: usize, j: usize) {
    let p = rows[r][j].clone();
    for x in rows[r].iter_mut() {
        *x /= &p;
    }
    let pivot_row = rows[r].clone();
    for (i, row) in rows.iter_mut().enumerate() {
        if i == r || row[j].is_zero() {
            continue;
        }
        let f = row[j].clone();
        for (x, pr) in row.iter_mut().zip(&pivot_row) {
            if !pr.is_zero() {
                *x -= &f * pr;
            }
        }
    }
    if !cost[j].is_zero() {
        let f = cost[j].clone();
        for (x, pr) in cost.iter_mut().zip(&pivot_row) {
            if !pr.is_zero() {
                *x -= &f * pr;
            }
        }
    }
}

fn debug_check_bounds(rhs: &[Q], basis: &[usize], width: &[Q]) {
    for (value, &v) in rhs.iter().zip(basis) {
        debug_assert!(!value.is_negative(), "basic variable {v} below its bound");
        debug_assert!(v >= width.len() || *value <= width[v], "basic variable {v} above its bound");
    }
}
