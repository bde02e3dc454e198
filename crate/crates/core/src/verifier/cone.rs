// SPDX-License-Identifier: Apache-2.0

//! Integer-cone membership: nonnegative integers `x` with `Σ x_i v_i = t`.

use num_traits::One;

use super::simplex::{feasible_point, Q};
use crate::lattice::hermite_basis;
use crate::vector::CounterVector;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConeProblem {
    /// Measurement minus base; components may be negative.
    pub target: Vec<i128>,
    pub generators: Vec<CounterVector>,
}

impl ConeProblem {
    pub fn new(target: Vec<i128>, generators: Vec<CounterVector>) -> Self {
        assert!(generators.iter().all(|g| g.dim() == target.len()), "generator dimension mismatch");
        ConeProblem { target, generators }
    }

    /// The problem `measurement = base + Σ x_i loops_i`.
    pub fn from_measurement(measurement: &CounterVector, base: &CounterVector, loops: &[CounterVector]) -> Self {
        let target = measurement.values().iter().zip(base.values()).map(|(&m, &b)| m as i128 - b as i128).collect();
        ConeProblem::new(target, loops.to_vec())
    }

    /// Whether `x` reproduces the target exactly.
    pub fn check(&self, x: &[u64]) -> bool {
        x.len() == self.generators.len()
            && (0..self.target.len()).all(|d| {
                let sum: i128 = self.generators.iter().zip(x).map(|(g, &k)| g[d] as i128 * k as i128).sum();
                sum == self.target[d]
            })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConeOutcome {
    pub witness: Option<Vec<u64>>,
    /// Branch-and-bound nodes whose relaxation was solved.
    pub nodes: u64,
}

/// Solves the problem, returning a witness if the target lies in the cone.
pub fn cone_member(problem: &ConeProblem) -> Option<Vec<u64>> {
    solve_cone(problem).witness
}

/// Presolved problem over the generators still free to vary.
struct Reduced {
    rows: Vec<Vec<i128>>,
    target: Vec<i128>,
    upper: Vec<i128>,
    free: Vec<usize>,
}

pub fn solve_cone(problem: &ConeProblem) -> ConeOutcome {
    let infeasible = |nodes| ConeOutcome { witness: None, nodes };
    let n = problem.generators.len();
    if problem.target.iter().any(|&t| t < 0) {
        return infeasible(0);
    }
    let mut witness = vec![0u64; n];
    if problem.target.iter().all(|&t| t == 0) {
        return ConeOutcome { witness: Some(witness), nodes: 0 };
    }
    let Some(reduced) = presolve(problem, &mut witness) else {
        return infeasible(0);
    };
    if reduced.free.is_empty() {
        debug_assert!(problem.check(&witness));
        return ConeOutcome { witness: Some(witness), nodes: 0 };
    }
    if !in_lattice(&reduced) {
        return infeasible(0);
    }
    let (found, nodes) = branch_and_bound(&reduced);
    match found {
        Some(x) => {
            for (&i, &k) in reduced.free.iter().zip(&x) {
                witness[i] += k as u64;
            }
            debug_assert!(problem.check(&witness));
            ConeOutcome { witness: Some(witness), nodes }
        }
        None => infeasible(nodes),
    }
}

/// Drops generators that cannot fit under the target, merges duplicates and
/// fixes every generator that alone covers some dimension. Fixed values are
/// written to `witness`. `None` means infeasible.
fn presolve(problem: &ConeProblem, witness: &mut [u64]) -> Option<Reduced> {
    let dim = problem.target.len();
    let gens = &problem.generators;
    let mut target = problem.target.clone();

    let mut free: Vec<usize> = Vec::new();
    for (i, g) in gens.iter().enumerate() {
        if g.is_zero() || free.iter().any(|&j| gens[j] == *g) {
            continue;
        }
        free.push(i);
    }

    loop {
        free.retain(|&i| (0..dim).all(|d| gens[i][d] as i128 <= target[d]));
        let mut changed = false;
        for d in 0..dim {
            let mut cover = free.iter().copied().filter(|&i| gens[i][d] > 0);
            let first = cover.next();
            let second = cover.next();
            match (first, second) {
                (None, _) if target[d] != 0 => return None,
                (Some(j), None) => {
                    let v = gens[j][d] as i128;
                    if target[d] % v != 0 {
                        return None;
                    }
                    let k = target[d] / v;
                    for (e, t) in target.iter_mut().enumerate() {
                        *t -= k * gens[j][e] as i128;
                        if *t < 0 {
                            return None;
                        }
                    }
                    witness[j] += k as u64;
                    free.retain(|&i| i != j);
                    changed = true;
                    break;
                }
                _ => {}
            }
        }
        if !changed {
            break;
        }
    }
    if free.is_empty() {
        return target.iter().all(|&t| t == 0).then_some(Reduced {
            rows: Vec::new(),
            target: Vec::new(),
            upper: Vec::new(),
            free,
        });
    }

    let used: Vec<usize> = (0..dim).filter(|&d| free.iter().any(|&i| gens[i][d] > 0)).collect();
    let rows = used.iter().map(|&d| free.iter().map(|&i| gens[i][d] as i128).collect()).collect();
    let upper = free
        .iter()
        .map(|&i| used.iter().filter(|&&d| gens[i][d] > 0).map(|&d| target[d] / gens[i][d] as i128).min().unwrap())
        .collect();
    let target = used.iter().map(|&d| target[d]).collect();
    Some(Reduced { rows, target, upper, free })
}

/// Whether the target is an integer combination of the generators at all.
/// Overflow is treated as "maybe".
fn in_lattice(r: &Reduced) -> bool {
    let n = r.free.len();
    let columns: Vec<Vec<i128>> = (0..n).map(|j| r.rows.iter().map(|row| row[j]).collect()).collect();
    hermite_basis(&columns).and_then(|b| b.contains(&r.target)).unwrap_or(true)
}

fn branch_and_bound(r: &Reduced) -> (Option<Vec<i128>>, u64) {
    let n = r.free.len();
    let mut stack = vec![(vec![0i128; n], r.upper.clone())];
    let mut nodes = 0;
    while let Some((lo, hi)) = stack.pop() {
        nodes += 1;
        let Some(x) = feasible_point(&r.rows, &r.target, &lo, &hi) else {
            continue;
        };
        let Some(k) = x.iter().position(|v| !v.is_integer()) else {
            let ints = x.iter().map(|v| i128::try_from(v.to_integer()).expect("bounded")).collect();
            return (Some(ints), nodes);
        };
        let floor = x[k].floor();
        let f = i128::try_from(floor.to_integer()).expect("bounded");
        let mut down_hi = hi.clone();
        down_hi[k] = f;
        let mut up_lo = lo.clone();
        up_lo[k] = f + 1;
        let frac = &x[k] - &floor;
        let half = Q::new(One::one(), 2.into());
        // Depth-first, nearer rounding explored first (pushed last).
        if frac <= half {
            stack.push((up_lo, hi));
            stack.push((lo, down_hi));
        } else {
            stack.push((lo, down_hi));
            stack.push((up_lo, hi));
        }
    }
    (None, nodes)
}
