// SPDX-License-Identifier: Apache-2.0

//! Elementary circuits of a directed graph (Johnson's algorithm).

use std::ops::ControlFlow;

struct Search<'a, F> {
    adj: &'a [Vec<usize>],
    start: usize,
    blocked: Vec<bool>,
    blocked_by: Vec<Vec<usize>>,
    stack: Vec<usize>,
    emit: F,
}

impl<F: FnMut(&[usize]) -> ControlFlow<()>> Search<'_, F> {
    fn unblock(&mut self, u: usize) {
        let mut work = vec![u];
        while let Some(u) = work.pop() {
            if !self.blocked[u] {
                continue;
            }
            self.blocked[u] = false;
            work.append(&mut self.blocked_by[u]);
        }
    }

    fn circuit(&mut self, v: usize) -> ControlFlow<(), bool> {
        let mut found = false;
        self.stack.push(v);
        self.blocked[v] = true;
        for i in 0..self.adj[v].len() {
            let w = self.adj[v][i];
            if w < self.start {
                continue;
            }
            if w == self.start {
                (self.emit)(&self.stack)?;
                found = true;
            } else if !self.blocked[w] && self.circuit(w)? {
                found = true;
            }
        }
        if found {
            self.unblock(v);
        } else {
            for i in 0..self.adj[v].len() {
                let w = self.adj[v][i];
                if w >= self.start && !self.blocked_by[w].contains(&v) {
                    self.blocked_by[w].push(v);
                }
            }
        }
        self.stack.pop();
        ControlFlow::Continue(found)
    }
}

/// Calls `emit` once per elementary circuit of `adj`, each given as its node
/// sequence starting at its smallest node. Stops early if `emit` breaks;
/// the return value reports whether enumeration completed.
pub fn elementary_circuits<F>(adj: &[Vec<usize>], emit: F) -> bool
where
    F: FnMut(&[usize]) -> ControlFlow<()>,
{
    let n = adj.len();
    let mut search =
        Search { adj, start: 0, blocked: vec![false; n], blocked_by: vec![Vec::new(); n], stack: Vec::new(), emit };
    for s in 0..n {
        search.start = s;
        for i in s..n {
            search.blocked[i] = false;
            search.blocked_by[i].clear();
        }
        if search.circuit(s).is_break() {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn all(adj: &[Vec<usize>]) -> BTreeSet<Vec<usize>> {
        let mut out = BTreeSet::new();
        assert!(elementary_circuits(adj, |c| {
            out.insert(c.to_vec());
            ControlFlow::Continue(())
        }));
        out
    }

    /// Brute force: every node sequence starting at its minimum, distinct,
    /// closed by an edge back to the start.
    fn brute(adj: &[Vec<usize>]) -> BTreeSet<Vec<usize>> {
        fn extend(adj: &[Vec<usize>], path: &mut Vec<usize>, out: &mut BTreeSet<Vec<usize>>) {
            let v = *path.last().unwrap();
            for &w in &adj[v] {
                if w == path[0] {
                    out.insert(path.clone());
                } else if w > path[0] && !path.contains(&w) {
                    path.push(w);
                    extend(adj, path, out);
                    path.pop();
                }
            }
        }
        let mut out = BTreeSet::new();
        for s in 0..adj.len() {
            extend(adj, &mut vec![s], &mut out);
        }
        out
    }

    #[test]
    fn complete_graph_on_three_nodes() {
        let adj = vec![vec![1, 2], vec![0, 2], vec![0, 1]];
        // three 2-cycles and two 3-cycles
        assert_eq!(all(&adj).len(), 5);
    }

    #[test]
    fn self_loop() {
        assert_eq!(all(&[vec![0]]), BTreeSet::from([vec![0]]));
    }

    #[test]
    fn early_stop() {
        let adj = vec![vec![1, 2], vec![0, 2], vec![0, 1]];
        let mut count = 0;
        let done = elementary_circuits(&adj, |_| {
            count += 1;
            if count == 2 {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        });
        assert!(!done);
        assert_eq!(count, 2);
    }

    proptest::proptest! {
        #[test]
        fn matches_brute_force(edges in proptest::collection::vec((0usize..7, 0usize..7), 0..20)) {
            let mut adj = vec![Vec::new(); 7];
            for (a, b) in edges {
                if !adj[a].contains(&b) {
                    adj[a].push(b);
                }
            }
            proptest::prop_assert_eq!(all(&adj), brute(&adj));
        }
    }
}
