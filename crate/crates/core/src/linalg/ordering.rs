//! Fill-reducing symmetric orderings for the envelope factorization.

use std::collections::VecDeque;

/// Symmetric permutation applied before factorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ordering {
    /// Keep the input order.
    Natural,
    /// Reverse Cuthill-McKee, which shrinks the envelope of banded lattice operators.
    #[default]
    ReverseCuthillMcKee,
}

/// Returns `perm` with `perm[new] = old`.
pub fn compute(adj: &[Vec<usize>], ordering: Ordering) -> Vec<usize> {
    match ordering {
        Ordering::Natural => (0..adj.len()).collect(),
        Ordering::ReverseCuthillMcKee => reverse_cuthill_mckee(adj),
    }
}

fn bfs_levels(adj: &[Vec<usize>], start: usize, level: &mut [usize]) -> (usize, usize) {
    // returns (eccentricity, last vertex of the deepest level with minimum degree)
    level.iter_mut().for_each(|l| *l = usize::MAX);
    let mut queue = VecDeque::from([start]);
    level[start] = 0;
    let mut depth = 0;
    let mut last = start;
    while let Some(v) = queue.pop_front() {
        let lv = level[v];
        if lv > depth || (lv == depth && adj[v].len() < adj[last].len()) {
            depth = lv;
            last = v;
        }
        for &w in &adj[v] {
            if level[w] == usize::MAX {
                level[w] = lv + 1;
                queue.push_back(w);
            }
        }
    }
    (depth, last)
}

fn pseudo_peripheral(adj: &[Vec<usize>], start: usize, level: &mut [usize]) -> usize {
    let mut root = start;
    let (mut ecc, mut far) = bfs_levels(adj, root, level);
    loop {
        let (e2, f2) = bfs_levels(adj, far, level);
        if e2 <= ecc {
            return root;
        }
        root = far;
        ecc = e2;
        far = f2;
    }
}

fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut level = vec![usize::MAX; n];

    // components in order of their lowest-degree vertex
    let mut seeds: Vec<usize> = (0..n).collect();
    seeds.sort_by_key(|&v| (adj[v].len(), v));

    for &seed in &seeds {
        if visited[seed] {
            continue;
        }
        let root = pseudo_peripheral(adj, seed, &mut level);
        let root = if visited[root] { seed } else { root };
        visited[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (adj[w].len(), w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> Vec<Vec<usize>> {
        (0..n)
            .map(|i| {
                let mut v = Vec::new();
                if i > 0 {
                    v.push(i - 1);
                }
                if i + 1 < n {
                    v.push(i + 1);
                }
                v
            })
            .collect()
    }

    #[test]
    fn rcm_is_a_permutation() {
        let mut adj = path(7);
        adj.push(vec![]); // isolated vertex
        let p = compute(&adj, Ordering::ReverseCuthillMcKee);
        let mut sorted = p.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn rcm_keeps_path_bandwidth_one() {
        let adj = path(10);
        let p = compute(&adj, Ordering::ReverseCuthillMcKee);
        let mut inv = [0; 10];
        for (new, &old) in p.iter().enumerate() {
            inv[old] = new;
        }
        for (i, nb) in adj.iter().enumerate() {
            for &j in nb {
                assert!(inv[i].abs_diff(inv[j]) <= 1);
            }
        }
    }
}
