//! Brute-force reference implementations used by the test suites.
//!
//! Nothing in here shares code with the production paths it checks: the
//! cosine score is recomputed with hash maps, DBSCAN is rebuilt from core
//! points and union-find, and modularity is summed over the full adjacency
//! matrix.

use std::collections::{BTreeSet, HashMap};

use crate::clustering::{ClusterId, ClusterLabel};
use crate::model::Fingerprint;

/// Cosine score with explicit loops: common-MAC dot product over the product
/// of full-fingerprint norms.
pub fn naive_cosine(f1: &Fingerprint, f2: &Fingerprint) -> f64 {
    cosine_of_maps(&as_map(f1), &as_map(f2))
}

fn as_map(fp: &Fingerprint) -> HashMap<String, f64> {
    fp.iter().map(|(m, r)| (m.to_string(), r)).collect()
}

fn cosine_of_maps(m1: &HashMap<String, f64>, m2: &HashMap<String, f64>) -> f64 {
    let mut y = 0.0;
    for (mac, r1) in m1 {
        if let Some(r2) = m2.get(mac) {
            y += r1 * r2;
        }
    }
    let d1: f64 = m1.values().map(|r| r * r).sum();
    let d2: f64 = m2.values().map(|r| r * r).sum();
    y / (d1.sqrt() * d2.sqrt())
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut root = x;
    while parent[root] != root {
        root = parent[root];
    }
    let mut cur = x;
    while parent[cur] != root {
        let next = parent[cur];
        parent[cur] = root;
        cur = next;
    }
    root
}

/// DBSCAN from first principles: find all core points, join cores that are
/// neighbours, order components by their lowest core index, then hand each
/// border point to the earliest component with a core neighbour.
pub fn naive_dbscan(fps: &[Fingerprint], eps: f64, min_pts: usize) -> Vec<ClusterLabel> {
    let n = fps.len();
    let maps: Vec<_> = fps.iter().map(as_map).collect();
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            adj[i][j] = cosine_of_maps(&maps[i], &maps[j]) >= eps;
        }
    }
    let core: Vec<bool> = (0..n)
        .map(|i| adj[i].iter().filter(|&&x| x).count() >= min_pts)
        .collect();

    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in 0..n {
            if core[i] && core[j] && adj[i][j] {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }

    // Component number by first appearance of a core point.
    let mut component_of_root: HashMap<usize, u32> = HashMap::new();
    let mut labels = vec![ClusterLabel::Noise; n];
    for i in 0..n {
        if core[i] {
            let root = find(&mut parent, i);
            let next = component_of_root.len() as u32 + 1;
            let id = *component_of_root.entry(root).or_insert(next);
            labels[i] = ClusterLabel::Cluster(ClusterId(id));
        }
    }
    for i in 0..n {
        if core[i] {
            continue;
        }
        let best = (0..n)
            .filter(|&j| core[j] && adj[i][j])
            .filter_map(|j| labels[j].cluster())
            .min();
        if let Some(id) = best {
            labels[i] = ClusterLabel::Cluster(id);
        }
    }
    labels
}

/// Clusters as a set of member-index sets, ignoring label numbering.
pub fn partition_of(labels: &[ClusterLabel]) -> BTreeSet<BTreeSet<usize>> {
    let mut groups: HashMap<ClusterId, BTreeSet<usize>> = HashMap::new();
    for (i, label) in labels.iter().enumerate() {
        if let Some(id) = label.cluster() {
            groups.entry(id).or_default().insert(i);
        }
    }
    groups.into_values().collect()
}

/// Modularity as the full double sum over the symmetric adjacency matrix:
/// `(1/2m) * sum_ij [A_ij - k_i k_j / 2m] * delta(c_i, c_j)`.
pub fn adjacency_modularity(n: usize, edges: &[(usize, usize, f64)], membership: &[usize]) -> f64 {
    let mut a = vec![vec![0.0; n]; n];
    for &(i, j, w) in edges {
        if i == j {
            a[i][i] += 2.0 * w;
        } else {
            a[i][j] += w;
            a[j][i] += w;
        }
    }
    let k: Vec<f64> = a.iter().map(|row| row.iter().sum()).collect();
    let two_m: f64 = k.iter().sum();
    if two_m == 0.0 {
        return 0.0;
    }
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            if membership[i] == membership[j] {
                q += a[i][j] - k[i] * k[j] / two_m;
            }
        }
    }
    q / two_m
}

/// Best modularity over every set partition of `n` nodes, enumerated as
/// restricted growth strings. Only sensible for small `n`.
pub fn exhaustive_best_modularity(n: usize, edges: &[(usize, usize, f64)]) -> (f64, Vec<usize>) {
    let mut best = (f64::NEG_INFINITY, vec![0; n]);
    let mut rgs = vec![0usize; n];
    fn recurse(
        pos: usize,
        max_used: usize,
        rgs: &mut Vec<usize>,
        n: usize,
        edges: &[(usize, usize, f64)],
        best: &mut (f64, Vec<usize>),
    ) {
        if pos == n {
            let q = adjacency_modularity(n, edges, rgs);
            if q > best.0 {
                *best = (q, rgs.clone());
            }
            return;
        }
        for c in 0..=max_used + 1 {
            rgs[pos] = c;
            recurse(pos + 1, max_used.max(c), rgs, n, edges, best);
        }
    }
    if n == 0 {
        return (0.0, vec![]);
    }
    rgs[0] = 0;
    recurse(1, 0, &mut rgs, n, edges, &mut best);
    best
}
