//! Cross-user POI similarity graph and Louvain community detection.
//!
//! Every pair of POI fingerprints is scored; pairs at or above the edge
//! threshold become edges weighted by their similarity. Louvain then
//! alternates greedy single-node moves with community aggregation until no
//! move improves modularity. Node order is sorted unless a seed asks for a
//! shuffled order.

use std::collections::BTreeMap;
use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::Fingerprint;
use crate::similarity::{pairwise_similarities, SimilarityError};

/// Smallest modularity improvement accepted for a move.
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CommunityError {
    #[error("need at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("graph has no edges")]
    EmptyGraph,
    #[error("partition covers {partition} nodes, graph has {graph}")]
    PartitionMismatch { graph: usize, partition: usize },
    #[error("invalid edge ({0}, {1}): {2}")]
    InvalidEdge(usize, usize, String),
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
}

/// Undirected weighted graph over POI indices, without self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct PoiGraph {
    node_count: usize,
    edges: Vec<(usize, usize, f64)>,
    candidate_pairs: usize,
}

impl PoiGraph {
    /// Graph from an explicit edge list. Edges are stored as `(i, j)` with
    /// `i < j`; weights must be positive and finite.
    pub fn from_edges(
        node_count: usize,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self, CommunityError> {
        let mut seen = BTreeMap::new();
        for (a, b, w) in edges {
            let bad = |why: &str| CommunityError::InvalidEdge(a, b, why.to_string());
            if a == b {
                return Err(bad("self-loop"));
            }
            if a >= node_count || b >= node_count {
                return Err(bad("node out of range"));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(bad("weight must be positive and finite"));
            }
            if seen.insert((a.min(b), a.max(b)), w).is_some() {
                return Err(bad("duplicate edge"));
            }
        }
        Ok(PoiGraph {
            node_count,
            edges: seen.into_iter().map(|((a, b), w)| (a, b, w)).collect(),
            candidate_pairs: node_count * node_count.saturating_sub(1) / 2,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Number of pairs that were scored when building the graph.
    pub fn candidate_pairs(&self) -> usize {
        self.candidate_pairs
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.2).sum()
    }

    /// Writes one `i j weight` line per edge.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (i, j, w) in &self.edges {
            writeln!(out, "{i} {j} {w}")?;
        }
        Ok(())
    }

    /// Same topology with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, CommunityError> {
        PoiGraph::from_edges(self.node_count, self.edges.iter().map(|&(i, j, w)| (i, j, w * factor)))
    }
}

/// Scores all `h(h-1)/2` fingerprint pairs and keeps those at or above
/// `threshold`, weighted by their score.
pub fn build_graph(fps: &[Fingerprint], threshold: f64) -> Result<PoiGraph, CommunityError> {
    if fps.len() < 2 {
        return Err(CommunityError::TooFewNodes(fps.len()));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CommunityError::InvalidThreshold(threshold));
    }
    let pairs = pairwise_similarities(fps).map_err(|e| match e {
        SimilarityError::TooFewFingerprints(n) => CommunityError::TooFewNodes(n),
        other => CommunityError::InvalidEdge(0, 0, other.to_string()),
    })?;
    let candidate_pairs = pairs.len();
    let edges = pairs
        .into_iter()
        .filter(|(_, _, c)| c.value() >= threshold && c.value() > 0.0)
        .map(|(i, j, c)| (i, j, c.value()))
        .collect();
    Ok(PoiGraph {
        node_count: fps.len(),
        edges,
        candidate_pairs,
    })
}

/// Community assignment for every node, numbered from 0 in order of first
/// appearance, with its modularity.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub membership: Vec<usize>,
    pub modularity: f64,
}

impl Partition {
    pub fn community_count(&self) -> usize {
        self.membership.iter().max().map_or(0, |m| m + 1)
    }

    /// Node lists per community.
    pub fn communities(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.community_count()];
        for (node, &c) in self.membership.iter().enumerate() {
            out[c].push(node);
        }
        out
    }
}

fn renumber(membership: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    let mut out = Vec::with_capacity(membership.len());
    for &c in membership {
        let next = map.len();
        out.push(*map.entry(c).or_insert(next));
    }
    out
}

/// Weighted modularity `sum_c [in_c / m - (tot_c / 2m)^2]`, with `in_c` the
/// weight inside community `c` and `tot_c` the summed degree of its nodes.
/// An edgeless graph scores 0.
pub fn modularity(graph: &PoiGraph, membership: &[usize]) -> Result<f64, CommunityError> {
    if membership.len() != graph.node_count {
        return Err(CommunityError::PartitionMismatch {
            graph: graph.node_count,
            partition: membership.len(),
        });
    }
    let level = Level::from_graph(graph);
    Ok(level.modularity(membership))
}

/// One move made during the local-moving phase.
#[derive(Debug, Clone, PartialEq)]
pub struct MoveRecord {
    /// Node of the current level (a super-node above level 0).
    pub node: usize,
    pub from: usize,
    pub to: usize,
    /// Modularity change caused by the move.
    pub delta: f64,
}

/// Moves made on one level, with the original nodes behind each level node.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelTrace {
    pub members: Vec<Vec<usize>>,
    pub moves: Vec<MoveRecord>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LouvainOptions {
    /// Shuffle the node visiting order with this seed on every pass.
    pub seed: Option<u64>,
}

/// Graph at one aggregation level: adjacency without self-loops, plus the
/// self-loop weight each super-node carries.
struct Level {
    adj: Vec<Vec<(usize, f64)>>,
    self_loop: Vec<f64>,
    degree: Vec<f64>,
    two_m: f64,
}

impl Level {
    fn from_graph(graph: &PoiGraph) -> Self {
        Self::from_parts(
            graph.node_count,
            graph.edges.iter().copied(),
            vec![0.0; graph.node_count],
        )
    }

    fn from_parts(n: usize, edges: impl Iterator<Item = (usize, usize, f64)>, self_loop: Vec<f64>) -> Self {
        let mut adj = vec![Vec::new(); n];
        for (i, j, w) in edges {
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
        for list in &mut adj {
            list.sort_by_key(|&(j, _)| j);
        }
        let degree: Vec<f64> = (0..n)
            .map(|i| adj[i].iter().map(|e| e.1).sum::<f64>() + 2.0 * self_loop[i])
            .collect();
        let two_m = degree.iter().sum();
        Level {
            adj,
            self_loop,
            degree,
            two_m,
        }
    }

    fn n(&self) -> usize {
        self.adj.len()
    }

    fn modularity(&self, membership: &[usize]) -> f64 {
        if self.two_m == 0.0 {
            return 0.0;
        }
        let m = self.two_m / 2.0;
        let k = membership.iter().max().map_or(0, |c| c + 1);
        let mut inside = vec![0.0; k];
        let mut tot = vec![0.0; k];
        for i in 0..self.n() {
            let c = membership[i];
            tot[c] += self.degree[i];
            inside[c] += self.self_loop[i];
            for &(j, w) in &self.adj[i] {
                // Each undirected edge appears twice in the adjacency lists.
                if membership[j] == c {
                    inside[c] += w / 2.0;
                }
            }
        }
        inside
            .iter()
            .zip(&tot)
            .map(|(&i, &t)| i / m - (t / self.two_m).powi(2))
            .sum()
    }

    /// Greedy local moving. Returns the community of every node and whether
    /// anything moved.
    fn local_moves(&self, rng: &mut Option<ChaCha8Rng>, moves: &mut Vec<MoveRecord>) -> Vec<usize> {
        let n = self.n();
        let m = self.two_m / 2.0;
        let mut comm: Vec<usize> = (0..n).collect();
        let mut tot = self.degree.clone();
        let mut link = vec![0.0; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut order: Vec<usize> = (0..n).collect();

        loop {
            if let Some(rng) = rng.as_mut() {
                order.shuffle(rng);
            }
            let mut improved = false;
            for &i in &order {
                let ki = self.degree[i];
                let from = comm[i];
                for &(j, w) in &self.adj[i] {
                    let c = comm[j];
                    if link[c] == 0.0 {
                        touched.push(c);
                    }
                    link[c] += w;
                }
                tot[from] -= ki;
                let gain = |c: usize, link: &[f64]| link[c] - tot[c] * ki / self.two_m;
                let stay = gain(from, &link);
                let mut best = from;
                let mut best_gain = stay;
                touched.sort_unstable();
                for &c in &touched {
                    let g = gain(c, &link);
                    if g > best_gain {
                        best = c;
                        best_gain = g;
                    }
                }
                let delta = (best_gain - stay) / m;
                if best != from && delta > MIN_GAIN {
                    comm[i] = best;
                    tot[best] += ki;
                    moves.push(MoveRecord {
                        node: i,
                        from,
                        to: best,
                        delta,
                    });
                    improved = true;
                } else {
                    tot[from] += ki;
                }
                for &c in &touched {
                    link[c] = 0.0;
                }
                touched.clear();
            }
            if !improved {
                break;
            }
        }
        comm
    }

    /// Collapses each community into one node.
    fn aggregate(&self, comm: &[usize]) -> Level {
        let k = comm.iter().max().map_or(0, |c| c + 1);
        let mut self_loop = vec![0.0; k];
        let mut between: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for i in 0..self.n() {
            self_loop[comm[i]] += self.self_loop[i];
            for &(j, w) in &self.adj[i] {
                if j < i {
                    continue;
                }
                let (a, b) = (comm[i], comm[j]);
                if a == b {
                    self_loop[a] += w;
                } else {
                    *between.entry((a.min(b), a.max(b))).or_insert(0.0) += w;
                }
            }
        }
        Level::from_parts(k, between.into_iter().map(|((a, b), w)| (a, b, w)), self_loop)
    }
}

/// Louvain with default options.
pub fn louvain(graph: &PoiGraph) -> Result<Partition, CommunityError> {
    louvain_traced(graph, LouvainOptions::default()).map(|(p, _)| p)
}

/// Louvain returning every accepted move, level by level.
pub fn louvain_traced(
    graph: &PoiGraph,
    options: LouvainOptions,
) -> Result<(Partition, Vec<LevelTrace>), CommunityError> {
    if graph.edges.is_empty() {
        return Err(CommunityError::EmptyGraph);
    }
    let mut rng = options.seed.map(ChaCha8Rng::seed_from_u64);
    let mut level = Level::from_graph(graph);
    // Original node -> node of the current level.
    let mut owner: Vec<usize> = (0..graph.node_count).collect();
    let mut traces = Vec::new();

    loop {
        let mut members = vec![Vec::new(); level.n()];
        for (orig, &node) in owner.iter().enumerate() {
            members[node].push(orig);
        }
        let mut moves = Vec::new();
        let comm = renumber(&level.local_moves(&mut rng, &mut moves));
        let moved = !moves.is_empty();
        traces.push(LevelTrace { members, moves });
        if !moved {
            break;
        }
        for o in owner.iter_mut() {
            *o = comm[*o];
        }
        level = level.aggregate(&comm);
    }

    let membership = renumber(&owner);
    let modularity = modularity(graph, &membership)?;
    Ok((Partition { membership, modularity }, traces))
}

/// One row of a threshold sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub threshold: f64,
    pub edges: usize,
    pub communities: usize,
    pub modularity: f64,
}

/// Builds the graph and runs Louvain once per threshold.
pub fn threshold_sweep(fps: &[Fingerprint], thresholds: &[f64]) -> Result<Vec<SweepRow>, CommunityError> {
    thresholds
        .iter()
        .map(|&threshold| {
            if !(threshold > 0.0 && threshold <= 1.0) {
                return Err(CommunityError::InvalidThreshold(threshold));
            }
            let graph = build_graph(fps, threshold)?;
            let partition = louvain(&graph)?;
            Ok(SweepRow {
                threshold,
                edges: graph.edges.len(),
                communities: partition.community_count(),
                modularity: partition.modularity,
            })
        })
        .collect()
}
