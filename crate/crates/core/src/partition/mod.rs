//! Weighted dual-graph partitioning, element reordering and the data each
//! partition worker needs, including the face-local exchange plan.

pub mod file;
pub mod payload;
pub mod plan;
pub mod transport;

use std::collections::VecDeque;

use thiserror::Error;

use crate::lts::Clustering;
use crate::mesh::FaceAdjacency;

pub use plan::{build_partitions, PlanParams, ElementRecord, GhostRecord, LinkRecord, PartitionData, PartitionHeader, SendRecord};

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("cannot split {elements} elements into {parts} partitions")]
    TooManyParts { parts: usize, elements: usize },
    #[error("partition count must be at least 1")]
    NoParts,
    #[error("partition file: {0}")]
    Format(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Dual graph in compressed adjacency form.
#[derive(Clone, Debug, PartialEq)]
pub struct DualGraph {
    pub vertex_weight: Vec<u64>,
    pub offsets: Vec<usize>,
    pub targets: Vec<usize>,
    pub edge_weight: Vec<u64>,
}

impl DualGraph {
    pub fn len(&self) -> usize {
        self.vertex_weight.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertex_weight.is_empty()
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = (usize, u64)> + '_ {
        (self.offsets[v]..self.offsets[v + 1]).map(move |e| (self.targets[e], self.edge_weight[e]))
    }

    pub fn total_weight(&self) -> u64 {
        self.vertex_weight.iter().sum()
    }

    /// Builds a graph from an explicit weighted edge list.
    pub fn from_edges(vertex_weight: Vec<u64>, edges: &[(usize, usize, u64)]) -> Self {
        let n = vertex_weight.len();
        let mut lists: Vec<Vec<(usize, u64)>> = vec![Vec::new(); n];
        for &(a, b, w) in edges {
            lists[a].push((b, w));
            lists[b].push((a, w));
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        let mut edge_weight = Vec::new();
        offsets.push(0);
        for l in lists {
            for (t, w) in l {
                targets.push(t);
                edge_weight.push(w);
            }
            offsets.push(targets.len());
        }
        Self { vertex_weight, offsets, targets, edge_weight }
    }

    /// Total weight of edges whose endpoints lie in different parts.
    pub fn cut(&self, part: &[usize]) -> u64 {
        let mut cut = 0;
        for v in 0..self.len() {
            for (t, w) in self.neighbors(v) {
                if t > v && part[t] != part[v] {
                    cut += w;
                }
            }
        }
        cut
    }

    pub fn part_weights(&self, part: &[usize], parts: usize) -> Vec<u64> {
        let mut w = vec![0; parts];
        for (v, &p) in part.iter().enumerate() {
            w[p] += self.vertex_weight[v];
        }
        w
    }

    /// `max part weight / mean part weight - 1`.
    pub fn imbalance(&self, part: &[usize], parts: usize) -> f64 {
        let w = self.part_weights(part, parts);
        let mean = self.total_weight() as f64 / parts as f64;
        *w.iter().max().unwrap_or(&0) as f64 / mean - 1.0
    }
}

/// Vertices weighted by update frequency `2^(Nc-1-l)` (0-based cluster `l`),
/// edges by exchange frequency times the `9 F` payload values.
pub fn build_dual_graph(clustering: &Clustering, adj: &FaceAdjacency, face_modes: usize) -> DualGraph {
    let nc = clustering.nc;
    let freq = |l: u8| 1u64 << (nc - 1 - l as usize);
    let vertex_weight = clustering.cluster.iter().map(|&l| freq(l)).collect();
    let mut edges = Vec::new();
    for k in 0..adj.links.len() {
        for n in adj.neighbors(k) {
            if n > k {
                let l = clustering.cluster[k].min(clustering.cluster[n]);
                edges.push((k, n, freq(l) * 9 * face_modes as u64));
            }
        }
    }
    DualGraph::from_edges(vertex_weight, &edges)
}

/// Hook for graph partitioners.
pub trait Partitioner {
    fn partition(&self, graph: &DualGraph, parts: usize) -> Result<Vec<usize>, PartitionError>;
}

/// Greedy breadth-first growth of one part at a time followed by boundary
/// moves that reduce the weight imbalance.
#[derive(Clone, Copy, Debug, Default)]
pub struct GreedyPartitioner;

impl Partitioner for GreedyPartitioner {
    fn partition(&self, graph: &DualGraph, parts: usize) -> Result<Vec<usize>, PartitionError> {
        if parts == 0 {
            return Err(PartitionError::NoParts);
        }
        let n = graph.len();
        if parts > n {
            return Err(PartitionError::TooManyParts { parts, elements: n });
        }
        const FREE: usize = usize::MAX;
        let mut part = vec![FREE; n];
        let mut remaining = graph.total_weight();
        let mut next_seed = 0;
        for p in 0..parts {
            if p + 1 == parts {
                part.iter_mut().filter(|x| **x == FREE).for_each(|x| *x = p);
                break;
            }
            let target = remaining as f64 / (parts - p) as f64;
            let mut weight = 0u64;
            let mut count = 0usize;
            let mut queue = VecDeque::new();
            let mut free_left = part.iter().filter(|&&x| x == FREE).count();
            'grow: while (weight as f64) < target {
                if queue.is_empty() {
                    while next_seed < n && part[next_seed] != FREE {
                        next_seed += 1;
                    }
                    if next_seed == n {
                        break;
                    }
                    queue.push_back(next_seed);
                }
                while let Some(v) = queue.pop_front() {
                    if part[v] != FREE {
                        continue;
                    }
                    // Leave at least one vertex for every later part.
                    if free_left <= parts - p - 1 {
                        break 'grow;
                    }
                    let w = graph.vertex_weight[v] as f64;
                    let over = weight as f64 + w - target;
                    let under = target - weight as f64;
                    if count > 0 && over > 0.0 && over > under {
                        break 'grow;
                    }
                    part[v] = p;
                    weight += graph.vertex_weight[v];
                    count += 1;
                    free_left -= 1;
                    if weight as f64 >= target {
                        break 'grow;
                    }
                    for (t, _) in graph.neighbors(v) {
                        if part[t] == FREE {
                            queue.push_back(t);
                        }
                    }
                }
            }
            remaining -= weight;
        }
        refine(graph, &mut part, parts);
        Ok(part)
    }
}

/// Moves boundary vertices from heavier to lighter neighboring parts while
/// that lowers the heaviest of the two.
fn refine(graph: &DualGraph, part: &mut [usize], parts: usize) {
    let mut weights = graph.part_weights(part, parts);
    let mut counts = vec![0usize; parts];
    for &p in part.iter() {
        counts[p] += 1;
    }
    for _ in 0..20 {
        let mut moved = false;
        for v in 0..graph.len() {
            let a = part[v];
            if counts[a] == 1 {
                continue;
            }
            let w = graph.vertex_weight[v];
            let mut best: Option<(usize, i64)> = None;
            for (t, _) in graph.neighbors(v) {
                let b = part[t];
                if b == a || weights[b] + w >= weights[a] {
                    continue;
                }
                // Gain in cut weight of moving v from a to b.
                let gain: i64 = graph
                    .neighbors(v)
                    .map(|(u, uw)| if part[u] == b { uw as i64 } else if part[u] == a { -(uw as i64) } else { 0 })
                    .sum();
                if best.map_or(true, |(_, g)| gain > g) {
                    best = Some((b, gain));
                }
            }
            if let Some((b, _)) = best {
                let before = weights[a].max(weights[b]);
                let after = (weights[a] - w).max(weights[b] + w);
                if after < before {
                    part[v] = b;
                    weights[a] -= w;
                    weights[b] += w;
                    counts[a] -= 1;
                    counts[b] += 1;
                    moved = true;
                }
            }
        }
        if !moved {
            break;
        }
    }
}

/// Role of an element with respect to communication.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    Interior = 0,
    Send = 1,
}

pub fn roles(adj: &FaceAdjacency, part: &[usize]) -> Vec<Role> {
    (0..part.len())
        .map(|k| if adj.neighbors(k).any(|n| part[n] != part[k]) { Role::Send } else { Role::Interior })
        .collect()
}

/// Permutation (new position -> old element) sorting by partition, cluster,
/// role and original id.
pub fn reorder(clusters: &[u8], part: &[usize], roles: &[Role]) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..part.len()).collect();
    perm.sort_by_key(|&k| (part[k], clusters[k], roles[k], k));
    perm
}

/// CSV with element counts per partition and cluster plus the weighted load.
pub fn partition_report(clustering: &Clustering, part: &[usize], parts: usize, graph: &DualGraph) -> String {
    use std::fmt::Write as _;
    let mut counts = vec![vec![0usize; clustering.nc]; parts];
    for (k, &p) in part.iter().enumerate() {
        counts[p][clustering.cluster[k] as usize] += 1;
    }
    let weights = graph.part_weights(part, parts);
    let mut out = String::from("partition,total,weight");
    for l in 0..clustering.nc {
        let _ = write!(out, ",cluster_{}", l + 1);
    }
    out.push('\n');
    for p in 0..parts {
        let _ = write!(out, "{p},{},{}", counts[p].iter().sum::<usize>(), weights[p]);
        for c in &counts[p] {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    out
}
