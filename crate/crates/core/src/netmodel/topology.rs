use std::collections::{BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Directed-link network over `node_count` routers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub node_count: usize,
    /// Ordered directed links `(from, to)`; link index = position.
    pub links: Vec<(usize, usize)>,
    pub seed: u64,
}

impl Topology {
    /// Validates and builds a topology from explicit directed links.
    pub fn from_links(node_count: usize, links: Vec<(usize, usize)>, seed: u64) -> Result<Self> {
        if node_count < 2 {
            return Err(invalid("topology needs at least 2 nodes"));
        }
        let mut seen = BTreeSet::new();
        for &(a, b) in &links {
            if a >= node_count || b >= node_count {
                return Err(invalid(format!("link ({a},{b}) references a missing node")));
            }
            if a == b {
                return Err(invalid(format!("self-loop on node {a}")));
            }
            if !seen.insert((a, b)) {
                return Err(invalid(format!("duplicate link ({a},{b})")));
            }
        }
        let topo = Self { node_count, links, seed };
        if !topo.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(topo)
    }

    /// Builds from undirected edges, storing both directions sorted.
    pub fn from_undirected(node_count: usize, edges: &[(usize, usize)], seed: u64) -> Result<Self> {
        let mut links: Vec<(usize, usize)> = edges.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
        links.sort_unstable();
        Self::from_links(node_count, links, seed)
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    /// Index of the directed link `from -> to`.
    pub fn link_index(&self, from: usize, to: usize) -> Option<usize> {
        self.links.iter().position(|&l| l == (from, to))
    }

    /// Outgoing neighbours per node, sorted ascending.
    pub fn out_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for &(a, b) in &self.links {
            adj[a].push(b);
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Connectivity of the underlying undirected graph.
    pub fn is_connected(&self) -> bool {
        let mut adj = vec![Vec::new(); self.node_count];
        for &(a, b) in &self.links {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; self.node_count];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.iter().all(|s| *s)
    }

    /// Undirected edges `(a, b)` with `a < b`, sorted.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        let set: BTreeSet<(usize, usize)> = self.links.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
        set.into_iter().collect()
    }
}

/// Random geometric-style topology: nodes drawn in the unit square, a
/// nearest-predecessor spanning tree first, then the shortest missing edges
/// until the directed link count reaches about `n_nodes * target_degree / 2`.
pub fn build_topology(n_nodes: usize, target_degree: f64, seed: u64) -> Result<Topology> {
    if n_nodes < 2 {
        return Err(invalid("build_topology requires n_nodes >= 2"));
    }
    if !(target_degree >= 2.0) {
        return Err(invalid("build_topology requires target_degree >= 2"));
    }
    let mut rng = super::rng(seed);
    let pos: Vec<(f64, f64)> = (0..n_nodes).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
    let dist = |a: usize, b: usize| {
        let (dx, dy) = (pos[a].0 - pos[b].0, pos[a].1 - pos[b].1);
        (dx * dx + dy * dy).sqrt()
    };

    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for i in 1..n_nodes {
        let parent = (0..i)
            .min_by(|&a, &b| dist(i, a).total_cmp(&dist(i, b)).then(a.cmp(&b)))
            .expect("i >= 1");
        edges.insert((parent.min(i), parent.max(i)));
    }

    let max_edges = n_nodes * (n_nodes - 1) / 2;
    let target = ((n_nodes as f64 * target_degree / 4.0).round() as usize).clamp(n_nodes - 1, max_edges);
    if edges.len() < target {
        let mut candidates: Vec<(usize, usize)> = (0..n_nodes)
            .flat_map(|a| ((a + 1)..n_nodes).map(move |b| (a, b)))
            .filter(|e| !edges.contains(e))
            .collect();
        candidates.sort_by(|&(a, b), &(c, d)| dist(a, b).total_cmp(&dist(c, d)).then((a, b).cmp(&(c, d))));
        for e in candidates.into_iter().take(target - edges.len()) {
            edges.insert(e);
        }
    }
    let edges: Vec<(usize, usize)> = edges.into_iter().collect();
    Topology::from_undirected(n_nodes, &edges, seed)
}
