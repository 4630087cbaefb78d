use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Topology;
use crate::error::{invalid, mismatch, Error, Result};
use crate::linalg;

/// Column-sparse 0/1 matrix; `cols[j]` lists the rows holding a one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseBinary {
    pub nrows: usize,
    pub cols: Vec<Vec<usize>>,
}

impl SparseBinary {
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let cols = (0..m.ncols())
            .map(|j| (0..m.nrows()).filter(|&i| m[(i, j)] != 0.0).collect())
            .collect();
        Self { nrows: m.nrows(), cols }
    }

    pub fn ncols(&self) -> usize {
        self.cols.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols());
        for (j, rows) in self.cols.iter().enumerate() {
            for &i in rows {
                m[(i, j)] = 1.0;
            }
        }
        m
    }

    /// `self * a` for a dense `ncols x k` matrix.
    pub fn mul(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(a.nrows(), self.ncols(), "sparse product dimension mismatch");
        let mut out = DMatrix::zeros(self.nrows, a.ncols());
        for t in 0..a.ncols() {
            let src = a.column(t);
            let mut dst = out.column_mut(t);
            for (j, rows) in self.cols.iter().enumerate() {
                let v = src[j];
                if v != 0.0 {
                    for &i in rows {
                        dst[i] += v;
                    }
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, a: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.nrows);
        for (j, rows) in self.cols.iter().enumerate() {
            let v = a[j];
            if v != 0.0 {
                for &i in rows {
                    out[i] += v;
                }
            }
        }
        out
    }

    /// `self' * m` for a dense `nrows x k` matrix.
    pub fn tr_mul(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(m.nrows(), self.nrows, "sparse product dimension mismatch");
        let mut out = DMatrix::zeros(self.ncols(), m.ncols());
        for t in 0..m.ncols() {
            let src = m.column(t);
            for (j, rows) in self.cols.iter().enumerate() {
                out[(j, t)] = rows.iter().map(|&i| src[i]).sum();
            }
        }
        out
    }

    pub fn tr_mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.ncols(), self.cols.iter().map(|rows| rows.iter().map(|&i| v[i]).sum()))
    }

    /// Keeps only the given rows (renumbered in the given order).
    pub fn restrict_rows(&self, rows: &[usize]) -> Self {
        let mut map = vec![usize::MAX; self.nrows];
        for (k, &r) in rows.iter().enumerate() {
            map[r] = k;
        }
        let cols = self
            .cols
            .iter()
            .map(|c| {
                let mut v: Vec<usize> = c.iter().filter(|&&i| map[i] != usize::MAX).map(|&i| map[i]).collect();
                v.sort_unstable();
                v
            })
            .collect();
        Self { nrows: rows.len(), cols }
    }

    /// Square of the largest singular value (upper-bound estimate).
    pub fn spectral_norm_sq(&self) -> f64 {
        linalg::power_iteration(self.ncols(), 50, 1.05, |v| self.tr_mul_vec(&self.mul_vec(v)))
    }
}

/// Link-by-flow incidence for single-path routing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingMatrix {
    /// `L x F` 0/1 entries.
    pub entries: DMatrix<f64>,
    /// `(source, destination)` per flow.
    pub flows: Vec<(usize, usize)>,
    /// Link indices traversed by each flow, in path order.
    pub paths: Vec<Vec<usize>>,
}

impl RoutingMatrix {
    pub fn link_count(&self) -> usize {
        self.entries.nrows()
    }

    pub fn flow_count(&self) -> usize {
        self.entries.ncols()
    }

    pub fn sparse(&self) -> SparseBinary {
        SparseBinary::from_dense(&self.entries)
    }

    /// Builds from an explicit dense 0/1 matrix; path order follows row order.
    pub fn from_dense(entries: DMatrix<f64>) -> Result<Self> {
        if entries.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(invalid("routing entries must be 0 or 1"));
        }
        let sparse = SparseBinary::from_dense(&entries);
        if let Some(j) = sparse.cols.iter().position(|c| c.is_empty()) {
            return Err(invalid(format!("routing column {j} is empty")));
        }
        Ok(Self { flows: Vec::new(), paths: sparse.cols, entries })
    }
}

/// All ordered pairs `(s, d)` with `s != d`, lexicographic order.
pub fn all_pairs_flows(n_nodes: usize) -> Vec<(usize, usize)> {
    (0..n_nodes)
        .flat_map(|s| (0..n_nodes).filter(move |&d| d != s).map(move |d| (s, d)))
        .collect()
}

fn hop_distances_to(topology: &Topology, target: usize) -> Vec<usize> {
    // BFS over reversed links: distance from every node to `target`.
    let mut rev = vec![Vec::new(); topology.node_count];
    for &(a, b) in &topology.links {
        rev[b].push(a);
    }
    let mut dist = vec![usize::MAX; topology.node_count];
    dist[target] = 0;
    let mut queue = VecDeque::from([target]);
    while let Some(u) = queue.pop_front() {
        for &v in &rev[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Hop-count shortest paths; among equal-length paths the lexicographically
/// smallest node sequence wins.
pub fn shortest_path_routing(topology: &Topology, flows: &[(usize, usize)]) -> Result<RoutingMatrix> {
    let n = topology.node_count;
    let out = topology.out_neighbors();
    let mut entries = DMatrix::zeros(topology.link_count(), flows.len());
    let mut paths = Vec::with_capacity(flows.len());
    let mut dist_cache: Vec<Option<Vec<usize>>> = vec![None; n];
    for (f, &(s, d)) in flows.iter().enumerate() {
        if s >= n || d >= n {
            return Err(invalid(format!("flow ({s},{d}) references a missing node")));
        }
        if s == d {
            return Err(invalid(format!("flow ({s},{d}) has identical endpoints")));
        }
        let dist = dist_cache[d].get_or_insert_with(|| hop_distances_to(topology, d));
        if dist[s] == usize::MAX {
            return Err(Error::Unreachable { from: s, to: d });
        }
        let mut path = Vec::with_capacity(dist[s]);
        let mut u = s;
        while u != d {
            // neighbours are sorted, so the first one on a shortest path is the
            // lexicographically smallest continuation
            let next = *out[u]
                .iter()
                .find(|&&v| dist[v] != usize::MAX && dist[v] + 1 == dist[u])
                .expect("BFS distances guarantee a successor");
            let link = topology.link_index(u, next).expect("successor is adjacent");
            entries[(link, f)] = 1.0;
            path.push(link);
            u = next;
        }
        paths.push(path);
    }
    Ok(RoutingMatrix { entries, flows: flows.to_vec(), paths })
}

/// Gram matrix and Laplacian of the link graph induced by routing.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGraphStructure {
    /// `G = R R'`: flows shared by each link pair.
    pub gram: DMatrix<f64>,
    /// `diag(G 1) - G`.
    pub laplacian: DMatrix<f64>,
}

impl LinkGraphStructure {
    pub fn from_routing(routing: &RoutingMatrix) -> Self {
        let gram = gram(routing);
        let laplacian = laplacian(&gram).expect("Gram matrix is symmetric");
        Self { gram, laplacian }
    }
}

pub fn gram(routing: &RoutingMatrix) -> DMatrix<f64> {
    &routing.entries * routing.entries.transpose()
}

pub fn laplacian(gram: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !gram.is_square() {
        return Err(mismatch("Laplacian input must be square"));
    }
    let asym = linalg::asymmetry(gram);
    if asym > 1e-12 * gram.amax().max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    let degrees = gram.column_sum();
    Ok(DMatrix::from_diagonal(&degrees) - gram)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::build_topology;

    /// Walks the link set from source to destination, visiting each node once.
    fn path_walk_ok(topology: &Topology, column: &[usize], s: usize, d: usize) -> bool {
        let mut remaining: Vec<usize> = column.to_vec();
        let mut u = s;
        let mut visited = vec![s];
        while u != d {
            let Some(k) = remaining.iter().position(|&l| topology.links[l].0 == u) else {
                return false;
            };
            let l = remaining.swap_remove(k);
            u = topology.links[l].1;
            if visited.contains(&u) {
                return false;
            }
            visited.push(u);
        }
        remaining.is_empty()
    }

    #[test]
    fn two_node_flow() {
        let t = build_topology(2, 2.0, 0).unwrap();
        let r = shortest_path_routing(&t, &[(0, 1)]).unwrap();
        assert_eq!(r.entries, DMatrix::from_row_slice(2, 1, &[1.0, 0.0]));
    }

    #[test]
    fn triangle_prefers_direct_link() {
        let t = Topology::from_undirected(3, &[(0, 1), (1, 2), (0, 2)], 0).unwrap();
        let r = shortest_path_routing(&t, &[(0, 2)]).unwrap();
        assert_eq!(r.paths[0], vec![t.link_index(0, 2).unwrap()]);
    }

    #[test]
    fn ties_break_lexicographically() {
        // square 0-1-3, 0-2-3: both 2 hops, choose via node 1
        let t = Topology::from_undirected(4, &[(0, 1), (1, 3), (0, 2), (2, 3)], 0).unwrap();
        let r = shortest_path_routing(&t, &[(0, 3)]).unwrap();
        assert_eq!(r.paths[0], vec![t.link_index(0, 1).unwrap(), t.link_index(1, 3).unwrap()]);
    }

    #[test]
    fn all_pairs_on_twenty_nodes_pass_path_walk() {
        let t = build_topology(20, 5.0, 7).unwrap();
        let flows = all_pairs_flows(20);
        let r = shortest_path_routing(&t, &flows).unwrap();
        assert_eq!(r.flow_count(), 380);
        let sparse = r.sparse();
        for (f, &(s, d)) in flows.iter().enumerate() {
            assert!(path_walk_ok(&t, &sparse.cols[f], s, d), "flow {f}");
            assert_eq!(sparse.cols[f].len(), r.paths[f].len());
        }
    }

    #[test]
    fn rejects_bad_flows() {
        let t = build_topology(3, 2.0, 0).unwrap();
        assert!(shortest_path_routing(&t, &[(1, 1)]).is_err());
        assert!(shortest_path_routing(&t, &[(0, 5)]).is_err());
    }

    #[test]
    fn gram_examples() {
        let r = RoutingMatrix::from_dense(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0])).unwrap();
        assert_eq!(gram(&r), DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]));
        let disjoint = RoutingMatrix::from_dense(DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0])).unwrap();
        let g = gram(&disjoint);
        assert_eq!(g[(0, 1)], 0.0);
        assert_eq!(g[(0, 2)], 0.0);
    }

    #[test]
    fn gram_counts_shared_flows() {
        let t = build_topology(20, 5.0, 3).unwrap();
        let r = shortest_path_routing(&t, &all_pairs_flows(20)).unwrap();
        let g = gram(&r);
        for i in 0..r.link_count() {
            for j in 0..r.link_count() {
                let shared = r.paths.iter().filter(|p| p.contains(&i) && p.contains(&j)).count();
                assert_eq!(g[(i, j)], shared as f64);
            }
        }
    }

    #[test]
    fn laplacian_examples() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]);
        assert_eq!(laplacian(&g).unwrap(), DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 4.0]));
        assert_eq!(laplacian(&diag).unwrap(), DMatrix::zeros(2, 2));
        assert!(laplacian(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0])).is_err());
    }

    #[test]
    fn laplacian_quadratic_form_matches_double_sum() {
        use rand::Rng;
        let t = build_topology(12, 4.0, 11).unwrap();
        let r = shortest_path_routing(&t, &all_pairs_flows(12)).unwrap();
        let g = gram(&r);
        let lap = laplacian(&g).unwrap();
        let mut rng = crate::netmodel::rng(5);
        for _ in 0..20 {
            let x = DVector::from_fn(g.nrows(), |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let quad = (x.transpose() * &lap * &x)[(0, 0)];
            let mut double = 0.0;
            for i in 0..g.nrows() {
                for j in 0..g.nrows() {
                    double += g[(i, j)] * (x[i] - x[j]).powi(2);
                }
            }
            assert!((quad - 0.5 * double).abs() <= 1e-12 * (1.0 + quad.abs()) * 10.0);
        }
    }

    #[test]
    fn sparse_products_match_dense() {
        let t = build_topology(8, 4.0, 2).unwrap();
        let r = shortest_path_routing(&t, &all_pairs_flows(8)).unwrap();
        let s = r.sparse();
        let a = DMatrix::from_fn(r.flow_count(), 3, |i, j| (i as f64 * 0.3 - j as f64).sin());
        assert!((s.mul(&a) - &r.entries * &a).amax() < 1e-12);
        let m = DMatrix::from_fn(r.link_count(), 3, |i, j| (i as f64 + j as f64).cos());
        assert!((s.tr_mul(&m) - r.entries.transpose() * &m).amax() < 1e-12);
        let rows = [3usize, 0, 5];
        let sub = s.restrict_rows(&rows);
        assert_eq!(sub.to_dense(), linalg::select_rows(&r.entries, &rows));
    }
}
