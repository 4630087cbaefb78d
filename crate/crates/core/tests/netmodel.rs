mod common;

use std::collections::VecDeque;

use nalgebra::DMatrix;
use netcarto_core::netmodel::*;
use proptest::prelude::*;
use rand::Rng;

use common::rng;

fn bfs_connected(topology: &Topology) -> bool {
    let n = topology.node_count;
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in &topology.links {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    seen.iter().all(|&s| s)
}

#[test]
fn seeded_twenty_node_topology_is_connected() {
    let topo = build_topology(20, 5.0, 7).unwrap();
    assert!(bfs_connected(&topo));
    let l = topo.link_count();
    assert!((40..=60).contains(&l), "L = {l}");
    assert!(topo.links.iter().all(|&(a, b)| a != b));
    let mut sorted = topo.links.clone();
    sorted.sort_unstable();
    sorted.dedup();
    assert_eq!(sorted.len(), l);
}

#[test]
fn gram_counts_pairwise_flow_intersections() {
    let mut r = rng(75);
    let entries = DMatrix::from_fn(50, 380, |l, f| if l == f % 50 || r.random::<f64>() < 0.1 { 1.0 } else { 0.0 });
    let flows_on: Vec<Vec<usize>> = (0..50).map(|l| (0..380).filter(|&f| entries[(l, f)] == 1.0).collect()).collect();
    let routing = RoutingMatrix::from_dense(entries).unwrap();
    let g = gram(&routing);
    for i in 0..50 {
        for j in 0..50 {
            let shared = flows_on[i].iter().filter(|f| flows_on[j].contains(f)).count();
            assert_eq!(g[(i, j)], shared as f64, "({i}, {j})");
        }
    }
}

#[test]
fn od_traffic_energy_sits_in_declared_rank() {
    let z = generate_od_traffic(121, 500, 5, 144, 1).unwrap();
    let s = z.singular_values();
    let mut sq: Vec<f64> = s.iter().map(|v| v * v).collect();
    sq.sort_by(|a, b| b.total_cmp(a));
    let top: f64 = sq.iter().take(5).sum();
    assert!(top / sq.iter().sum::<f64>() >= 0.99);
}

#[test]
fn anomaly_bursts_hit_declared_density() {
    let cfg = AnomalyConfig { density: 0.005, magnitude: 2.0, duration: 3, signed: false };
    let a = inject_anomalies((121, 500), &cfg, 4).unwrap();
    let nnz = a.iter().filter(|v| **v != 0.0).count();
    let mut bursts = 0;
    for row in a.row_iter() {
        let mut prev = false;
        for v in row.iter() {
            let on = *v != 0.0;
            if on && !prev {
                bursts += 1;
            }
            prev = on;
        }
    }
    assert!((nnz as f64 - 302.5).abs() <= 3.0, "nnz {nnz}");
    assert!((95..=101).contains(&bursts), "bursts {bursts}");
}

#[test]
fn standard_scenario_matches_its_own_model() {
    let s = TrafficScenario::generate(&ScenarioConfig::standard(2)).unwrap();
    assert_eq!(s.routing.flow_count(), 380);
    assert_eq!(s.link_traffic, &s.routing.entries * &s.od_traffic);
    let y = &s.link_traffic + &s.routing.entries * &s.anomalies + &s.noise;
    assert_eq!(s.mask.apply(&y), s.observations);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn laplacian_quadratic_form_is_a_weighted_difference_sum(seed in any::<u64>(), n in 2usize..9) {
        let mut r = rng(seed);
        let w = DMatrix::from_fn(n, n, |_, _| r.random_range(0.0..3.0));
        let g = (&w + w.transpose()) * 0.5;
        let lap = laplacian(&g).unwrap();
        let x: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
        let xv = nalgebra::DVector::from_vec(x.clone());
        let quad = (xv.transpose() * &lap * &xv)[(0, 0)];
        let mut double = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    double += 0.5 * g[(i, j)] * (x[i] - x[j]).powi(2);
                }
            }
        }
        prop_assert!((quad - double).abs() <= 1e-12 * double.abs().max(1.0));
    }

    #[test]
    fn shortest_paths_have_hop_optimal_length(seed in any::<u64>(), nodes in 3usize..9) {
        let topo = build_topology(nodes, 2.5, seed).unwrap();
        let routing = shortest_path_routing(&topo, &all_pairs_flows(nodes)).unwrap();
        let out = topo.out_neighbors();
        for (path, &(src, dst)) in routing.paths.iter().zip(&routing.flows) {
            let mut dist = vec![usize::MAX; nodes];
            dist[src] = 0;
            let mut queue = VecDeque::from([src]);
            while let Some(v) = queue.pop_front() {
                for &w in &out[v] {
                    if dist[w] == usize::MAX {
                        dist[w] = dist[v] + 1;
                        queue.push_back(w);
                    }
                }
            }
            prop_assert_eq!(path.len(), dist[dst]);
        }
    }
}
