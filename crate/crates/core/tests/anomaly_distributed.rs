mod common;

use netcarto_core::anomaly_distributed::*;

use common::desk;

#[test]
fn consensus_residual_falls_over_rounds() {
    let problem = desk(541, 12, 16, 14);
    let partition = NodePartition::contiguous(12, ring_graph(4)).unwrap();
    let config = AdmmConfig { rounds: 200, ..AdmmConfig::new(3, problem.lambda_star, problem.lambda_one) };
    let run = run_admm(&problem, &partition, &config, 1).unwrap();
    let residuals: Vec<f64> = run.trace.iter().map(|r| r.consensus_residual).collect();
    let early = residuals[..10].iter().copied().fold(0.0, f64::max);
    let late = residuals[residuals.len() - 10..].iter().copied().fold(0.0, f64::max);
    assert!(late < 1e-2 * early, "early {early} late {late}");
}

#[test]
fn star_and_ring_agree_on_the_consensus_point() {
    let problem = desk(542, 10, 14, 12);
    let config = AdmmConfig { rounds: 600, ..AdmmConfig::new(3, problem.lambda_star, problem.lambda_one) };
    let ring = run_admm(&problem, &NodePartition::contiguous(10, ring_graph(5)).unwrap(), &config, 2).unwrap();
    let star = run_admm(&problem, &NodePartition::contiguous(10, star_graph(5)).unwrap(), &config, 2).unwrap();
    let gap = (ring.objective - star.objective).abs() / star.objective;
    assert!(gap < 1e-3, "ring {} star {}", ring.objective, star.objective);
}
