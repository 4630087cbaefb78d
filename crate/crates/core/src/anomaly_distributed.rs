//! In-network anomalography.
//!
//! The nuclear norm is replaced by its factorized form
//! `||X||_* = min_{X = P Q'} (||P||^2 + ||Q||^2) / 2`, giving
//!
//! ```text
//! ||P_Ω(Y - P Q' - R A)||^2 + λ*/2 (||P||^2 + ||Q||^2) + λ1 ||A||_1.
//! ```
//!
//! Rows of `P` live at the node owning the corresponding links, while `Q` and
//! `A` are replicated and kept in agreement across neighboring nodes by
//! consensus ADMM run in synchronous rounds.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::anomaly_batch::{BatchProblem, RoutingOperator};
use crate::error::{invalid, mismatch, Error, Result};
use crate::linalg;
use crate::netmodel::{rng, sub_seed, SamplingMask};
use crate::solvers::shrink;

/// Objective of the factorized problem.
pub fn factorized_objective(problem: &BatchProblem, p: &DMatrix<f64>, q: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    let x = p * q.transpose();
    problem.residual(&x, a).norm_squared()
        + problem.lambda_star / 2.0 * (p.norm_squared() + q.norm_squared())
        + problem.lambda_one * linalg::l1_norm(a)
}

/// Solves `(M'M + ridge I) v = M' z` restricted to the listed rows of `M`.
fn ridge_rows(m: &DMatrix<f64>, rows: &[usize], z: impl Fn(usize) -> f64, ridge: f64, extra: Option<&DVector<f64>>) -> DVector<f64> {
    let k = m.ncols();
    let mut h = DMatrix::identity(k, k) * ridge;
    let mut g = DVector::zeros(k);
    for &i in rows {
        let row = m.row(i);
        let zi = z(i);
        for a in 0..k {
            g[a] += row[a] * zi;
            for b in 0..k {
                h[(a, b)] += row[a] * row[b];
            }
        }
    }
    if let Some(e) = extra {
        g += e;
    }
    match h.clone().cholesky() {
        Some(c) => c.solve(&g),
        None => h.lu().solve(&g).unwrap_or_else(|| DVector::zeros(k)),
    }
}

/// Exact ridge update of every row of `P` with `Q`, `A` fixed.
fn update_p(y: &DMatrix<f64>, mask: &SamplingMask, ra: &DMatrix<f64>, q: &DMatrix<f64>, ridge: f64) -> DMatrix<f64> {
    let (l, _) = y.shape();
    let mut p = DMatrix::zeros(l, q.ncols());
    for i in 0..l {
        let cols = mask.row_indices(i);
        let row = ridge_rows(q, &cols, |t| y[(i, t)] - ra[(i, t)], ridge, None);
        p.set_row(i, &row.transpose());
    }
    p
}

/// `k` proximal gradient steps on `A` for `||P_Ω(Y - X - R A)||^2 + l1 ||A||_1`.
fn ista_a(y: &DMatrix<f64>, mask: &SamplingMask, x: &DMatrix<f64>, routing: &RoutingOperator, a: &DMatrix<f64>, l1: f64, lip: f64, steps: usize) -> DMatrix<f64> {
    let mut a = a.clone();
    if lip == 0.0 {
        return a;
    }
    let step = 1.0 / lip;
    for _ in 0..steps {
        let mut r = y - x - routing.apply(&a);
        mask.apply_in_place(&mut r);
        let g = routing.adjoint(&r) * -2.0;
        a = (&a - g * step).map(|v| shrink(v, l1 * step));
    }
    a
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizedOptions {
    pub rho: usize,
    pub seed: u64,
    pub iters: usize,
    pub tol: f64,
    /// Prox-gradient steps on `A` per sweep.
    pub a_steps: usize,
}

impl FactorizedOptions {
    pub fn new(rho: usize, seed: u64) -> Self {
        Self { rho, seed, iters: 2000, tol: 1e-10, a_steps: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizedSolution {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub objective: f64,
    pub trace: Vec<f64>,
    pub converged: bool,
}

/// Shared initialization: Gaussian `P`, `Q` scaled by `1/sqrt(rho)`, `A = 0`.
pub fn initial_factors(links: usize, horizon: usize, flows: usize, rho: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let scale = 1.0 / (rho as f64).sqrt();
    let mut rp = rng(sub_seed(seed, 21));
    let p = DMatrix::from_fn(links, rho, |_, _| rp.sample::<f64, _>(StandardNormal) * scale);
    let mut rq = rng(sub_seed(seed, 22));
    let q = DMatrix::from_fn(horizon, rho, |_, _| rq.sample::<f64, _>(StandardNormal) * scale);
    (p, q, DMatrix::zeros(flows, horizon))
}

/// One block-coordinate sweep: ridge rows of `P`, ridge rows of `Q`, then
/// `a_steps` prox-gradient steps on `A`.
pub fn factorized_sweep(problem: &BatchProblem, q: &DMatrix<f64>, a: &DMatrix<f64>, a_steps: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let ridge = problem.lambda_star / 2.0;
    let ra = problem.routing.apply(a);
    let p = update_p(&problem.y, &problem.mask, &ra, q, ridge);
    let mut q_new = DMatrix::zeros(problem.horizon(), p.ncols());
    for t in 0..problem.horizon() {
        let rows = problem.mask.column_indices(t);
        let row = ridge_rows(&p, &rows, |i| problem.y[(i, t)] - ra[(i, t)], ridge, None);
        q_new.set_row(t, &row.transpose());
    }
    let x = &p * q_new.transpose();
    let lip = 2.0 * problem.routing.spectral_norm_sq();
    let a = ista_a(&problem.y, &problem.mask, &x, &problem.routing, a, problem.lambda_one, lip, a_steps);
    (p, q_new, a)
}

/// Block coordinate descent on the factorized problem.
pub fn factorized_centralized(problem: &BatchProblem, options: &FactorizedOptions) -> Result<FactorizedSolution> {
    if options.rho == 0 {
        return Err(invalid("factor width must be at least one"));
    }
    let (mut p, mut q, mut a) = initial_factors(problem.links(), problem.horizon(), problem.flows(), options.rho, options.seed);
    factorized_from(problem, &mut p, &mut q, &mut a, options)
}

/// Block coordinate descent from a given starting point.
pub fn factorized_from(problem: &BatchProblem, p: &mut DMatrix<f64>, q: &mut DMatrix<f64>, a: &mut DMatrix<f64>, options: &FactorizedOptions) -> Result<FactorizedSolution> {
    if p.nrows() != problem.links() || q.nrows() != problem.horizon() || p.ncols() != q.ncols() || a.shape() != (problem.flows(), problem.horizon()) {
        return Err(mismatch("initial factors disagree with the problem"));
    }
    let mut trace = vec![factorized_objective(problem, p, q, a)];
    let mut converged = false;
    for _ in 0..options.iters {
        let (np, nq, na) = factorized_sweep(problem, q, a, options.a_steps);
        *p = np;
        *q = nq;
        *a = na;
        let prev = *trace.last().expect("nonempty");
        let now = factorized_objective(problem, p, q, a);
        trace.push(now);
        if (prev - now).abs() <= options.tol * prev.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("factorized solver did not converge in {} sweeps", options.iters);
    }
    let objective = *trace.last().expect("nonempty");
    Ok(FactorizedSolution { p: p.clone(), q: q.clone(), a: a.clone(), objective, trace, converged })
}

/// Block-wise first-order optimality residuals `(P, Q, A)` of the factorized
/// problem: gradient norms for the smooth blocks and the prox fixed-point
/// residual for `A`.
pub fn stationarity_residuals(problem: &BatchProblem, p: &DMatrix<f64>, q: &DMatrix<f64>, a: &DMatrix<f64>) -> (f64, f64, f64) {
    let x = p * q.transpose();
    let r = problem.residual(&x, a);
    let gp = &r * q * -2.0 + p * problem.lambda_star;
    let gq = r.transpose() * p * -2.0 + q * problem.lambda_star;
    let lip = 2.0 * problem.routing.spectral_norm_sq();
    let ga = problem.routing.adjoint(&r) * -2.0;
    let step = 1.0 / lip;
    let moved = (a - ga * step).map(|v| shrink(v, problem.lambda_one * step));
    (gp.norm(), gq.norm(), lip * (moved - a).norm())
}

/// Link ownership and the communication graph between nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodePartition {
    pub node_links: Vec<Vec<usize>>,
    pub neighbors: Vec<Vec<usize>>,
}

impl NodePartition {
    pub fn new(node_links: Vec<Vec<usize>>, neighbors: Vec<Vec<usize>>, link_count: usize) -> Result<Self> {
        let n = node_links.len();
        if n == 0 || neighbors.len() != n {
            return Err(mismatch("need one link set and one neighbor list per node"));
        }
        let mut owner = vec![usize::MAX; link_count];
        for (node, links) in node_links.iter().enumerate() {
            for &l in links {
                if l >= link_count || owner[l] != usize::MAX {
                    return Err(invalid(format!("link {l} is out of range or owned twice")));
                }
                owner[l] = node;
            }
        }
        if owner.contains(&usize::MAX) {
            return Err(invalid("every link must be owned by some node"));
        }
        for (i, nb) in neighbors.iter().enumerate() {
            for &j in nb {
                if j >= n || j == i || !neighbors[j].contains(&i) {
                    return Err(invalid("communication graph must be simple and undirected"));
                }
            }
        }
        let part = Self { node_links, neighbors };
        if !part.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(part)
    }

    /// Contiguous near-equal blocks of links over the given graph.
    pub fn contiguous(link_count: usize, neighbors: Vec<Vec<usize>>) -> Result<Self> {
        let n = neighbors.len();
        if n == 0 || n > link_count {
            return Err(invalid("need between 1 and L nodes"));
        }
        let node_links = (0..n).map(|k| (k * link_count / n..(k + 1) * link_count / n).collect()).collect();
        Self::new(node_links, neighbors, link_count)
    }

    pub fn node_count(&self) -> usize {
        self.node_links.len()
    }

    fn is_connected(&self) -> bool {
        let n = self.node_count();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &j in &self.neighbors[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

pub fn ring_graph(n: usize) -> Vec<Vec<usize>> {
    match n {
        0 => Vec::new(),
        1 => vec![Vec::new()],
        2 => vec![vec![1], vec![0]],
        _ => (0..n).map(|i| vec![(i + n - 1) % n, (i + 1) % n]).collect(),
    }
}

pub fn star_graph(n: usize) -> Vec<Vec<usize>> {
    (0..n).map(|i| if i == 0 { (1..n).collect() } else { vec![0] }).collect()
}

/// Undirected edge list to neighbor lists.
pub fn graph_from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Vec<Vec<usize>>> {
    let mut nb = vec![Vec::new(); n];
    for &(a, b) in edges {
        if a >= n || b >= n || a == b {
            return Err(invalid(format!("bad edge ({a}, {b})")));
        }
        if !nb[a].contains(&b) {
            nb[a].push(b);
            nb[b].push(a);
        }
    }
    for l in &mut nb {
        l.sort_unstable();
    }
    Ok(nb)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    /// Rows of `P` for the node's links.
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub a: DMatrix<f64>,
    /// Accumulated multipliers of the `Q` consensus constraints with all neighbors.
    pub gamma: DMatrix<f64>,
    /// Accumulated multipliers of the `A` consensus constraints.
    pub lambda: DMatrix<f64>,
}

/// What a node sends to each neighbor after its local update.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub from: usize,
    pub q: DMatrix<f64>,
    pub a: DMatrix<f64>,
}

impl Message {
    /// Serialized payload size in bytes (f64 entries).
    pub fn byte_len(&self) -> usize {
        8 * (self.q.len() + self.a.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmConfig {
    pub rho_rank: usize,
    pub penalty: f64,
    pub rounds: usize,
    pub tol_consensus: f64,
    pub lambda_star: f64,
    pub lambda_one: f64,
    pub inner_steps: usize,
    /// Residual balancing of the penalty.
    pub adapt_penalty: bool,
}

impl AdmmConfig {
    pub fn new(rho_rank: usize, lambda_star: f64, lambda_one: f64) -> Self {
        Self { rho_rank, penalty: 1.0, rounds: 500, tol_consensus: 1e-4, lambda_star, lambda_one, inner_steps: 5, adapt_penalty: true }
    }

    fn validate(&self) -> Result<()> {
        if self.rho_rank == 0 || !(self.penalty > 0.0) || !(self.lambda_star > 0.0) || !(self.lambda_one > 0.0) {
            return Err(invalid("ADMM needs rho >= 1 and positive penalty and weights"));
        }
        Ok(())
    }
}

/// Per-node slice of the problem data.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalData {
    pub y: DMatrix<f64>,
    pub mask: SamplingMask,
    pub routing: RoutingOperator,
    lip_a: f64,
}

/// Splits the problem rows by node.
pub fn local_data(problem: &BatchProblem, partition: &NodePartition) -> Vec<LocalData> {
    partition
        .node_links
        .iter()
        .map(|links| {
            let routing = problem.routing.restrict_rows(links);
            LocalData {
                y: linalg::select_rows(&problem.y, links),
                mask: problem.mask.restrict_rows(links),
                lip_a: 2.0 * routing.spectral_norm_sq(),
                routing,
            }
        })
        .collect()
}

/// Every node starts from the common seeded factors.
pub fn initial_states(problem: &BatchProblem, partition: &NodePartition, rho: usize, seed: u64) -> Vec<NodeState> {
    let (p, q, a) = initial_factors(problem.links(), problem.horizon(), problem.flows(), rho, seed);
    partition
        .node_links
        .iter()
        .map(|links| NodeState {
            p: linalg::select_rows(&p, links),
            q: q.clone(),
            a: a.clone(),
            gamma: DMatrix::zeros(q.nrows(), rho),
            lambda: DMatrix::zeros(a.nrows(), a.ncols()),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub consensus_residual: f64,
    /// Objective at the stacked `P` and node-averaged `Q`, `A`.
    pub objective: f64,
    pub penalty: f64,
    /// Bytes sent by each node this round.
    pub bytes_sent: Vec<usize>,
}

/// Local `(P, Q, A)` update of node `n` reading only the previous-round snapshot.
fn local_update(n: usize, prev: &[NodeState], data: &LocalData, partition: &NodePartition, config: &AdmmConfig, penalty: f64) -> NodeState {
    let me = &prev[n];
    let nodes = partition.node_count() as f64;
    let nbrs = &partition.neighbors[n];
    let deg = nbrs.len() as f64;
    let ra = data.routing.apply(&me.a);
    let p = update_p(&data.y, &data.mask, &ra, &me.q, config.lambda_star / 2.0);

    // Q rows: (2 P'P + λ*/N + 2 c d) q = 2 P' z - γ + c Σ_m (q_n + q_m)
    let mut pull_q = me.q.clone() * deg;
    for &m in nbrs {
        pull_q += &prev[m].q;
    }
    let rho = me.q.ncols();
    let mut q = DMatrix::zeros(me.q.nrows(), rho);
    for t in 0..me.q.nrows() {
        let rows = data.mask.column_indices(t);
        let extra = (pull_q.row(t) * penalty - me.gamma.row(t)).transpose() / 2.0;
        let ridge = config.lambda_star / (2.0 * nodes) + penalty * deg;
        let row = ridge_rows(&p, &rows, |i| data.y[(i, t)] - ra[(i, t)], ridge, Some(&extra));
        q.set_row(t, &row.transpose());
    }

    // A: prox-gradient steps on the local augmented problem.
    let x = &p * q.transpose();
    let mut pull_a = &me.a * deg;
    for &m in nbrs {
        pull_a += &prev[m].a;
    }
    let lip = data.lip_a + 2.0 * penalty * deg;
    let mut a = me.a.clone();
    if lip > 0.0 {
        let step = 1.0 / lip;
        let tau = config.lambda_one / nodes * step;
        for _ in 0..config.inner_steps {
            let mut r = &data.y - &x - data.routing.apply(&a);
            data.mask.apply_in_place(&mut r);
            let g = data.routing.adjoint(&r) * -2.0 + &me.lambda + (&a * (2.0 * deg) - &pull_a) * penalty;
            a = (&a - g * step).map(|v| shrink(v, tau));
        }
    }
    NodeState { p, q, a, gamma: me.gamma.clone(), lambda: me.lambda.clone() }
}

/// `max` over neighboring pairs of `||Q_n - Q_m||_F + ||A_n - A_m||_F`.
pub fn consensus_residual(states: &[NodeState], partition: &NodePartition) -> f64 {
    let mut worst = 0.0f64;
    for (n, nb) in partition.neighbors.iter().enumerate() {
        for &m in nb {
            worst = worst.max((&states[n].q - &states[m].q).norm() + (&states[n].a - &states[m].a).norm());
        }
    }
    worst
}

/// Stacked `P` and node-averaged `Q`, `A`.
pub fn consensus_point(states: &[NodeState], partition: &NodePartition, link_count: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let rho = states[0].q.ncols();
    let mut p = DMatrix::zeros(link_count, rho);
    for (links, s) in partition.node_links.iter().zip(states) {
        for (k, &l) in links.iter().enumerate() {
            p.set_row(l, &s.p.row(k));
        }
    }
    let n = states.len() as f64;
    let q = states.iter().fold(DMatrix::zeros(states[0].q.nrows(), rho), |acc, s| acc + &s.q) / n;
    let a = states.iter().fold(DMatrix::zeros(states[0].a.nrows(), states[0].a.ncols()), |acc, s| acc + &s.a) / n;
    (p, q, a)
}

/// One synchronous round processing nodes in `order`; returns the new states,
/// the messages exchanged, and the updated penalty.
pub fn admm_round_ordered(
    states: &[NodeState],
    data: &[LocalData],
    partition: &NodePartition,
    config: &AdmmConfig,
    penalty: f64,
    order: &[usize],
) -> Result<(Vec<NodeState>, Vec<Message>, f64)> {
    let n = partition.node_count();
    if states.len() != n || data.len() != n || order.len() != n {
        return Err(mismatch("states, data and order must cover every node"));
    }
    let mut updated: Vec<Option<NodeState>> = vec![None; n];
    for &i in order {
        if i >= n || updated[i].is_some() {
            return Err(invalid("update order must be a permutation of the nodes"));
        }
        updated[i] = Some(local_update(i, states, &data[i], partition, config, penalty));
    }
    let mut next: Vec<NodeState> = updated.into_iter().map(|s| s.expect("every node updated")).collect();
    let messages: Vec<Message> = (0..n).map(|i| Message { from: i, q: next[i].q.clone(), a: next[i].a.clone() }).collect();

    // Dual ascent with the freshly received neighbor values.
    for i in 0..n {
        let mut dq = DMatrix::zeros(next[i].q.nrows(), next[i].q.ncols());
        let mut da = DMatrix::zeros(next[i].a.nrows(), next[i].a.ncols());
        for &m in &partition.neighbors[i] {
            dq += &next[i].q - &messages[m].q;
            da += &next[i].a - &messages[m].a;
        }
        next[i].gamma += dq * penalty;
        next[i].lambda += da * penalty;
    }

    let mut new_penalty = penalty;
    if config.adapt_penalty && n > 1 {
        let mut primal = 0.0;
        for (i, nb) in partition.neighbors.iter().enumerate() {
            for &m in nb {
                primal += (&next[i].q - &next[m].q).norm_squared() + (&next[i].a - &next[m].a).norm_squared();
            }
        }
        let dual: f64 = (0..n)
            .map(|i| (&next[i].q - &states[i].q).norm_squared() + (&next[i].a - &states[i].a).norm_squared())
            .sum::<f64>()
            .sqrt()
            * penalty;
        let primal = primal.sqrt();
        if primal > 10.0 * dual {
            new_penalty *= 2.0;
        } else if dual > 10.0 * primal {
            new_penalty /= 2.0;
        }
    }
    Ok((next, messages, new_penalty))
}

/// One synchronous round in natural node order.
pub fn admm_round(
    states: &[NodeState],
    data: &[LocalData],
    partition: &NodePartition,
    config: &AdmmConfig,
    penalty: f64,
) -> Result<(Vec<NodeState>, Vec<Message>, f64)> {
    let order: Vec<usize> = (0..partition.node_count()).collect();
    admm_round_ordered(states, data, partition, config, penalty, &order)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmRun {
    pub states: Vec<NodeState>,
    pub trace: Vec<RoundReport>,
    pub converged: bool,
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub objective: f64,
}

/// Runs rounds until consensus residual and objective both settle.
pub fn run_admm(problem: &BatchProblem, partition: &NodePartition, config: &AdmmConfig, seed: u64) -> Result<AdmmRun> {
    config.validate()?;
    let data = local_data(problem, partition);
    let mut states = initial_states(problem, partition, config.rho_rank, seed);
    let mut penalty = config.penalty;
    let mut trace: Vec<RoundReport> = Vec::with_capacity(config.rounds);
    let mut converged = false;
    for _ in 0..config.rounds {
        let (next, messages, new_penalty) = admm_round(&states, &data, partition, config, penalty)?;
        let bytes_sent = (0..partition.node_count())
            .map(|i| partition.neighbors[i].len() * messages[i].byte_len())
            .collect();
        states = next;
        let (p, q, a) = consensus_point(&states, partition, problem.links());
        let objective = factorized_objective(problem, &p, &q, &a);
        let residual = if partition.node_count() > 1 { consensus_residual(&states, partition) } else { 0.0 };
        let stalled = trace
            .last()
            .map_or(false, |r| (r.objective - objective).abs() <= 1e-9 * objective.abs().max(f64::MIN_POSITIVE));
        trace.push(RoundReport { consensus_residual: residual, objective, penalty, bytes_sent });
        penalty = new_penalty;
        if residual < config.tol_consensus && stalled {
            converged = true;
            break;
        }
    }
    let (p, q, a) = consensus_point(&states, partition, problem.links());
    let objective = factorized_objective(problem, &p, &q, &a);
    Ok(AdmmRun { states, trace, converged, p, q, a, objective })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn desk(seed: u64) -> BatchProblem {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (l, t, f) = (8, 12, 10);
        let u = DMatrix::from_fn(l, 2, |_, _| r.random::<f64>());
        let v = DMatrix::from_fn(t, 2, |_, _| r.random::<f64>());
        let routing = DMatrix::from_fn(l, f, |i, j| if j < l { if i == j { 1.0 } else { 0.0 } } else if r.random::<f64>() < 0.3 { 1.0 } else { 0.0 });
        let mut a = DMatrix::zeros(f, t);
        a[(9, 3)] = 2.0;
        a[(2, 7)] = -1.5;
        let y = &u * v.transpose() + &routing * &a + DMatrix::from_fn(l, t, |_, _| 0.01 * r.sample::<f64, _>(StandardNormal));
        BatchProblem::new(y, SamplingMask::full(l, t), RoutingOperator::new(routing), 0.5, 0.3).unwrap()
    }

    #[test]
    fn zero_data_gives_zero_factors() {
        let p = BatchProblem::new(DMatrix::zeros(4, 5), SamplingMask::full(4, 5), RoutingOperator::new(DMatrix::identity(4, 4)), 1.0, 1.0).unwrap();
        let sol = factorized_centralized(&p, &FactorizedOptions::new(2, 1)).unwrap();
        assert_eq!(sol.p.amax(), 0.0);
        assert_eq!(sol.q.amax(), 0.0);
        assert_eq!(sol.a.amax(), 0.0);
    }

    #[test]
    fn factorized_objective_is_monotone() {
        let p = desk(2);
        let sol = factorized_centralized(&p, &FactorizedOptions::new(3, 4)).unwrap();
        assert!(sol.trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        assert!(sol.converged);
        let (gp, gq, ga) = stationarity_residuals(&p, &sol.p, &sol.q, &sol.a);
        assert!(gp < 1e-4 && gq < 1e-4 && ga < 1e-4, "{gp} {gq} {ga}");
    }

    #[test]
    fn balanced_factors_attain_nuclear_norm() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let x = DMatrix::from_fn(6, 3, |_, _| r.random::<f64>()) * DMatrix::from_fn(3, 9, |_, _| r.random::<f64>() - 0.5);
            let svd = x.clone().svd(true, true);
            let root = svd.singular_values.map(f64::sqrt);
            let p = svd.u.unwrap() * DMatrix::from_diagonal(&root);
            let q = svd.v_t.unwrap().transpose() * DMatrix::from_diagonal(&root);
            let nuc = linalg::nuclear_norm(&x);
            assert!((0.5 * (p.norm_squared() + q.norm_squared()) - nuc).abs() < 1e-10);
            let skew = &p * 2.0;
            let qs = &q * 0.5;
            assert!(0.5 * (skew.norm_squared() + qs.norm_squared()) >= nuc - 1e-10);
        }
    }

    #[test]
    fn single_node_round_is_one_sweep() {
        let p = desk(3);
        let part = NodePartition::contiguous(p.links(), ring_graph(1)).unwrap();
        let mut cfg = AdmmConfig::new(2, p.lambda_star, p.lambda_one);
        cfg.adapt_penalty = false;
        let data = local_data(&p, &part);
        let states = initial_states(&p, &part, 2, 7);
        let (next, _, _) = admm_round(&states, &data, &part, &cfg, 1.0).unwrap();
        let (_, q0, a0) = initial_factors(p.links(), p.horizon(), p.flows(), 2, 7);
        let (p1, q1, a1) = factorized_sweep(&p, &q0, &a0, 5);
        assert!((&next[0].p - p1).amax() < 1e-12);
        assert!((&next[0].q - q1).amax() < 1e-12);
        assert!((&next[0].a - a1).amax() < 1e-12);
    }

    #[test]
    fn node_order_does_not_matter() {
        let p = desk(4);
        let part = NodePartition::contiguous(p.links(), ring_graph(4)).unwrap();
        let cfg = AdmmConfig::new(2, p.lambda_star, p.lambda_one);
        let data = local_data(&p, &part);
        let mut s1 = initial_states(&p, &part, 2, 1);
        let mut s2 = s1.clone();
        let (mut c1, mut c2) = (1.0, 1.0);
        for _ in 0..5 {
            let r1 = admm_round_ordered(&s1, &data, &part, &cfg, c1, &[0, 1, 2, 3]).unwrap();
            let r2 = admm_round_ordered(&s2, &data, &part, &cfg, c2, &[2, 0, 3, 1]).unwrap();
            s1 = r1.0;
            s2 = r2.0;
            c1 = r1.2;
            c2 = r2.2;
        }
        assert_eq!(s1, s2);
    }

    #[test]
    fn symmetric_halves_stay_in_agreement() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let half = DMatrix::from_fn(3, 6, |_, _| r.random::<f64>());
        let mut y = DMatrix::zeros(6, 6);
        y.rows_mut(0, 3).copy_from(&half);
        y.rows_mut(3, 3).copy_from(&half);
        let routing = DMatrix::identity(6, 6);
        let p = BatchProblem::new(y, SamplingMask::full(6, 6), RoutingOperator::new(routing), 0.5, 0.3).unwrap();
        let part = NodePartition::contiguous(6, ring_graph(2)).unwrap();
        let cfg = AdmmConfig::new(2, 0.5, 0.3);
        let data = local_data(&p, &part);
        let mut states = initial_states(&p, &part, 2, 3);
        // symmetric start: both nodes hold the same P rows
        let shared = states[0].p.clone();
        states[1].p = shared;
        let mut c = 1.0;
        for _ in 0..5 {
            let (next, _, nc) = admm_round(&states, &data, &part, &cfg, c).unwrap();
            assert_eq!(next[0].q, next[1].q);
            states = next;
            c = nc;
        }
    }

    #[test]
    fn consensus_residual_examples() {
        let p = desk(7);
        let part = NodePartition::contiguous(p.links(), ring_graph(4)).unwrap();
        let mut states = initial_states(&p, &part, 2, 1);
        assert_eq!(consensus_residual(&states, &part), 0.0);
        states[2].q[(0, 0)] += 0.5;
        assert!((consensus_residual(&states, &part) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn disconnected_graph_rejected() {
        let nb = vec![vec![1], vec![0], vec![3], vec![2]];
        assert_eq!(NodePartition::contiguous(8, nb), Err(Error::Disconnected));
        assert!(graph_from_edges(3, &[(0, 0)]).is_err());
        assert_eq!(graph_from_edges(3, &[(0, 1), (1, 2)]).unwrap(), vec![vec![1], vec![0, 2], vec![1]]);
    }
}
