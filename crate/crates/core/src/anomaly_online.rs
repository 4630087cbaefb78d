//! Streaming anomalography with an exponentially weighted subspace.
//!
//! At slot `t` the estimator minimizes
//!
//! ```text
//! sum_{τ<=t} β^{t-τ} [ ||P_Ωτ(y_τ - P q_τ - R_τ a_τ)||^2 + λ*/2 ||q_τ||^2 + λ1 ||a_τ||_1 ] + λ*/2 ||P||^2
//! ```
//!
//! one slot at a time: `(q_t, a_t)` are fitted with `P` fixed, then every row
//! of `P` is refreshed by discounted recursive least squares.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::anomaly_batch::RoutingOperator;
use crate::error::{invalid, mismatch, Result};
use crate::linalg;
use crate::metrics::{support_score, SupportScore};
use crate::solvers::{accelerated_prox_gradient, shrink, ApgOptions, ProxProblem, StopRule};

const DIAG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineConfig {
    pub rho: usize,
    pub beta: f64,
    pub lambda_star: f64,
    pub lambda_one: f64,
    pub inner_iters: usize,
    pub inner_tol: f64,
}

impl OnlineConfig {
    pub fn new(rho: usize, beta: f64, lambda_star: f64, lambda_one: f64) -> Self {
        Self { rho, beta, lambda_star, lambda_one, inner_iters: 50, inner_tol: 1e-6 }
    }

    fn validate(&self) -> Result<()> {
        if self.rho == 0 {
            return Err(invalid("subspace width must be at least one"));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(invalid("forgetting factor must lie in (0, 1]"));
        }
        if !(self.lambda_star > 0.0 && self.lambda_one > 0.0) {
            return Err(invalid("regularization weights must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineState {
    /// `L x ρ` subspace.
    pub p: DMatrix<f64>,
    /// Per-row discounted `sum ω q q'`.
    pub h: Vec<DMatrix<f64>>,
    /// Per-row discounted `sum ω z q` with `z = y - R a`.
    pub g: Vec<DVector<f64>>,
    /// Per-row discounted `sum ω z^2`.
    pub s: Vec<f64>,
    /// Discounted `sum λ*/2 ||q||^2 + λ1 ||a||_1`.
    pub penalty_acc: f64,
    /// `sum_k β^k` over processed slots.
    pub weight_sum: f64,
    pub last_q: DVector<f64>,
    pub t: usize,
    pub config: OnlineConfig,
}

impl OnlineState {
    pub fn new(p: DMatrix<f64>, config: OnlineConfig) -> Result<Self> {
        config.validate()?;
        if p.ncols() != config.rho {
            return Err(mismatch("initial subspace width must equal rho"));
        }
        let (l, rho) = p.shape();
        Ok(Self {
            p,
            h: vec![DMatrix::zeros(rho, rho); l],
            g: vec![DVector::zeros(rho); l],
            s: vec![0.0; l],
            penalty_acc: 0.0,
            weight_sum: 0.0,
            last_q: DVector::zeros(rho),
            t: 0,
            config,
        })
    }

    /// `P = U_ρ diag(sqrt(σ))` from the SVD of zero-filled warm-up slots.
    pub fn from_warmup(y: &DMatrix<f64>, config: OnlineConfig) -> Result<Self> {
        config.validate()?;
        let rho = config.rho;
        let (l, t) = y.shape();
        if rho > l.min(t) {
            return Err(invalid("warm-up block needs at least rho slots and links"));
        }
        let svd = y.clone().svd(true, false);
        let u = svd.u.expect("U");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let mut p = DMatrix::zeros(l, rho);
        for (k, &j) in order.iter().take(rho).enumerate() {
            p.set_column(k, &(u.column(j) * svd.singular_values[j].sqrt()));
        }
        Self::new(p, config)
    }

    pub fn links(&self) -> usize {
        self.p.nrows()
    }

    /// Running objective at subspace `p` using the accumulated statistics.
    pub fn running_cost(&self, p: &DMatrix<f64>) -> f64 {
        let mut fit = 0.0;
        for l in 0..self.links() {
            let row = p.row(l).transpose();
            fit += self.s[l] - 2.0 * row.dot(&self.g[l]) + (row.transpose() * &self.h[l] * &row)[(0, 0)];
        }
        fit + self.penalty_acc + self.config.lambda_star / 2.0 * p.norm_squared()
    }

    /// Upper bound on the norms of the accumulated second moments.
    pub fn stats_norm(&self) -> f64 {
        self.h.iter().map(|h| h.norm()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotEstimate {
    pub q: DVector<f64>,
    pub a: DVector<f64>,
    pub x_hat: DVector<f64>,
    /// Slot objective after every inner alternation.
    pub inner_trace: Vec<f64>,
    /// No observed entry: `q` carried over, `a = 0`, subspace untouched.
    pub prediction_only: bool,
}

struct SlotLasso<'a> {
    routing: &'a RoutingOperator,
    target: DVector<f64>,
    l1: f64,
}

impl ProxProblem for SlotLasso<'_> {
    type Point = DVector<f64>;
    fn smooth_value(&self, a: &DVector<f64>) -> f64 {
        (&self.target - self.routing.apply_vec(a)).norm_squared()
    }
    fn smooth_gradient(&self, a: &DVector<f64>) -> DVector<f64> {
        self.routing.adjoint_vec(&(self.routing.apply_vec(a) - &self.target)) * 2.0
    }
    fn penalty_value(&self, a: &DVector<f64>) -> f64 {
        self.l1 * a.lp_norm(1)
    }
    fn prox(&self, v: &DVector<f64>, step: f64) -> DVector<f64> {
        v.map(|x| shrink(x, self.l1 * step))
    }
}

fn slot_objective(p_obs: &DMatrix<f64>, y_obs: &DVector<f64>, r_obs: &RoutingOperator, q: &DVector<f64>, a: &DVector<f64>, cfg: &OnlineConfig) -> f64 {
    (y_obs - p_obs * q - r_obs.apply_vec(a)).norm_squared() + cfg.lambda_star / 2.0 * q.norm_squared() + cfg.lambda_one * a.lp_norm(1)
}

fn ridge_solve(h: &DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    let mut m = h.clone();
    for i in 0..m.nrows() {
        if m[(i, i)] < DIAG_FLOOR {
            m[(i, i)] = DIAG_FLOOR;
        }
    }
    match m.clone().cholesky() {
        Some(c) => c.solve(g),
        None => m.lu().solve(g).unwrap_or_else(|| DVector::zeros(g.len())),
    }
}

/// Processes one slot. `y` is only read on observed links.
pub fn online_step(state: &OnlineState, y: &DVector<f64>, observed: &[usize], routing: &RoutingOperator) -> Result<(SlotEstimate, OnlineState)> {
    let cfg = &state.config;
    let (l, rho) = state.p.shape();
    if y.len() != l || routing.links() != l {
        return Err(mismatch("slot vector and routing must have one row per link"));
    }
    crate::netmodel::selection_matrix(observed, l)?;
    let f = routing.flows();
    let mut next = state.clone();
    let beta = cfg.beta;
    for l in 0..l {
        next.h[l] *= beta;
        next.g[l] *= beta;
        next.s[l] *= beta;
    }
    next.penalty_acc *= beta;
    next.weight_sum = beta * state.weight_sum + 1.0;
    next.t = state.t + 1;

    if observed.is_empty() {
        let q = state.last_q.clone();
        let x_hat = &state.p * &q;
        return Ok((SlotEstimate { q, a: DVector::zeros(f), x_hat, inner_trace: Vec::new(), prediction_only: true }, next));
    }

    let p_obs = linalg::select_rows(&state.p, observed);
    let y_obs = linalg::select_entries(y, observed);
    let r_obs = routing.restrict_rows(observed);
    let lip = 2.0 * r_obs.spectral_norm_sq() * 1.0001;
    let ridge = DMatrix::identity(rho, rho) * (cfg.lambda_star / 2.0) + p_obs.transpose() * &p_obs;
    let ridge_chol = linalg::cholesky(&ridge, "slot ridge system")?;
    let tol_scale = y_obs.norm().max(1.0);

    let mut a = DVector::zeros(f);
    let mut q = ridge_chol.solve(&(p_obs.transpose() * &y_obs));
    let mut trace = vec![slot_objective(&p_obs, &y_obs, &r_obs, &q, &a, cfg)];
    for _ in 0..cfg.inner_iters {
        if lip > 0.0 {
            let problem = SlotLasso { routing: &r_obs, target: &y_obs - &p_obs * &q, l1: cfg.lambda_one };
            let opts = ApgOptions { tol: 1e-7 * tol_scale, max_iters: 5000, rule: StopRule::Residual };
            a = accelerated_prox_gradient(&problem, lip, a, &opts)?.0;
        }
        q = ridge_chol.solve(&(p_obs.transpose() * (&y_obs - r_obs.apply_vec(&a))));
        let now = slot_objective(&p_obs, &y_obs, &r_obs, &q, &a, cfg);
        let prev = *trace.last().expect("nonempty");
        trace.push(now);
        if (prev - now).abs() <= cfg.inner_tol * prev.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }

    let ra = r_obs.apply_vec(&a);
    for (k, &row) in observed.iter().enumerate() {
        let z = y_obs[k] - ra[k];
        next.h[row] += &q * q.transpose();
        next.g[row] += &q * z;
        next.s[row] += z * z;
    }
    next.penalty_acc += cfg.lambda_star / 2.0 * q.norm_squared() + cfg.lambda_one * a.lp_norm(1);
    let reg = DMatrix::identity(rho, rho) * (cfg.lambda_star / 2.0);
    for row in 0..l {
        let new_row = ridge_solve(&(&next.h[row] + &reg), &next.g[row]);
        next.p.set_row(row, &new_row.transpose());
    }
    next.last_q = q.clone();
    let x_hat = &state.p * &q;
    Ok((SlotEstimate { q, a, x_hat, inner_trace: trace, prediction_only: false }, next))
}

/// Piecewise-constant routing: entry `(start, R)` applies from slot `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingSchedule {
    pub segments: Vec<(usize, RoutingOperator)>,
}

impl RoutingSchedule {
    pub fn fixed(routing: RoutingOperator) -> Self {
        Self { segments: vec![(0, routing)] }
    }

    pub fn new(segments: Vec<(usize, RoutingOperator)>) -> Result<Self> {
        if segments.is_empty() || segments[0].0 != 0 {
            return Err(invalid("routing schedule must start at slot 0"));
        }
        let shape = (segments[0].1.links(), segments[0].1.flows());
        for w in segments.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(invalid("routing segments must start at increasing slots"));
            }
            if (w[1].1.links(), w[1].1.flows()) != shape {
                return Err(mismatch("routing matrices change dimension across the schedule"));
            }
            let changed = (0..shape.0).filter(|&i| w[1].1.dense.row(i) != w[0].1.dense.row(i)).count();
            if changed as f64 > 0.1 * shape.0 as f64 {
                log::warn!("{changed} of {} routing rows change at slot {}", shape.0, w[1].0);
            }
        }
        Ok(Self { segments })
    }

    pub fn at(&self, t: usize) -> &RoutingOperator {
        let idx = self.segments.partition_point(|(start, _)| *start <= t) - 1;
        &self.segments[idx].1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub t: usize,
    pub support: Vec<usize>,
    pub micros: u128,
    pub prediction_only: bool,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamResult {
    pub x_hat: DMatrix<f64>,
    pub a_hat: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub records: Vec<SlotRecord>,
    pub state: OnlineState,
    /// Subspace after every slot when requested.
    pub subspaces: Vec<DMatrix<f64>>,
}

/// Runs [`online_step`] over every column of `y`; `observed[t]` lists the
/// measured links of slot `t`.
pub fn run_stream(
    initial: OnlineState,
    y: &DMatrix<f64>,
    observed: &[Vec<usize>],
    schedule: &RoutingSchedule,
    truth: Option<&DMatrix<f64>>,
    keep_subspaces: bool,
) -> Result<StreamResult> {
    let (l, t) = y.shape();
    if observed.len() != t {
        return Err(mismatch("need one observed-link list per slot"));
    }
    if l != initial.links() {
        return Err(mismatch("stream rows must match the subspace"));
    }
    let f = schedule.at(0).flows();
    if let Some(tr) = truth {
        if tr.shape() != (f, t) {
            return Err(mismatch("truth must be F x T"));
        }
    }
    let mut state = initial;
    let rho = state.p.ncols();
    let mut x_hat = DMatrix::zeros(l, t);
    let mut a_hat = DMatrix::zeros(f, t);
    let mut q_all = DMatrix::zeros(t, rho);
    let mut records = Vec::with_capacity(t);
    let mut subspaces = Vec::new();
    for k in 0..t {
        let start = Instant::now();
        let (est, next) = online_step(&state, &y.column(k).into_owned(), &observed[k], schedule.at(k))?;
        let micros = start.elapsed().as_micros();
        let support: Vec<usize> = est.a.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i).collect();
        let (precision, recall) = match truth {
            Some(tr) => {
                let s: SupportScore = support_score(&DMatrix::from_column_slice(f, 1, est.a.as_slice()), &tr.columns(k, 1).into_owned(), 0.0)?;
                (Some(s.precision), Some(s.recall))
            }
            None => (None, None),
        };
        x_hat.set_column(k, &est.x_hat);
        a_hat.set_column(k, &est.a);
        q_all.set_row(k, &est.q.transpose());
        records.push(SlotRecord { t: k, support, micros, prediction_only: est.prediction_only, precision, recall });
        state = next;
        if keep_subspaces {
            subspaces.push(state.p.clone());
        }
    }
    Ok(StreamResult { x_hat, a_hat, q: q_all, records, state, subspaces })
}
