//! Centralized anomalography.
//!
//! Link observations `Y = X + R A + E` are split into a low-rank nominal part
//! `X` and sparse flow anomalies `A` by minimizing
//!
//! ```text
//! ||P_Ω(Y - X - R A)||_F^2 + λ* ||X||_* + λ1 ||A||_1
//! ```
//!
//! with an accelerated proximal gradient method. The module also provides
//! the PCA subspace baseline, spatial anomography, and the optimality
//! certificate for factorized solutions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::linalg;
use crate::netmodel::{RoutingMatrix, SamplingMask, SparseBinary};
use crate::solvers::{accelerated_prox_gradient, shrink, svt_unchecked, ApgOptions, Iterate, Pair, ProxProblem, SolverReport, StopRule};

pub use crate::metrics::{auc, roc_curve, RocPoint};

/// `R` as a linear map, using a sparse representation when it is 0/1.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingOperator {
    pub dense: DMatrix<f64>,
    sparse: Option<SparseBinary>,
}

impl RoutingOperator {
    pub fn new(dense: DMatrix<f64>) -> Self {
        let binary = dense.iter().all(|&v| v == 0.0 || v == 1.0);
        let sparse = binary.then(|| SparseBinary::from_dense(&dense));
        Self { dense, sparse }
    }

    pub fn links(&self) -> usize {
        self.dense.nrows()
    }

    pub fn flows(&self) -> usize {
        self.dense.ncols()
    }

    /// `R a`.
    pub fn apply(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.sparse {
            Some(s) => s.mul(a),
            None => &self.dense * a,
        }
    }

    pub fn apply_vec(&self, a: &DVector<f64>) -> DVector<f64> {
        match &self.sparse {
            Some(s) => s.mul_vec(a),
            None => &self.dense * a,
        }
    }

    /// `R' m`.
    pub fn adjoint(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.sparse {
            Some(s) => s.tr_mul(m),
            None => self.dense.tr_mul(m),
        }
    }

    pub fn adjoint_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.sparse {
            Some(s) => s.tr_mul_vec(v),
            None => self.dense.tr_mul(v),
        }
    }

    /// `sigma_max(R)^2`, exact.
    pub fn spectral_norm_sq(&self) -> f64 {
        linalg::spectral_norm(&self.dense).powi(2)
    }

    /// Operator restricted to the given link rows.
    pub fn restrict_rows(&self, rows: &[usize]) -> Self {
        Self::new(linalg::select_rows(&self.dense, rows))
    }
}

impl From<&RoutingMatrix> for RoutingOperator {
    fn from(r: &RoutingMatrix) -> Self {
        Self::new(r.entries.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchProblem {
    /// Observations, zero outside the mask.
    pub y: DMatrix<f64>,
    pub mask: SamplingMask,
    pub routing: RoutingOperator,
    pub lambda_star: f64,
    pub lambda_one: f64,
}

impl BatchProblem {
    pub fn new(y: DMatrix<f64>, mask: SamplingMask, routing: RoutingOperator, lambda_star: f64, lambda_one: f64) -> Result<Self> {
        if mask.shape() != y.shape() {
            return Err(mismatch("mask and observation shapes differ"));
        }
        if routing.links() != y.nrows() {
            return Err(mismatch("routing rows must equal the number of links"));
        }
        if !(lambda_star > 0.0 && lambda_one > 0.0) {
            return Err(invalid("regularization weights must be positive"));
        }
        let y = mask.apply(&y);
        Ok(Self { y, mask, routing, lambda_star, lambda_one })
    }

    pub fn links(&self) -> usize {
        self.y.nrows()
    }

    pub fn horizon(&self) -> usize {
        self.y.ncols()
    }

    pub fn flows(&self) -> usize {
        self.routing.flows()
    }

    /// `P_Ω(Y - X - R A)`.
    pub fn residual(&self, x: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
        let mut r = &self.y - x - self.routing.apply(a);
        self.mask.apply_in_place(&mut r);
        r
    }

    pub fn objective(&self, x: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
        self.residual(x, a).norm_squared() + self.lambda_star * linalg::nuclear_norm(x) + self.lambda_one * linalg::l1_norm(a)
    }

    /// `2 (1 + sigma_max(R)^2)`, the Lipschitz constant of the joint gradient.
    pub fn lipschitz(&self) -> f64 {
        2.0 * (1.0 + self.routing.spectral_norm_sq())
    }

    /// Whether `(0, 0)` satisfies the optimality conditions, i.e.
    /// `λ* >= 2 ||P_Ω(Y)||` and `λ1 >= 2 ||R' P_Ω(Y)||_∞`.
    pub fn zero_is_optimal(&self) -> bool {
        self.lambda_star >= 2.0 * linalg::spectral_norm(&self.y) && self.lambda_one >= 2.0 * self.routing.adjoint(&self.y).amax()
    }
}

impl ProxProblem for BatchProblem {
    type Point = Pair<DMatrix<f64>, DMatrix<f64>>;

    fn smooth_value(&self, p: &Self::Point) -> f64 {
        self.residual(&p.0, &p.1).norm_squared()
    }

    fn smooth_gradient(&self, p: &Self::Point) -> Self::Point {
        let g = self.residual(&p.0, &p.1) * -2.0;
        let ga = self.routing.adjoint(&g);
        Pair(g, ga)
    }

    fn penalty_value(&self, p: &Self::Point) -> f64 {
        self.lambda_star * linalg::nuclear_norm(&p.0) + self.lambda_one * linalg::l1_norm(&p.1)
    }

    fn prox(&self, v: &Self::Point, step: f64) -> Self::Point {
        let tau = self.lambda_one * step;
        Pair(svt_unchecked(&v.0, self.lambda_star * step), v.1.map(|x| shrink(x, tau)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyMap {
    pub x_hat: DMatrix<f64>,
    pub a_hat: DMatrix<f64>,
    pub objective: f64,
    pub report: SolverReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOptions {
    /// Prox-gradient fixed-point residual tolerance.
    pub tol: f64,
    pub max_iters: usize,
    pub init: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iters: 5000, init: None }
    }
}

pub fn solve_batch(problem: &BatchProblem, options: &BatchOptions) -> Result<AnomalyMap> {
    let (l, t, f) = (problem.links(), problem.horizon(), problem.flows());
    let init = match &options.init {
        Some((x, a)) => {
            if x.shape() != (l, t) || a.shape() != (f, t) {
                return Err(mismatch("initial point has the wrong shape"));
            }
            Pair(x.clone(), a.clone())
        }
        None => Pair(DMatrix::zeros(l, t), DMatrix::zeros(f, t)),
    };
    let apg = ApgOptions { tol: options.tol, max_iters: options.max_iters, rule: StopRule::Residual };
    let (sol, report) = accelerated_prox_gradient(problem, problem.lipschitz(), init, &apg)?;
    if !report.converged {
        log::warn!("batch solver stopped after {} iterations at residual {:.3e}", report.iterations, report.kkt_residual);
    }
    let Pair(x_hat, a_hat) = sol;
    let objective = problem.objective(&x_hat, &a_hat);
    Ok(AnomalyMap { x_hat, a_hat, objective, report })
}

/// Universal-threshold defaults `(λ*, λ1)`.
///
/// The noise level is the median absolute deviation of the observed entries
/// of `Y` after removing their best rank-one approximation.
pub fn default_lambdas(y: &DMatrix<f64>, mask: &SamplingMask, flows: usize) -> Result<(f64, f64)> {
    if mask.shape() != y.shape() || mask.count() == 0 {
        return Err(mismatch("mask must match Y and observe at least one entry"));
    }
    let (l, t) = y.shape();
    let masked = mask.apply(y);
    let svd = masked.clone().svd(true, true);
    let k = svd.singular_values.imax();
    let u = svd.u.as_ref().expect("U");
    let vt = svd.v_t.as_ref().expect("V'");
    let fit = u.column(k) * vt.row(k) * svd.singular_values[k];
    let mut resid: Vec<f64> = Vec::with_capacity(mask.count());
    for c in 0..t {
        for r in 0..l {
            if mask.contains(r, c) {
                resid.push(masked[(r, c)] - fit[(r, c)]);
            }
        }
    }
    let med = median(&mut resid.clone());
    let mut dev: Vec<f64> = resid.iter().map(|v| (v - med).abs()).collect();
    let sigma = 1.4826 * median(&mut dev);
    let sigma = if sigma > 0.0 { sigma } else { f64::EPSILON };
    let ls = sigma * ((l as f64).sqrt() + (t as f64).sqrt());
    let l1 = 2.0 * sigma * (2.0 * ((flows * t) as f64).ln()).sqrt();
    Ok((ls, l1))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

/// Projection onto the complement of the top-`r` left singular subspace of `y`.
pub fn anomalous_projector(y: &DMatrix<f64>, r: usize) -> Result<DMatrix<f64>> {
    let (l, t) = y.shape();
    if r >= l.min(t) {
        return Err(invalid("PCA rank must be below min(L, T)"));
    }
    let svd = y.clone().svd(true, false);
    let u = svd.u.expect("U");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut proj = DMatrix::identity(l, l);
    for &k in order.iter().take(r) {
        proj -= u.column(k) * u.column(k).transpose();
    }
    Ok(proj)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaDetection {
    pub scores: Vec<f64>,
    pub flags: Vec<bool>,
    pub threshold: f64,
}

/// Subspace detector: `score(t) = ||P_a y_t||^2`, flagged above `threshold`.
///
/// With `threshold = None` the 99th percentile of the scores is used.
pub fn pca_baseline(y: &DMatrix<f64>, r: usize, threshold: Option<f64>) -> Result<PcaDetection> {
    let proj = anomalous_projector(y, r)?;
    let resid = proj * y;
    let scores: Vec<f64> = resid.column_iter().map(|c| c.norm_squared()).collect();
    let threshold = match threshold {
        Some(th) => th,
        None => percentile(&scores, 0.99),
    };
    let flags = scores.iter().map(|s| *s > threshold).collect();
    Ok(PcaDetection { scores, flags, threshold })
}

/// Per-slot single-flow identification for the subspace detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaIdentification {
    /// Best-explaining flow per slot (`None` when the residual is zero).
    pub flows: Vec<Option<usize>>,
    /// Least-squares amount on that flow.
    pub amounts: Vec<f64>,
    /// `F x T`, one nonzero per slot at most.
    pub a_hat: DMatrix<f64>,
}

/// Picks, for every slot, the flow whose projected routing column best explains `P_a y_t`.
pub fn pca_identify(y: &DMatrix<f64>, routing: &RoutingOperator, r: usize) -> Result<PcaIdentification> {
    if routing.links() != y.nrows() {
        return Err(mismatch("routing rows must equal the number of links"));
    }
    let proj = anomalous_projector(y, r)?;
    let theta = &proj * &routing.dense;
    let norms: Vec<f64> = theta.column_iter().map(|c| c.norm_squared()).collect();
    let resid = &proj * y;
    let corr = theta.transpose() * &resid;
    let (f, t) = (routing.flows(), y.ncols());
    let mut a_hat = DMatrix::zeros(f, t);
    let mut flows = Vec::with_capacity(t);
    let mut amounts = Vec::with_capacity(t);
    for s in 0..t {
        let mut best: Option<(usize, f64)> = None;
        for g in 0..f {
            if norms[g] <= 1e-12 {
                continue;
            }
            let gain = corr[(g, s)] * corr[(g, s)] / norms[g];
            if gain > 0.0 && best.is_none_or(|(_, b)| gain > b) {
                best = Some((g, gain));
            }
        }
        match best {
            Some((g, _)) => {
                let amount = corr[(g, s)] / norms[g];
                a_hat[(g, s)] = amount;
                flows.push(Some(g));
                amounts.push(amount);
            }
            None => {
                flows.push(None);
                amounts.push(0.0);
            }
        }
    }
    Ok(PcaIdentification { flows, amounts, a_hat })
}

fn percentile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    if s.is_empty() {
        return 0.0;
    }
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

struct ColumnLasso<'a> {
    routing: &'a RoutingOperator,
    target: &'a DVector<f64>,
    mu: f64,
}

impl ProxProblem for ColumnLasso<'_> {
    type Point = DVector<f64>;
    fn smooth_value(&self, a: &DVector<f64>) -> f64 {
        (self.target - self.routing.apply_vec(a)).norm_squared()
    }
    fn smooth_gradient(&self, a: &DVector<f64>) -> DVector<f64> {
        self.routing.adjoint_vec(&(self.routing.apply_vec(a) - self.target)) * 2.0
    }
    fn penalty_value(&self, a: &DVector<f64>) -> f64 {
        self.mu * a.lp_norm(1)
    }
    fn prox(&self, v: &DVector<f64>, step: f64) -> DVector<f64> {
        v.map(|x| shrink(x, self.mu * step))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialAnomography {
    pub a_hat: DMatrix<f64>,
    /// `||P_a y_t - R a_t|| / ||P_a y_t||` per column (0 for zero targets).
    pub relative_residuals: Vec<f64>,
    /// Columns whose residual stayed above the target.
    pub infeasible: Vec<usize>,
    /// Residual after every continuation stage, per column.
    pub stage_residuals: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialOptions {
    pub target: f64,
    pub max_stages: usize,
    pub stage_iters: usize,
}

impl Default for SpatialOptions {
    fn default() -> Self {
        Self { target: 1e-6, max_stages: 40, stage_iters: 3000 }
    }
}

/// `min ||a_t||_1` subject to `P_a y_t = R a_t`, per column, by continuation
/// on the penalized problem `||P_a y_t - R a_t||^2 + mu ||a_t||_1`.
pub fn spatial_anomography(y: &DMatrix<f64>, routing: &RoutingOperator, r: usize, options: &SpatialOptions) -> Result<SpatialAnomography> {
    if routing.links() != y.nrows() {
        return Err(mismatch("routing rows must equal the number of links"));
    }
    let proj = anomalous_projector(y, r)?;
    let targets = proj * y;
    let f = routing.flows();
    let lip = 2.0 * routing.spectral_norm_sq() * 1.0001;
    let mut a_hat = DMatrix::zeros(f, y.ncols());
    let mut relative_residuals = Vec::with_capacity(y.ncols());
    let mut infeasible = Vec::new();
    let mut stage_residuals = Vec::with_capacity(y.ncols());
    for t in 0..y.ncols() {
        let b = targets.column(t).into_owned();
        let bn = b.norm();
        if bn <= 1e-14 * y.column(t).norm().max(1.0) {
            relative_residuals.push(0.0);
            stage_residuals.push(Vec::new());
            continue;
        }
        let mut mu = routing.adjoint_vec(&b).amax();
        let mut a = DVector::zeros(f);
        let mut trace = Vec::new();
        let mut rel = 1.0;
        for _ in 0..options.max_stages {
            mu *= 0.5;
            let problem = ColumnLasso { routing, target: &b, mu };
            let apg = ApgOptions { tol: 1e-6 * mu, max_iters: options.stage_iters, rule: StopRule::Residual };
            let (next, _) = accelerated_prox_gradient(&problem, lip, a, &apg)?;
            a = next;
            rel = (&b - routing.apply_vec(&a)).norm() / bn;
            trace.push(rel);
            if rel < options.target {
                break;
            }
        }
        if rel >= options.target {
            infeasible.push(t);
        }
        relative_residuals.push(rel);
        stage_residuals.push(trace);
        a_hat.set_column(t, &a);
    }
    Ok(SpatialAnomography { a_hat, relative_residuals, infeasible, stage_residuals })
}

/// `||P_Ω(Y - P Q' - R A)|| / (λ*/2)`: at most one when the factorized point
/// certifies global optimality of the convex problem.
pub fn certificate_margin(
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    a: &DMatrix<f64>,
    problem: &BatchProblem,
) -> Result<f64> {
    if p.nrows() != problem.links() || q.nrows() != problem.horizon() || p.ncols() != q.ncols() || a.shape() != (problem.flows(), problem.horizon()) {
        return Err(mismatch("factor shapes disagree with the problem"));
    }
    let x = p * q.transpose();
    Ok(linalg::spectral_norm(&problem.residual(&x, a)) / (problem.lambda_star / 2.0))
}

/// Relative slack allowed on the certificate inequality.
pub const CERTIFICATE_TOL: f64 = 1e-6;

/// Whether the factorized point `(P, Q, A)` is certified globally optimal.
pub fn certificate_check(p: &DMatrix<f64>, q: &DMatrix<f64>, a: &DMatrix<f64>, problem: &BatchProblem) -> Result<bool> {
    Ok(certificate_margin(p, q, a, problem)? <= 1.0 + CERTIFICATE_TOL)
}

/// `Pair` distance helper used by tests and the distributed module.
pub fn pair_distance(a: &Pair<DMatrix<f64>, DMatrix<f64>>, b: &Pair<DMatrix<f64>, DMatrix<f64>>) -> f64 {
    a.dist_sq(b).sqrt()
}
