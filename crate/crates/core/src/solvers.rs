//! Proximal operators and composite convex solvers.
//!
//! The workhorse is a monotone accelerated proximal gradient method with
//! function-value restart: a candidate step is accepted only when it does not
//! increase the objective, otherwise momentum is reset. Problems plug in
//! through [`ProxProblem`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::linalg;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITERS: usize = 10_000;

/// `sign(v) * max(|v| - tau, 0)` without argument checks.
#[inline]
pub fn shrink(v: f64, tau: f64) -> f64 {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        0.0
    }
}

pub fn soft_threshold(v: f64, tau: f64) -> Result<f64> {
    if !(tau >= 0.0) {
        return Err(invalid("soft-threshold level must be nonnegative"));
    }
    Ok(shrink(v, tau))
}

/// Entry-wise soft-thresholding of a matrix (or vector).
pub fn soft_threshold_matrix<R, C, S>(m: &nalgebra::Matrix<f64, R, C, S>, tau: f64) -> Result<nalgebra::OMatrix<f64, R, C>>
where
    R: nalgebra::Dim,
    C: nalgebra::Dim,
    S: nalgebra::RawStorage<f64, R, C>,
    nalgebra::DefaultAllocator: nalgebra::allocator::Allocator<R, C>,
{
    if !(tau >= 0.0) {
        return Err(invalid("soft-threshold level must be nonnegative"));
    }
    Ok(m.map(|v| shrink(v, tau)))
}

/// Singular value thresholding: the proximal operator of `tau * ||.||_*`.
pub fn svt(m: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    if !(tau >= 0.0) {
        return Err(invalid("singular value threshold must be nonnegative"));
    }
    Ok(svt_unchecked(m, tau))
}

pub(crate) fn svt_unchecked(m: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return m.clone();
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V'");
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (k, s) in svd.singular_values.iter().enumerate() {
        let shrunk = s - tau;
        if shrunk > 0.0 {
            out += u.column(k) * vt.row(k) * shrunk;
        }
    }
    out
}

/// Rescales every column with Euclidean norm above one onto the unit sphere.
pub fn project_columns_unit_ball(b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = b.clone();
    for mut col in out.column_iter_mut() {
        let n = col.norm();
        if n > 1.0 + 4.0 * f64::EPSILON {
            col /= n;
        }
    }
    out
}

/// Iterates the solvers can move along.
pub trait Iterate: Clone {
    /// `a * self + b * other`.
    fn combine(&self, a: f64, other: &Self, b: f64) -> Self;
    fn dist_sq(&self, other: &Self) -> f64;
}

impl Iterate for DVector<f64> {
    fn combine(&self, a: f64, other: &Self, b: f64) -> Self {
        self * a + other * b
    }
    fn dist_sq(&self, other: &Self) -> f64 {
        (self - other).norm_squared()
    }
}

impl Iterate for DMatrix<f64> {
    fn combine(&self, a: f64, other: &Self, b: f64) -> Self {
        self * a + other * b
    }
    fn dist_sq(&self, other: &Self) -> f64 {
        (self - other).norm_squared()
    }
}

/// Two blocks updated jointly.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair<A, B>(pub A, pub B);

impl<A: Iterate, B: Iterate> Iterate for Pair<A, B> {
    fn combine(&self, a: f64, other: &Self, b: f64) -> Self {
        Pair(self.0.combine(a, &other.0, b), self.1.combine(a, &other.1, b))
    }
    fn dist_sq(&self, other: &Self) -> f64 {
        self.0.dist_sq(&other.0) + self.1.dist_sq(&other.1)
    }
}

/// Smooth-plus-proximable objective `f(x) + g(x)`.
pub trait ProxProblem {
    type Point: Iterate;

    fn smooth_value(&self, x: &Self::Point) -> f64;
    fn smooth_gradient(&self, x: &Self::Point) -> Self::Point;
    fn penalty_value(&self, x: &Self::Point) -> f64;
    /// `argmin_z g(z) + ||z - v||^2 / (2 step)`.
    fn prox(&self, v: &Self::Point, step: f64) -> Self::Point;

    fn objective(&self, x: &Self::Point) -> f64 {
        self.smooth_value(x) + self.penalty_value(x)
    }

    /// Prox-gradient fixed-point residual `L * ||x - prox(x - grad/L)||`.
    fn optimality_residual(&self, x: &Self::Point, lipschitz: f64) -> f64 {
        let step = 1.0 / lipschitz;
        let g = self.smooth_gradient(x);
        let z = self.prox(&x.combine(1.0, &g, -step), step);
        lipschitz * x.dist_sq(&z).sqrt()
    }
}

/// Closure-backed [`ProxProblem`].
pub struct FnProblem<P, F, G, H, X> {
    pub smooth: F,
    pub gradient: G,
    pub penalty: H,
    pub prox: X,
    _point: std::marker::PhantomData<P>,
}

impl<P, F, G, H, X> FnProblem<P, F, G, H, X>
where
    P: Iterate,
    F: Fn(&P) -> f64,
    G: Fn(&P) -> P,
    H: Fn(&P) -> f64,
    X: Fn(&P, f64) -> P,
{
    pub fn new(smooth: F, gradient: G, penalty: H, prox: X) -> Self {
        Self { smooth, gradient, penalty, prox, _point: std::marker::PhantomData }
    }
}

impl<P, F, G, H, X> ProxProblem for FnProblem<P, F, G, H, X>
where
    P: Iterate,
    F: Fn(&P) -> f64,
    G: Fn(&P) -> P,
    H: Fn(&P) -> f64,
    X: Fn(&P, f64) -> P,
{
    type Point = P;
    fn smooth_value(&self, x: &P) -> f64 {
        (self.smooth)(x)
    }
    fn smooth_gradient(&self, x: &P) -> P {
        (self.gradient)(x)
    }
    fn penalty_value(&self, x: &P) -> f64 {
        (self.penalty)(x)
    }
    fn prox(&self, v: &P, step: f64) -> P {
        (self.prox)(v, step)
    }
}

/// When the accelerated solver declares convergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopRule {
    /// Relative objective change of an accepted step below `tol`.
    RelativeObjective,
    /// [`ProxProblem::optimality_residual`] below `tol`.
    Residual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: usize,
    pub final_objective: f64,
    pub kkt_residual: f64,
    pub converged: bool,
    /// Objective after every iteration (index 0 is the initial point).
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApgOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub rule: StopRule,
}

impl Default for ApgOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iters: DEFAULT_MAX_ITERS, rule: StopRule::Residual }
    }
}

/// Monotone accelerated proximal gradient with function-value restart.
pub fn accelerated_prox_gradient<P: ProxProblem>(
    problem: &P,
    lipschitz: f64,
    init: P::Point,
    options: &ApgOptions,
) -> Result<(P::Point, SolverReport)> {
    if !(lipschitz > 0.0) || !lipschitz.is_finite() {
        return Err(invalid("Lipschitz constant must be positive and finite"));
    }
    if !(options.tol > 0.0) {
        return Err(invalid("tolerance must be positive"));
    }
    let step = 1.0 / lipschitz;
    let mut x = init;
    let mut fx = problem.objective(&x);
    let mut y = x.clone();
    let mut momentum = 1.0f64;
    let mut restarted = true;
    let mut trace = vec![fx];
    let mut converged = false;
    let mut iterations = 0;

    if options.rule == StopRule::Residual && problem.optimality_residual(&x, lipschitz) <= options.tol {
        let kkt = problem.optimality_residual(&x, lipschitz);
        return Ok((x, SolverReport { iterations: 0, final_objective: fx, kkt_residual: kkt, converged: true, trace }));
    }

    while iterations < options.max_iters {
        iterations += 1;
        let g = problem.smooth_gradient(&y);
        let z = problem.prox(&y.combine(1.0, &g, -step), step);
        let fz = problem.objective(&z);
        let mapping = lipschitz * y.dist_sq(&z).sqrt();

        if fz <= fx + 1e-13 * fx.abs().max(1.0) {
            let next = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
            let beta = (momentum - 1.0) / next;
            let change = (fx - fz).max(0.0);
            y = z.combine(1.0 + beta, &x, -beta);
            x = z;
            let prev = fx;
            fx = fz;
            momentum = next;
            restarted = false;
            trace.push(fx);
            let stop = match options.rule {
                StopRule::RelativeObjective => change <= options.tol * prev.abs().max(f64::MIN_POSITIVE),
                StopRule::Residual => mapping <= options.tol && problem.optimality_residual(&x, lipschitz) <= options.tol,
            };
            if stop {
                converged = true;
                break;
            }
        } else {
            trace.push(fx);
            if restarted {
                // A plain prox-gradient step from x failed to descend: x is a
                // numerical fixed point at this precision.
                converged = match options.rule {
                    StopRule::RelativeObjective => true,
                    StopRule::Residual => problem.optimality_residual(&x, lipschitz) <= options.tol,
                };
                break;
            }
            y = x.clone();
            momentum = 1.0;
            restarted = true;
        }
    }
    let kkt = problem.optimality_residual(&x, lipschitz);
    Ok((x, SolverReport { iterations, final_objective: fx, kkt_residual: kkt, converged, trace }))
}

/// `q(w) + lw ||w||_1` with `q(w) = ||y - D w||^2 + lg w' B' L B w`, stored
/// through the Hessian-like form `q(w) = w' H w - 2 c' w + y'y`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
    pub l1_weight: f64,
}

impl CompositeProblem {
    /// Least-squares part `||y - D w||^2`.
    pub fn new(y: &DVector<f64>, design: &DMatrix<f64>, l1_weight: f64) -> Result<Self> {
        if design.nrows() != y.len() {
            return Err(mismatch("design rows must match observation length"));
        }
        if !(l1_weight >= 0.0) {
            return Err(invalid("l1 weight must be nonnegative"));
        }
        Ok(Self {
            hessian: design.transpose() * design,
            linear: design.transpose() * y,
            constant: y.norm_squared(),
            l1_weight,
        })
    }

    /// Adds `lg * w' B' L B w`.
    pub fn with_graph(mut self, basis: &DMatrix<f64>, laplacian: &DMatrix<f64>, lg: f64) -> Result<Self> {
        if !(lg >= 0.0) {
            return Err(invalid("graph weight must be nonnegative"));
        }
        if basis.ncols() != self.hessian.nrows() || laplacian.nrows() != basis.nrows() || !laplacian.is_square() {
            return Err(mismatch("basis/laplacian dimensions disagree with the design"));
        }
        if lg > 0.0 {
            self.hessian += basis.transpose() * laplacian * basis * lg;
        }
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn quadratic_value(&self, w: &DVector<f64>) -> f64 {
        (w.transpose() * &self.hessian * w)[(0, 0)] - 2.0 * self.linear.dot(w) + self.constant
    }

    pub fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        (&self.hessian * w - &self.linear) * 2.0
    }

    pub fn value(&self, w: &DVector<f64>) -> f64 {
        self.quadratic_value(w) + self.l1_weight * w.lp_norm(1)
    }

    /// Subgradient optimality violation, max over coordinates.
    pub fn kkt_residual(&self, w: &DVector<f64>) -> f64 {
        let g = self.gradient(w);
        w.iter()
            .zip(g.iter())
            .map(|(&wi, &gi)| {
                if wi != 0.0 {
                    (gi + self.l1_weight * wi.signum()).abs()
                } else {
                    (gi.abs() - self.l1_weight).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }

    /// `2 lambda_max(H)` estimated by power iteration with a 1.05 margin.
    pub fn lipschitz(&self) -> f64 {
        let h = &self.hessian;
        2.0 * linalg::power_iteration(self.dim(), 50, 1.05, |v| h * v)
    }
}

impl ProxProblem for CompositeProblem {
    type Point = DVector<f64>;
    fn smooth_value(&self, x: &DVector<f64>) -> f64 {
        self.quadratic_value(x)
    }
    fn smooth_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.gradient(x)
    }
    fn penalty_value(&self, x: &DVector<f64>) -> f64 {
        self.l1_weight * x.lp_norm(1)
    }
    fn prox(&self, v: &DVector<f64>, step: f64) -> DVector<f64> {
        v.map(|x| shrink(x, self.l1_weight * step))
    }
    fn optimality_residual(&self, x: &DVector<f64>, _lipschitz: f64) -> f64 {
        self.kkt_residual(x)
    }
}

/// Graph-regularized Lasso solved to a KKT residual below `tol`.
pub fn lasso_graph(problem: &CompositeProblem, init: &DVector<f64>, tol: f64, max_iters: usize) -> Result<(DVector<f64>, SolverReport)> {
    if init.len() != problem.dim() {
        return Err(mismatch("initial point has the wrong length"));
    }
    let lip = problem.lipschitz();
    if lip == 0.0 {
        // Zero quadratic part: only the l1 term remains, minimized at 0.
        let w = DVector::zeros(problem.dim());
        let obj = problem.value(&w);
        let kkt = problem.kkt_residual(&w);
        return Ok((w, SolverReport { iterations: 0, final_objective: obj, kkt_residual: kkt, converged: kkt <= tol, trace: vec![obj] }));
    }
    accelerated_prox_gradient(problem, lip, init.clone(), &ApgOptions { tol, max_iters, rule: StopRule::Residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(0.5, 1.0).unwrap(), 0.0);
        assert_eq!(soft_threshold(2.0, 1.0).unwrap(), 1.0);
        assert_eq!(soft_threshold(-3.0, 1.0).unwrap(), -2.0);
        assert_eq!(soft_threshold(1.7, 0.0).unwrap(), 1.7);
        assert!(soft_threshold(1.0, -0.1).is_err());
    }

    #[test]
    fn svt_examples() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let out = svt(&m, 2.0).unwrap();
        assert!((out - DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).amax() < 1e-12);
        let r = DMatrix::from_fn(4, 6, |i, j| ((i * 6 + j) as f64).sin());
        assert!((svt(&r, 0.0).unwrap() - &r).amax() < 1e-12);
    }

    fn nuclear_prox_objective(x: &DMatrix<f64>, m: &DMatrix<f64>, tau: f64) -> f64 {
        0.5 * (x - m).norm_squared() + tau * linalg::nuclear_norm(x)
    }

    #[test]
    fn svt_is_a_directional_minimum() {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let m = DMatrix::from_fn(5, 8, |_, _| r.random::<f64>() * 2.0 - 1.0);
        let x = svt(&m, 1.0).unwrap();
        let base = nuclear_prox_objective(&x, &m, 1.0);
        for _ in 0..20 {
            let mut d = DMatrix::from_fn(5, 8, |_, _| r.random::<f64>() * 2.0 - 1.0);
            d /= d.norm();
            for k in 1..=50 {
                let h = k as f64 * 1e-3;
                assert!(nuclear_prox_objective(&(&x + &d * h), &m, 1.0) >= base - 1e-12);
                assert!(nuclear_prox_objective(&(&x - &d * h), &m, 1.0) >= base - 1e-12);
            }
        }
        assert!(base <= nuclear_prox_objective(&m, &m, 1.0));
        assert!(base <= nuclear_prox_objective(&DMatrix::zeros(5, 8), &m, 1.0));
    }

    #[test]
    fn unit_ball_projection() {
        let b = DMatrix::from_row_slice(2, 2, &[3.0, 0.1, 4.0, 0.1]);
        let p = project_columns_unit_ball(&b);
        assert!((p[(0, 0)] - 0.6).abs() < 1e-15 && (p[(1, 0)] - 0.8).abs() < 1e-15);
        assert_eq!(p[(0, 1)], 0.1);
        assert_eq!(project_columns_unit_ball(&p), p);
    }

    #[test]
    fn lasso_identity_design_is_soft_threshold() {
        let y = DVector::from_vec(vec![1.0, 0.2]);
        let p = CompositeProblem::new(&y, &DMatrix::identity(2, 2), 0.5).unwrap();
        let (w, rep) = lasso_graph(&p, &DVector::zeros(2), 1e-10, 10_000).unwrap();
        assert!(rep.converged);
        assert!((w[0] - 0.75).abs() < 1e-9 && w[1] == 0.0);
    }

    #[test]
    fn lasso_zero_solution_threshold() {
        let d = DMatrix::from_row_slice(3, 2, &[1.0, 0.3, -0.2, 1.0, 0.5, 0.5]);
        let y = DVector::from_vec(vec![0.4, -1.0, 0.7]);
        let lw = 2.0 * (d.transpose() * &y).amax();
        let p = CompositeProblem::new(&y, &d, lw).unwrap();
        let (w, rep) = lasso_graph(&p, &DVector::from_vec(vec![0.3, -0.3]), 1e-10, 10_000).unwrap();
        assert!(rep.converged);
        assert_eq!(w, DVector::zeros(2));
    }

    /// Frozen from a 1e-3 grid search over [-2, 2]^2 refined by local
    /// pattern search (see `grid_oracle_fixture` below); matches (9/7, -9/7).
    const GRAPH_FIXTURE: [f64; 2] = [1.285_714_285_714, -1.285_714_285_714];

    fn graph_fixture_problem() -> CompositeProblem {
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let l = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, -1.0]);
        CompositeProblem::new(&y, &d, 0.1).unwrap().with_graph(&d, &l, 0.2).unwrap()
    }

    fn direct_objective(w: [f64; 2]) -> f64 {
        // independent evaluation straight from the definition
        let d = [[1.0, 0.5], [0.5, 1.0]];
        let y = [1.0, -1.0];
        let x = [d[0][0] * w[0] + d[0][1] * w[1], d[1][0] * w[0] + d[1][1] * w[1]];
        let fit = (y[0] - x[0]).powi(2) + (y[1] - x[1]).powi(2);
        let graph = 0.5 * 2.0 * (x[0] - x[1]).powi(2);
        fit + 0.1 * (w[0].abs() + w[1].abs()) + 0.2 * graph
    }

    #[test]
    fn grid_oracle_fixture() {
        let mut best = ([0.0, 0.0], f64::INFINITY);
        let steps = 4000;
        for i in 0..=steps {
            for j in 0..=steps {
                let w = [-2.0 + 4.0 * i as f64 / steps as f64, -2.0 + 4.0 * j as f64 / steps as f64];
                let v = direct_objective(w);
                if v < best.1 {
                    best = (w, v);
                }
            }
        }
        let (mut w, mut v) = best;
        let mut h = 1e-3;
        while h > 1e-13 {
            let mut improved = false;
            for (di, dj) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0), (1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)] {
                let c = [w[0] + di * h, w[1] + dj * h];
                let cv = direct_objective(c);
                if cv < v {
                    w = c;
                    v = cv;
                    improved = true;
                }
            }
            if !improved {
                h /= 2.0;
            }
        }
        assert!((w[0] - GRAPH_FIXTURE[0]).abs() < 1e-8 && (w[1] - GRAPH_FIXTURE[1]).abs() < 1e-8, "{w:?}");
    }

    #[test]
    fn lasso_graph_matches_fixture() {
        let p = graph_fixture_problem();
        let (w, rep) = lasso_graph(&p, &DVector::zeros(2), 1e-10, 10_000).unwrap();
        assert!(rep.converged, "{rep:?}");
        assert!((w[0] - GRAPH_FIXTURE[0]).abs() < 1e-9 && (w[1] - GRAPH_FIXTURE[1]).abs() < 1e-9);
        assert!((p.value(&w) - direct_objective([w[0], w[1]])).abs() < 1e-12);
    }

    #[test]
    fn apg_with_identity_prox_solves_least_squares() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 0.0, 2.0, 1.0, -1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0, 0.5]);
        let ls = (a.transpose() * &a).cholesky().unwrap().solve(&(a.transpose() * &b));
        let prob = FnProblem::new(
            |x: &DVector<f64>| (&a * x - &b).norm_squared(),
            |x: &DVector<f64>| a.transpose() * (&a * x - &b) * 2.0,
            |_: &DVector<f64>| 0.0,
            |v: &DVector<f64>, _| v.clone(),
        );
        let lip = 2.0 * (a.transpose() * &a).symmetric_eigen().eigenvalues.max();
        let (x, rep) = accelerated_prox_gradient(&prob, lip, DVector::zeros(2), &ApgOptions { tol: 1e-12, max_iters: 10_000, rule: StopRule::RelativeObjective }).unwrap();
        assert!(rep.converged);
        assert!((x - ls).amax() < 1e-5);
    }

    #[test]
    fn apg_closure_lasso_agrees_with_lasso_graph() {
        let p = graph_fixture_problem();
        let h = p.hessian.clone();
        let c = p.linear.clone();
        let prob = FnProblem::new(
            |w: &DVector<f64>| (w.transpose() * &h * w)[(0, 0)] - 2.0 * c.dot(w) + 2.0,
            |w: &DVector<f64>| (&h * w - &c) * 2.0,
            |w: &DVector<f64>| 0.1 * w.lp_norm(1),
            |v: &DVector<f64>, s| v.map(|x| shrink(x, 0.1 * s)),
        );
        let (w, _) = accelerated_prox_gradient(&prob, p.lipschitz(), DVector::zeros(2), &ApgOptions { tol: 1e-11, max_iters: 10_000, rule: StopRule::Residual }).unwrap();
        assert!((w[0] - GRAPH_FIXTURE[0]).abs() < 1e-8 && (w[1] - GRAPH_FIXTURE[1]).abs() < 1e-8);
    }

    #[test]
    fn apg_fixed_point_returns_init() {
        let prob = FnProblem::new(
            |x: &DVector<f64>| x.norm_squared(),
            |x: &DVector<f64>| x * 2.0,
            |_: &DVector<f64>| 0.0,
            |v: &DVector<f64>, _| v.clone(),
        );
        let init = DVector::zeros(3);
        let (x, rep) = accelerated_prox_gradient(&prob, 2.0, init.clone(), &ApgOptions::default()).unwrap();
        assert_eq!(x, init);
        assert!(rep.iterations <= 1 && rep.converged);
    }

    #[test]
    fn apg_rejects_bad_lipschitz() {
        let p = graph_fixture_problem();
        assert!(accelerated_prox_gradient(&p, 0.0, DVector::zeros(2), &ApgOptions::default()).is_err());
    }

    #[test]
    fn non_convergence_is_reported() {
        let p = graph_fixture_problem();
        let (_, rep) = lasso_graph(&p, &DVector::zeros(2), 1e-14, 2).unwrap();
        assert!(!rep.converged);
        assert_eq!(rep.iterations, 2);
    }

    fn random_problem(seed: u64, rows: usize, cols: usize) -> CompositeProblem {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = DMatrix::from_fn(rows, cols, |_, _| r.random::<f64>() - 0.5);
        let y = DVector::from_fn(rows, |_, _| r.random::<f64>() * 2.0 - 1.0);
        let g = DMatrix::from_fn(rows, rows, |i, j| if i == j { 0.0 } else { ((i + j) % 3) as f64 });
        let lap = crate::netmodel::laplacian(&g).unwrap();
        CompositeProblem::new(&y, &d, 0.05).unwrap().with_graph(&d, &lap, 0.1).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let p = random_problem(8, 6, 4);
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10 {
            let w = DVector::from_fn(4, |_, _| r.random::<f64>() * 2.0 - 1.0);
            let g = p.gradient(&w);
            let h = 1e-5;
            for i in 0..4 {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[i] += h;
                wm[i] -= h;
                let fd = (p.quadratic_value(&wp) - p.quadratic_value(&wm)) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0));
            }
        }
    }

    #[test]
    fn reported_kkt_matches_recomputation() {
        for seed in 0..10 {
            let p = random_problem(seed, 7, 5);
            let (w, rep) = lasso_graph(&p, &DVector::zeros(5), 1e-9, 10_000).unwrap();
            assert!(rep.converged && rep.kkt_residual <= 1e-9);
            // recompute from scratch with explicit subgradient bounds
            let g = p.gradient(&w);
            let mut worst = 0.0f64;
            for i in 0..5 {
                let v = if w[i] > 0.0 {
                    (g[i] + 0.05).abs()
                } else if w[i] < 0.0 {
                    (g[i] - 0.05).abs()
                } else {
                    (g[i].abs() - 0.05).max(0.0)
                };
                worst = worst.max(v);
            }
            assert!((worst - rep.kkt_residual).abs() < 1e-10);
            assert!(rep.trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        }
    }

    proptest! {
        #[test]
        fn soft_threshold_is_nonexpansive(a in proptest::collection::vec(-10.0f64..10.0, 6), b in proptest::collection::vec(-10.0f64..10.0, 6), tau in 0.0f64..3.0) {
            let a = DVector::from_vec(a);
            let b = DVector::from_vec(b);
            let pa = soft_threshold_matrix(&a, tau).unwrap();
            let pb = soft_threshold_matrix(&b, tau).unwrap();
            prop_assert!((pa - pb).norm() <= (a - b).norm() + 1e-12);
        }

        #[test]
        fn svt_is_nonexpansive(a in proptest::collection::vec(-3.0f64..3.0, 12), b in proptest::collection::vec(-3.0f64..3.0, 12), tau in 0.0f64..2.0) {
            let a = DMatrix::from_vec(3, 4, a);
            let b = DMatrix::from_vec(3, 4, b);
            let d = (svt(&a, tau).unwrap() - svt(&b, tau).unwrap()).norm();
            prop_assert!(d <= (a - b).norm() + 1e-9);
        }

        #[test]
        fn projection_is_idempotent(v in proptest::collection::vec(-4.0f64..4.0, 12)) {
            let b = DMatrix::from_vec(4, 3, v);
            let p = project_columns_unit_ball(&b);
            prop_assert!(p.column_iter().all(|c| c.norm() <= 1.0 + 1e-12));
            prop_assert_eq!(project_columns_unit_ball(&p), p);
        }
    }
}
