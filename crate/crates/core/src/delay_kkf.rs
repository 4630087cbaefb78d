//! Dynamic delay cartography with the kriged Kalman filter.
//!
//! Path delays follow `d_t = chi_t + nu_t + eps_t`, where the trend `chi_t`
//! is a random walk with increment covariance `C_eta`, `nu_t` is spatially
//! correlated with `C_nu = alpha U U'` (paths sharing links co-vary), and
//! `eps_t` is white with variance `sigma2`. A subset of paths is measured per
//! slot; the filter tracks `chi` and kriging predicts the unmeasured paths.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Error, Result};
use crate::linalg;
use crate::netmodel::rng;

const PSD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KkfModel {
    /// `P x L` path-link incidence `U`.
    pub path_link: DMatrix<f64>,
    pub alpha: f64,
    /// `alpha U U'`.
    pub c_nu: DMatrix<f64>,
    pub c_eta: DMatrix<f64>,
    pub sigma2: f64,
}

impl KkfModel {
    pub fn new(path_link: DMatrix<f64>, alpha: f64, c_eta: DMatrix<f64>, sigma2: f64) -> Result<Self> {
        if !(alpha >= 0.0) || !(sigma2 >= 0.0) {
            return Err(invalid("alpha and sigma2 must be nonnegative"));
        }
        let p = path_link.nrows();
        if c_eta.shape() != (p, p) {
            return Err(mismatch("C_eta must be P x P"));
        }
        linalg::check_psd(&c_eta, PSD_TOL)?;
        let c_nu = &path_link * path_link.transpose() * alpha;
        Ok(Self { path_link, alpha, c_nu, c_eta, sigma2 })
    }

    /// `C_eta = c_eta I`.
    pub fn isotropic(path_link: DMatrix<f64>, alpha: f64, c_eta: f64, sigma2: f64) -> Result<Self> {
        let p = path_link.nrows();
        Self::new(path_link, alpha, DMatrix::identity(p, p) * c_eta, sigma2)
    }

    pub fn path_count(&self) -> usize {
        self.path_link.nrows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KkfState {
    pub chi_hat: DVector<f64>,
    pub m: DMatrix<f64>,
    /// Error covariance before the most recent update, used by kriging.
    pub m_prev: DMatrix<f64>,
    pub t: usize,
}

impl KkfState {
    pub fn new(chi0: DVector<f64>, m0: DMatrix<f64>) -> Result<Self> {
        if m0.shape() != (chi0.len(), chi0.len()) {
            return Err(mismatch("initial covariance must match the trend length"));
        }
        linalg::check_psd(&m0, PSD_TOL)?;
        Ok(Self { chi_hat: chi0, m_prev: m0.clone(), m: m0, t: 0 })
    }
}

/// Ordered set of measured paths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathSelection {
    pub chosen: Vec<usize>,
    pub path_count: usize,
}

impl PathSelection {
    pub fn new(chosen: Vec<usize>, path_count: usize) -> Result<Self> {
        linalg_check_indices(&chosen, path_count)?;
        Ok(Self { chosen, path_count })
    }

    pub fn all(path_count: usize) -> Self {
        Self { chosen: (0..path_count).collect(), path_count }
    }

    pub fn none(path_count: usize) -> Self {
        Self { chosen: Vec::new(), path_count }
    }

    pub fn len(&self) -> usize {
        self.chosen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chosen.is_empty()
    }

    /// Unmeasured paths, ascending.
    pub fn complement(&self) -> Vec<usize> {
        let mut taken = vec![false; self.path_count];
        for &p in &self.chosen {
            taken[p] = true;
        }
        (0..self.path_count).filter(|&p| !taken[p]).collect()
    }

    /// `S x P` matrix `S_t`.
    pub fn selection_matrix(&self) -> DMatrix<f64> {
        crate::netmodel::selection_matrix(&self.chosen, self.path_count).expect("validated indices")
    }

    /// `(P - S) x P` matrix picking the unmeasured paths.
    pub fn complement_matrix(&self) -> DMatrix<f64> {
        crate::netmodel::selection_matrix(&self.complement(), self.path_count).expect("validated indices")
    }
}

fn linalg_check_indices(idx: &[usize], size: usize) -> Result<()> {
    crate::netmodel::selection_matrix(idx, size).map(|_| ())
}

fn gaussian(factor: &DMatrix<f64>, r: &mut impl Rng) -> DVector<f64> {
    let z = DVector::from_fn(factor.ncols(), |_, _| r.sample::<f64, _>(StandardNormal));
    factor * z
}

/// Draws a trend trajectory and the delays it generates, one column per slot.
pub fn simulate_delays(model: &KkfModel, chi0: &DVector<f64>, horizon: usize, seed: u64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p = model.path_count();
    if horizon == 0 {
        return Err(invalid("horizon must be at least one slot"));
    }
    if chi0.len() != p {
        return Err(mismatch("chi0 must have one entry per path"));
    }
    linalg::check_psd(&model.c_eta, PSD_TOL)?;
    linalg::check_psd(&model.c_nu, PSD_TOL)?;
    let f_eta = linalg::psd_sqrt(&model.c_eta);
    let f_nu = linalg::psd_sqrt(&model.c_nu);
    let sd = model.sigma2.sqrt();
    let mut r = rng(seed);
    let mut chi = DMatrix::zeros(p, horizon);
    let mut d = DMatrix::zeros(p, horizon);
    let mut current = chi0.clone();
    for t in 0..horizon {
        current += gaussian(&f_eta, &mut r);
        let nu = gaussian(&f_nu, &mut r);
        let eps = DVector::from_fn(p, |_, _| sd * r.sample::<f64, _>(StandardNormal));
        chi.set_column(t, &current);
        d.set_column(t, &(&current + nu + eps));
    }
    Ok((chi, d))
}

fn check_obs(model: &KkfModel, state: &KkfState, sel: &PathSelection, d_obs: &DVector<f64>) -> Result<()> {
    let p = model.path_count();
    if state.chi_hat.len() != p || sel.path_count != p {
        return Err(mismatch("state, selection and model disagree on the path count"));
    }
    if d_obs.len() != sel.len() {
        return Err(mismatch("observation length must equal the number of selected paths"));
    }
    Ok(())
}

/// One Kalman correction with the measured paths of slot `t`.
pub fn kalman_update(state: &KkfState, model: &KkfModel, sel: &PathSelection, d_obs: &DVector<f64>) -> Result<KkfState> {
    check_obs(model, state, sel, d_obs)?;
    let prior = &state.m + &model.c_eta;
    if sel.is_empty() {
        return Ok(KkfState { chi_hat: state.chi_hat.clone(), m: prior, m_prev: state.m.clone(), t: state.t + 1 });
    }
    let s = &sel.chosen;
    let innovation_cov = linalg::select_submatrix(&(&prior + &model.c_nu), s, s) + DMatrix::identity(s.len(), s.len()) * model.sigma2;
    let cross = linalg::select_cols(&prior, s);
    let chol = linalg::cholesky(&innovation_cov, "innovation covariance")?;
    // K = cross * innovation_cov^{-1}
    let gain = chol.solve(&cross.transpose()).transpose();
    let innovation = d_obs - linalg::select_entries(&state.chi_hat, s);
    let chi_hat = &state.chi_hat + &gain * innovation;
    let m = linalg::symmetrize(&(&prior - &gain * linalg::select_rows(&prior, s)));
    Ok(KkfState { chi_hat, m, m_prev: state.m.clone(), t: state.t + 1 })
}

/// Kriging prediction of the unmeasured paths after `kalman_update`, with its
/// error covariance.
pub fn krig_predict(state: &KkfState, model: &KkfModel, sel: &PathSelection, d_obs: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_obs(model, state, sel, d_obs)?;
    let s = &sel.chosen;
    let sbar = sel.complement();
    if sbar.is_empty() {
        return Ok((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    let sigma = &state.m_prev + &model.c_nu + &model.c_eta;
    let base = linalg::select_entries(&state.chi_hat, &sbar);
    let id_u = DMatrix::identity(sbar.len(), sbar.len()) * model.sigma2;
    if s.is_empty() {
        let cov = linalg::symmetrize(&(linalg::select_submatrix(&sigma, &sbar, &sbar) + id_u));
        return Ok((base, cov));
    }
    let id_s = DMatrix::identity(s.len(), s.len()) * model.sigma2;
    let nu_ss = linalg::select_submatrix(&model.c_nu, s, s) + &id_s;
    let resid = d_obs - linalg::select_entries(&state.chi_hat, s);
    let weights = linalg::spd_solve_vec(&nu_ss, &resid, "observed C_nu block")?;
    let pred = base + linalg::select_submatrix(&model.c_nu, &sbar, s) * weights;

    // [Sigma^-1 + S'S / sigma2]^-1 = Sigma - Sigma S'(S Sigma S' + sigma2 I)^-1 S Sigma
    let sig_us = linalg::select_submatrix(&sigma, &sbar, s);
    let sig_ss = linalg::select_submatrix(&sigma, s, s) + id_s;
    let reduce = linalg::spd_solve(&sig_ss, &sig_us.transpose(), "observed prediction covariance")?;
    let post = linalg::select_submatrix(&sigma, &sbar, &sbar) - &sig_us * reduce;
    Ok((pred, linalg::symmetrize(&(post + id_u))))
}

/// The random-walk forecast `d_{t+tau} = chi_t`.
pub fn tau_step_predict(state: &KkfState, tau: usize) -> Result<DVector<f64>> {
    if tau < 1 {
        return Err(invalid("prediction horizon must be at least one slot"));
    }
    Ok(state.chi_hat.clone())
}

/// Mutual information `log det(I + S Sigma S' / sigma2)` between the measured
/// delays and `psi = chi + nu`, with `Sigma = M_prev + C_nu + C_eta`.
///
/// This is `log det Sigma - log det(posterior of psi)`, the reduction of the
/// log-determinant of the prediction error covariance achieved by measuring
/// `chosen`.
pub fn log_det_reduction(model: &KkfModel, m_prev: &DMatrix<f64>, chosen: &[usize]) -> Result<f64> {
    if !(model.sigma2 > 0.0) {
        return Err(invalid("log-det reduction needs sigma2 > 0"));
    }
    linalg_check_indices(chosen, model.path_count())?;
    let sigma = m_prev + &model.c_nu + &model.c_eta;
    let block = linalg::select_submatrix(&sigma, chosen, chosen) / model.sigma2 + DMatrix::identity(chosen.len(), chosen.len());
    linalg::log_det_spd(&block)
}

/// `log det [Sigma^-1 + S'S / sigma2]^-1`, the posterior log-volume of the
/// delay field when measuring `chosen`.
pub fn posterior_log_det(model: &KkfModel, m_prev: &DMatrix<f64>, chosen: &[usize]) -> Result<f64> {
    let sigma = m_prev + &model.c_nu + &model.c_eta;
    Ok(linalg::log_det_spd(&sigma)? - log_det_reduction(model, m_prev, chosen)?)
}

/// Greedy D-optimal choice of `budget` paths, smallest index on ties.
pub fn greedy_select_paths(model: &KkfModel, m_prev: &DMatrix<f64>, budget: usize) -> Result<PathSelection> {
    let p = model.path_count();
    if budget < 1 || budget > p {
        return Err(invalid(format!("budget must lie in 1..={p}")));
    }
    if m_prev.shape() != (p, p) {
        return Err(mismatch("M_prev must be P x P"));
    }
    if budget == p {
        return Ok(PathSelection::all(p));
    }
    if !(model.sigma2 > 0.0) {
        return Err(invalid("path selection needs sigma2 > 0"));
    }
    let cov = m_prev + &model.c_nu + &model.c_eta + DMatrix::identity(p, p) * model.sigma2;
    let mut chosen: Vec<usize> = Vec::with_capacity(budget);
    let mut available = vec![true; p];
    while chosen.len() < budget {
        // Gain of adding p is log of its conditional variance given `chosen`.
        let cond = if chosen.is_empty() {
            cov.diagonal()
        } else {
            let c_ss = linalg::select_submatrix(&cov, &chosen, &chosen);
            let c_sp = linalg::select_rows(&cov, &chosen);
            let solved = linalg::spd_solve(&c_ss, &c_sp, "selected delay covariance")?;
            DVector::from_fn(p, |j, _| cov[(j, j)] - c_sp.column(j).dot(&solved.column(j)))
        };
        let mut best: Option<(usize, f64)> = None;
        for j in (0..p).filter(|&j| available[j]) {
            let gain = cond[j];
            if best.map_or(true, |(_, g)| gain > g * (1.0 + 1e-12)) {
                best = Some((j, gain));
            }
        }
        let (j, _) = best.expect("budget below path count leaves a candidate");
        available[j] = false;
        chosen.push(j);
    }
    PathSelection::new(chosen, p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEstimate {
    pub alpha: f64,
    /// Diagonal of `C_eta`.
    pub c_eta: DVector<f64>,
    pub sigma2: f64,
}

/// Method-of-moments fit on the differenced series `Δd_t`.
///
/// Differencing removes the random walk, leaving lag-1 autocovariance
/// `-(alpha U U' + sigma2 I)` and lag-0 covariance
/// `C_eta + 2 (alpha U U' + sigma2 I)`. `alpha` and `sigma2` are fitted by
/// least squares over the entries of the lag-1 matrix; the diagonal of
/// `C_eta` is the lag-0 excess, clamped at zero.
pub fn estimate_model_params(delays: &DMatrix<f64>, path_link: &DMatrix<f64>) -> Result<ModelEstimate> {
    let (p, t) = delays.shape();
    if t < 10 {
        return Err(invalid("need at least 10 training slots"));
    }
    if path_link.nrows() != p {
        return Err(mismatch("path-link matrix must have one row per path"));
    }
    let diff = DMatrix::from_fn(p, t - 1, |i, j| delays[(i, j + 1)] - delays[(i, j)]);
    let n = diff.ncols();
    let mean = diff.column_mean();
    let centered = DMatrix::from_fn(p, n, |i, j| diff[(i, j)] - mean[i]);
    if centered.amax() == 0.0 {
        return Err(Error::Degenerate("delays are constant over time".into()));
    }
    let lag0 = &centered * centered.transpose() / n as f64;
    let a = centered.columns(1, n - 1);
    let b = centered.columns(0, n - 1);
    let lag1 = linalg::symmetrize(&(a * b.transpose() / (n - 1) as f64));
    let target = -lag1;
    let uu = path_link * path_link.transpose();

    // Normal equations for target ≈ alpha * UU' + sigma2 * I.
    let mut g = [[0.0; 2]; 2];
    let mut h = [0.0; 2];
    for i in 0..p {
        for j in 0..p {
            let x = [uu[(i, j)], if i == j { 1.0 } else { 0.0 }];
            for r in 0..2 {
                h[r] += x[r] * target[(i, j)];
                for c in 0..2 {
                    g[r][c] += x[r] * x[c];
                }
            }
        }
    }
    let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
    let (mut alpha, mut sigma2) = if det.abs() > 1e-12 * (g[0][0] * g[1][1]).max(1.0) {
        ((h[0] * g[1][1] - h[1] * g[0][1]) / det, (g[0][0] * h[1] - g[1][0] * h[0]) / det)
    } else {
        // UU' proportional to I: only the sum is identified; attribute it to noise.
        (0.0, h[1] / g[1][1])
    };
    if alpha < 0.0 {
        alpha = 0.0;
        sigma2 = (0..p).map(|i| target[(i, i)]).sum::<f64>() / p as f64;
    }
    if sigma2 < 0.0 {
        sigma2 = 0.0;
        let num: f64 = uu.iter().zip(target.iter()).map(|(u, v)| u * v).sum();
        let den: f64 = uu.iter().map(|u| u * u).sum();
        alpha = if den > 0.0 { (num / den).max(0.0) } else { 0.0 };
    }
    let sigma2 = sigma2.max(1e-12);
    let c_eta = DVector::from_fn(p, |i, _| (lag0[(i, i)] - 2.0 * (alpha * uu[(i, i)] + sigma2)).max(0.0));
    Ok(ModelEstimate { alpha, c_eta, sigma2 })
}

/// Single-slot baseline: generalized least squares for a link-space trend
/// `chi = U beta`, then the kriging correction for the unmeasured paths.
pub fn static_network_kriging(model: &KkfModel, d_obs: &DVector<f64>, sel: &PathSelection) -> Result<DVector<f64>> {
    if sel.path_count != model.path_count() || d_obs.len() != sel.len() {
        return Err(mismatch("selection, observations and model disagree"));
    }
    let sbar = sel.complement();
    if sbar.is_empty() {
        return Ok(DVector::zeros(0));
    }
    let s = &sel.chosen;
    let l = model.path_link.ncols();
    let design = linalg::select_rows(&model.path_link, s);
    if linalg::numerical_rank(&design, 1e-10 * design.amax().max(1.0)) < l {
        return Err(Error::Singular("measured paths do not identify the link-space trend".into()));
    }
    let noise = linalg::select_submatrix(&model.c_nu, s, s) + DMatrix::identity(s.len(), s.len()) * model.sigma2;
    let chol = linalg::cholesky(&noise, "GLS noise covariance")?;
    let whitened_design = chol.solve(&design);
    let normal = design.transpose() * &whitened_design;
    let beta = linalg::spd_solve_vec(&normal, &(whitened_design.transpose() * d_obs), "GLS normal equations")?;
    let chi = &model.path_link * beta;
    let resid = d_obs - linalg::select_entries(&chi, s);
    let correction = linalg::select_submatrix(&model.c_nu, &sbar, s) * chol.solve(&resid);
    Ok(linalg::select_entries(&chi, &sbar) + correction)
}
