//! Semi-supervised dictionary learning for link-count cartography.
//!
//! Training fits a link-space dictionary `B` and sparse codes `W` to
//! incomplete historical link counts by block coordinate descent on
//!
//! ```text
//! sum_t ||y_t - S_t B w_t||^2 + lw ||w_t||_1 + lg w_t' B' L B w_t,   ||b_q|| <= 1,
//! ```
//!
//! where `L` is the link-graph Laplacian. Imputation then solves the same
//! per-slot problem with `B` fixed and returns `B w_t`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Error, Result};
use crate::linalg;
use crate::netmodel::{rng, sub_seed, SamplingMask};
use crate::solvers::{lasso_graph, project_columns_unit_ball, CompositeProblem};

pub use crate::metrics::nre;

const NORM_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dictionary {
    /// `L x Q`, one atom per column.
    pub basis: DMatrix<f64>,
}

impl Dictionary {
    pub fn new(basis: DMatrix<f64>) -> Result<Self> {
        if basis.ncols() == 0 || basis.nrows() == 0 {
            return Err(invalid("dictionary must have at least one atom and one link"));
        }
        if let Some(q) = basis.column_iter().position(|c| c.norm() > 1.0 + NORM_SLACK) {
            return Err(invalid(format!("atom {q} has norm above one")));
        }
        Ok(Self { basis })
    }

    pub fn atom_count(&self) -> usize {
        self.basis.ncols()
    }

    pub fn link_count(&self) -> usize {
        self.basis.nrows()
    }
}

/// Observed links and their counts in one time slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotObservation {
    pub links: Vec<usize>,
    pub values: DVector<f64>,
}

impl SlotObservation {
    pub fn new(links: Vec<usize>, values: DVector<f64>) -> Result<Self> {
        if links.len() != values.len() {
            return Err(mismatch("observation values and link indices differ in length"));
        }
        Ok(Self { links, values })
    }

    /// Column `t` of `y` restricted to the mask.
    pub fn from_column(y: &DMatrix<f64>, mask: &SamplingMask, t: usize) -> Self {
        let links = mask.column_indices(t);
        let values = DVector::from_iterator(links.len(), links.iter().map(|&l| y[(l, t)]));
        Self { links, values }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub observations: Vec<SlotObservation>,
    pub link_count: usize,
    pub laplacian: DMatrix<f64>,
    /// Per-slot Laplacians replacing `laplacian` when present.
    pub slot_laplacians: Option<Vec<DMatrix<f64>>>,
    pub lw: f64,
    pub lg: f64,
}

impl TrainingSet {
    pub fn new(observations: Vec<SlotObservation>, laplacian: DMatrix<f64>, lw: f64, lg: f64) -> Result<Self> {
        let link_count = laplacian.nrows();
        let set = Self { observations, link_count, laplacian, slot_laplacians: None, lw, lg };
        set.validate()?;
        Ok(set)
    }

    /// All masked columns of `y`.
    pub fn from_masked(y: &DMatrix<f64>, mask: &SamplingMask, laplacian: DMatrix<f64>, lw: f64, lg: f64) -> Result<Self> {
        if mask.shape() != y.shape() {
            return Err(mismatch("mask and observation shapes differ"));
        }
        let obs = (0..y.ncols()).map(|t| SlotObservation::from_column(y, mask, t)).collect();
        Self::new(obs, laplacian, lw, lg)
    }

    pub fn with_slot_laplacians(mut self, laplacians: Vec<DMatrix<f64>>) -> Result<Self> {
        if laplacians.len() != self.observations.len() {
            return Err(mismatch("need one Laplacian per training slot"));
        }
        if laplacians.iter().any(|l| l.shape() != (self.link_count, self.link_count)) {
            return Err(mismatch("slot Laplacian has the wrong size"));
        }
        self.slot_laplacians = Some(laplacians);
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.observations.is_empty() {
            return Err(invalid("empty training set"));
        }
        if !self.laplacian.is_square() {
            return Err(mismatch("Laplacian must be square"));
        }
        if !(self.lw >= 0.0 && self.lg >= 0.0) {
            return Err(invalid("regularization weights must be nonnegative"));
        }
        for (t, o) in self.observations.iter().enumerate() {
            if o.links.len() != o.values.len() {
                return Err(mismatch(format!("slot {t}: values and indices differ in length")));
            }
            if o.links.iter().any(|&l| l >= self.link_count) {
                return Err(mismatch(format!("slot {t}: link index out of range")));
            }
        }
        Ok(())
    }

    fn slot_laplacian(&self, t: usize) -> &DMatrix<f64> {
        match &self.slot_laplacians {
            Some(ls) => &ls[t],
            None => &self.laplacian,
        }
    }

    /// Links that are never observed in any slot.
    pub fn unobserved_links(&self) -> Vec<usize> {
        let mut seen = vec![false; self.link_count];
        for o in &self.observations {
            for &l in &o.links {
                seen[l] = true;
            }
        }
        (0..self.link_count).filter(|&l| !seen[l]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeMatrix {
    /// `Q x T`.
    pub codes: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub atoms: usize,
    pub seed: u64,
    pub outer_iters: usize,
    pub tol: f64,
    /// KKT tolerance of the per-slot coding problems.
    pub code_tol: f64,
    pub code_max_iters: usize,
    /// Projected-gradient steps per dictionary update.
    pub basis_steps: usize,
}

impl TrainOptions {
    /// Defaults with `Q = 2L`.
    pub fn for_links(link_count: usize, seed: u64) -> Self {
        Self { atoms: 2 * link_count, seed, outer_iters: 50, tol: 1e-4, code_tol: 1e-6, code_max_iters: 2000, basis_steps: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    /// Objective at initialization and after every sweep.
    pub objective: Vec<f64>,
    pub converged: bool,
    /// Slots whose coding problem hit its iteration cap, per sweep.
    pub unconverged_codes: Vec<usize>,
    pub unobserved_links: Vec<usize>,
}

fn code_problem(basis: &DMatrix<f64>, graph_term: &DMatrix<f64>, obs: &SlotObservation, lw: f64) -> CompositeProblem {
    let d = linalg::select_rows(basis, &obs.links);
    CompositeProblem {
        hessian: d.transpose() * &d + graph_term,
        linear: d.transpose() * &obs.values,
        constant: obs.values.norm_squared(),
        l1_weight: lw,
    }
}

/// `lg B' L B`, the graph part of the coding Hessian.
fn graph_term(basis: &DMatrix<f64>, laplacian: &DMatrix<f64>, lg: f64) -> DMatrix<f64> {
    if lg == 0.0 {
        DMatrix::zeros(basis.ncols(), basis.ncols())
    } else {
        basis.transpose() * laplacian * basis * lg
    }
}

/// Total training objective at `(B, W)`.
pub fn training_objective(data: &TrainingSet, basis: &DMatrix<f64>, codes: &DMatrix<f64>) -> f64 {
    let x = basis * codes;
    let mut total = 0.0;
    for (t, o) in data.observations.iter().enumerate() {
        let xt = x.column(t);
        let fit: f64 = o.links.iter().zip(o.values.iter()).map(|(&l, &v)| (v - xt[l]).powi(2)).sum();
        let graph = if data.lg == 0.0 { 0.0 } else { (xt.transpose() * data.slot_laplacian(t) * xt)[(0, 0)] * data.lg };
        total += fit + data.lw * codes.column(t).lp_norm(1) + graph;
    }
    total
}

/// Smooth part of the objective in `B` and its gradient, codes fixed.
fn basis_smooth(data: &TrainingSet, basis: &DMatrix<f64>, codes: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let x = basis * codes;
    let mut resid = DMatrix::zeros(basis.nrows(), codes.ncols());
    let mut graph_dir = DMatrix::zeros(basis.nrows(), codes.ncols());
    let mut value = 0.0;
    for (t, o) in data.observations.iter().enumerate() {
        for (&l, &v) in o.links.iter().zip(o.values.iter()) {
            let r = v - x[(l, t)];
            resid[(l, t)] = r;
            value += r * r;
        }
        if data.lg != 0.0 {
            let lx = data.slot_laplacian(t) * x.column(t);
            value += data.lg * lx.dot(&x.column(t));
            graph_dir.set_column(t, &lx);
        }
    }
    let grad = (graph_dir * data.lg - resid) * codes.transpose() * 2.0;
    (value, grad)
}

fn initial_basis(data: &TrainingSet, atoms: usize, seed: u64) -> DMatrix<f64> {
    let l = data.link_count;
    let mut r = rng(sub_seed(seed, 11));
    let mut basis = DMatrix::zeros(l, atoms);
    let picks = rand::seq::index::sample(&mut r, data.observations.len(), atoms.min(data.observations.len())).into_vec();
    for (q, &t) in picks.iter().enumerate() {
        let o = &data.observations[t];
        for (&li, &v) in o.links.iter().zip(o.values.iter()) {
            basis[(li, q)] = v;
        }
    }
    for q in 0..atoms {
        let n = basis.column(q).norm();
        if n > 0.0 {
            basis.column_mut(q).unscale_mut(n);
        } else {
            let g = DVector::from_fn(l, |_, _| r.sample::<f64, _>(StandardNormal));
            basis.set_column(q, &(&g / g.norm()));
        }
    }
    basis
}

fn update_codes(data: &TrainingSet, basis: &DMatrix<f64>, codes: &mut DMatrix<f64>, options: &TrainOptions) -> Result<usize> {
    let shared = match data.slot_laplacians {
        None => Some(graph_term(basis, &data.laplacian, data.lg)),
        Some(_) => None,
    };
    let mut unconverged = 0;
    for (t, o) in data.observations.iter().enumerate() {
        let g = match &shared {
            Some(g) => g.clone(),
            None => graph_term(basis, data.slot_laplacian(t), data.lg),
        };
        let problem = code_problem(basis, &g, o, data.lw);
        let init = codes.column(t).into_owned();
        let (w, rep) = lasso_graph(&problem, &init, options.code_tol, options.code_max_iters)?;
        if !rep.converged {
            unconverged += 1;
        }
        codes.set_column(t, &w);
    }
    Ok(unconverged)
}

/// Projected gradient on `B` with backtracking; never increases the objective.
fn update_basis(data: &TrainingSet, basis: &mut DMatrix<f64>, codes: &DMatrix<f64>, steps: usize) {
    let wn = linalg::spectral_norm(codes);
    let lap_norm = match &data.slot_laplacians {
        None => linalg::spectral_norm(&data.laplacian),
        Some(ls) => ls.iter().map(linalg::spectral_norm).fold(0.0, f64::max),
    };
    let lip = 2.0 * wn * wn * (1.0 + data.lg * lap_norm);
    if lip == 0.0 {
        return;
    }
    let (mut value, mut grad) = basis_smooth(data, basis, codes);
    for _ in 0..steps {
        let mut step = 2.0 / lip;
        let mut accepted = false;
        for _ in 0..=5 {
            let candidate = project_columns_unit_ball(&(&*basis - &grad * step));
            let (cv, cg) = basis_smooth(data, &candidate, codes);
            if cv <= value {
                *basis = candidate;
                value = cv;
                grad = cg;
                accepted = true;
                break;
            }
            step /= 2.0;
        }
        if !accepted {
            break;
        }
    }
}

/// Block coordinate descent training of the dictionary and codes.
pub fn train_dictionary(data: &TrainingSet, options: &TrainOptions) -> Result<(Dictionary, CodeMatrix, TrainingTrace)> {
    data.validate()?;
    if options.atoms == 0 {
        return Err(invalid("dictionary needs at least one atom"));
    }
    if !(options.tol > 0.0) {
        return Err(invalid("tolerance must be positive"));
    }
    let unobserved = data.unobserved_links();
    if !unobserved.is_empty() {
        log::warn!("{} links are never observed during training; they are estimated through the Laplacian only", unobserved.len());
    }
    let mut basis = initial_basis(data, options.atoms, options.seed);
    let mut codes = DMatrix::zeros(options.atoms, data.observations.len());
    let mut objective = vec![training_objective(data, &basis, &codes)];
    let mut unconverged_codes = Vec::new();
    let mut converged = false;
    for _ in 0..options.outer_iters {
        unconverged_codes.push(update_codes(data, &basis, &mut codes, options)?);
        update_basis(data, &mut basis, &codes, options.basis_steps);
        let prev = *objective.last().expect("nonempty trace");
        let now = training_objective(data, &basis, &codes);
        objective.push(now);
        if (prev - now).abs() <= options.tol * prev.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    let dict = Dictionary::new(basis)?;
    Ok((dict, CodeMatrix { codes }, TrainingTrace { objective, converged, unconverged_codes, unobserved_links: unobserved }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImputeOptions {
    pub lw: f64,
    pub lg: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl ImputeOptions {
    pub fn new(lw: f64, lg: f64) -> Self {
        Self { lw, lg, tol: 1e-8, max_iters: 10_000 }
    }
}

/// Sparse-codes one slot against `dict` and returns `(B w, w)`.
pub fn impute_link_counts(
    obs: &SlotObservation,
    dict: &Dictionary,
    laplacian: &DMatrix<f64>,
    options: &ImputeOptions,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if obs.links.is_empty() {
        return Err(invalid("empty observation set"));
    }
    if laplacian.shape() != (dict.link_count(), dict.link_count()) {
        return Err(mismatch("Laplacian size must match the dictionary's link count"));
    }
    if obs.links.iter().any(|&l| l >= dict.link_count()) || obs.links.len() != obs.values.len() {
        return Err(mismatch("observation indices inconsistent with the dictionary"));
    }
    if !(options.lw >= 0.0 && options.lg >= 0.0) {
        return Err(invalid("regularization weights must be nonnegative"));
    }
    let g = graph_term(&dict.basis, laplacian, options.lg);
    let problem = code_problem(&dict.basis, &g, obs, options.lw);
    let (w, rep) = lasso_graph(&problem, &DVector::zeros(dict.atom_count()), options.tol, options.max_iters)?;
    if !rep.converged {
        log::warn!("imputation solver stopped at KKT residual {:.3e}", rep.kkt_residual);
    }
    Ok((&dict.basis * &w, w))
}

/// Imputes every column of a masked matrix; returns the `L x T` estimate.
pub fn impute_matrix(y: &DMatrix<f64>, mask: &SamplingMask, dict: &Dictionary, laplacian: &DMatrix<f64>, options: &ImputeOptions) -> Result<DMatrix<f64>> {
    if mask.shape() != y.shape() || y.nrows() != dict.link_count() {
        return Err(mismatch("observation, mask and dictionary shapes disagree"));
    }
    let mut out = DMatrix::zeros(y.nrows(), y.ncols());
    for t in 0..y.ncols() {
        let (x, _) = impute_link_counts(&SlotObservation::from_column(y, mask, t), dict, laplacian, options)?;
        out.set_column(t, &x);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub lw: f64,
    pub lg: f64,
    /// `(lw, lg, held-out error)` for every grid cell.
    pub scores: Vec<(f64, f64, f64)>,
}

pub const DEFAULT_LW_GRID: [f64; 5] = [1e-3, 1e-2, 1e-1, 1.0, 10.0];
pub const DEFAULT_LG_GRID: [f64; 5] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

/// Grid search over `(lw, lg)`.
///
/// The last 20% of slots are held out; within each held-out slot every fifth
/// observed entry is hidden, and the mean squared imputation error on hidden
/// entries is the score.
pub fn cross_validate(data: &TrainingSet, options: &TrainOptions, lw_grid: &[f64], lg_grid: &[f64]) -> Result<CrossValidation> {
    data.validate()?;
    let t = data.observations.len();
    let held = (t as f64 * 0.2).round() as usize;
    if held == 0 || held == t {
        return Err(invalid("too few slots to hold out 20%"));
    }
    if lw_grid.is_empty() || lg_grid.is_empty() {
        return Err(invalid("empty parameter grid"));
    }
    let split = t - held;
    let mut scores = Vec::new();
    for &lw in lw_grid {
        for &lg in lg_grid {
            let mut train = data.clone();
            train.observations.truncate(split);
            train.slot_laplacians = data.slot_laplacians.as_ref().map(|ls| ls[..split].to_vec());
            train.lw = lw;
            train.lg = lg;
            let (dict, _, _) = train_dictionary(&train, options)?;
            let mut err = 0.0;
            let mut count = 0usize;
            for s in split..t {
                let o = &data.observations[s];
                let (mut keep, mut hide) = (Vec::new(), Vec::new());
                for k in 0..o.links.len() {
                    if k % 5 == 4 { hide.push(k) } else { keep.push(k) }
                }
                if keep.is_empty() || hide.is_empty() {
                    continue;
                }
                let visible = SlotObservation {
                    links: keep.iter().map(|&k| o.links[k]).collect(),
                    values: DVector::from_iterator(keep.len(), keep.iter().map(|&k| o.values[k])),
                };
                let (x, _) = impute_link_counts(&visible, &dict, data.slot_laplacian(s), &ImputeOptions::new(lw, lg))?;
                for &k in &hide {
                    err += (x[o.links[k]] - o.values[k]).powi(2);
                    count += 1;
                }
            }
            if count == 0 {
                return Err(Error::Degenerate("held-out slots have no hidden entries".into()));
            }
            scores.push((lw, lg, err / count as f64));
        }
    }
    let best = scores.iter().cloned().min_by(|a, b| a.2.total_cmp(&b.2)).expect("nonempty grid");
    Ok(CrossValidation { lw: best.0, lg: best.1, scores })
}
