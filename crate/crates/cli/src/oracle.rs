//! Golden fixtures from brute-force oracles, written as JSON.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use nalgebra::{DMatrix, DVector};
use netcarto_core::delay_kkf::{greedy_select_paths, kalman_update, log_det_reduction, KkfModel, KkfState, PathSelection};
use netcarto_core::solvers::{lasso_graph, CompositeProblem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct LassoFixture {
    pub y: Vec<f64>,
    pub design: Vec<Vec<f64>>,
    pub laplacian: Vec<Vec<f64>>,
    pub lw: f64,
    pub lg: f64,
    pub grid_minimizer: Vec<f64>,
    pub grid_objective: f64,
    pub solver_minimizer: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct SelectionFixture {
    pub seed: u64,
    pub path_link: Vec<Vec<f64>>,
    pub budget: usize,
    pub greedy: Vec<usize>,
    pub greedy_reduction: f64,
    pub best: Vec<usize>,
    pub best_reduction: f64,
}

#[derive(Debug, Serialize)]
pub struct ConditioningFixture {
    pub seed: u64,
    pub observed: Vec<usize>,
    pub oracle_mean: Vec<f64>,
    pub filter_mean: Vec<f64>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn lasso_fixture() -> Result<LassoFixture> {
    let d = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
    let l = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
    let y = DVector::from_vec(vec![1.0, -1.0]);
    let (lw, lg) = (0.1, 0.2);
    let objective = |w: [f64; 2]| {
        let x0 = w[0] + 0.5 * w[1];
        let x1 = 0.5 * w[0] + w[1];
        (1.0 - x0).powi(2) + (-1.0 - x1).powi(2) + lw * (w[0].abs() + w[1].abs()) + lg * (x0 - x1).powi(2)
    };
    let steps = 4000;
    let mut best = ([0.0, 0.0], f64::INFINITY);
    for i in 0..=steps {
        for j in 0..=steps {
            let w = [-2.0 + 4.0 * i as f64 / steps as f64, -2.0 + 4.0 * j as f64 / steps as f64];
            let v = objective(w);
            if v < best.1 {
                best = (w, v);
            }
        }
    }
    let (mut w, mut v) = best;
    let mut h = 1e-3;
    while h > 1e-13 {
        let moves = [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0), (1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)];
        match moves.iter().map(|&(a, b)| [w[0] + a * h, w[1] + b * h]).map(|c| (c, objective(c))).find(|(_, cv)| *cv < v) {
            Some((c, cv)) => {
                w = c;
                v = cv;
            }
            None => h *= 0.5,
        }
    }
    let problem = CompositeProblem::new(&y, &d, lw).and_then(|p| p.with_graph(&d, &l, lg)).map_err(|e| anyhow!("solvers: {e}"))?;
    let (solved, _) = lasso_graph(&problem, &DVector::zeros(2), 1e-12, 100_000).map_err(|e| anyhow!("solvers: {e}"))?;
    Ok(LassoFixture {
        y: y.iter().copied().collect(),
        design: rows(&d),
        laplacian: rows(&l),
        lw,
        lg,
        grid_minimizer: w.to_vec(),
        grid_objective: v,
        solver_minimizer: solved.iter().copied().collect(),
    })
}

fn random_model(seed: u64, paths: usize, links: usize) -> Result<KkfModel> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut u = DMatrix::from_fn(paths, links, |_, _| if r.random::<f64>() < 0.35 { 1.0 } else { 0.0 });
    for p in 0..paths {
        u[(p, p % links)] = 1.0;
    }
    KkfModel::isotropic(u, 0.5, 0.05, 0.1).map_err(|e| anyhow!("delay-kkf: {e}"))
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    (k - 1..n).flat_map(|last| combinations(last, k - 1).into_iter().map(move |mut c| { c.push(last); c })).collect()
}

fn selection_fixture(seed: u64) -> Result<SelectionFixture> {
    let model = random_model(seed, 10, 6)?;
    let m = DMatrix::identity(10, 10);
    let gain = |set: &[usize]| log_det_reduction(&model, &m, set).map_err(|e| anyhow!("delay-kkf: {e}"));
    let greedy = greedy_select_paths(&model, &m, 3).map_err(|e| anyhow!("delay-kkf: {e}"))?.chosen;
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    for c in combinations(10, 3) {
        let v = gain(&c)?;
        if v > best.1 {
            best = (c, v);
        }
    }
    Ok(SelectionFixture {
        seed,
        path_link: rows(&model.path_link),
        budget: 3,
        greedy_reduction: gain(&greedy)?,
        greedy,
        best: best.0,
        best_reduction: best.1,
    })
}

/// One filter step against direct Gaussian conditioning of the trend.
fn conditioning_fixture(seed: u64) -> Result<ConditioningFixture> {
    let model = random_model(seed, 5, 3)?;
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let observed = vec![0, 2, 3];
    let d = DVector::from_fn(3, |_, _| r.random_range(0.0..2.0));
    let prior_mean = DVector::from_element(5, 1.0);
    let prior = DMatrix::identity(5, 5) + &model.c_eta;
    let s = DMatrix::from_fn(3, 5, |i, j| if observed[i] == j { 1.0 } else { 0.0 });
    let innovation_cov = &s * &prior * s.transpose() + &s * &model.c_nu * s.transpose() + DMatrix::identity(3, 3) * model.sigma2;
    let gain = &prior * s.transpose() * innovation_cov.try_inverse().context("singular innovation covariance")?;
    let oracle = &prior_mean + gain * (&d - &s * &prior_mean);
    let state = KkfState::new(prior_mean, DMatrix::identity(5, 5)).map_err(|e| anyhow!("delay-kkf: {e}"))?;
    let sel = PathSelection::new(observed.clone(), 5).map_err(|e| anyhow!("delay-kkf: {e}"))?;
    let next = kalman_update(&state, &model, &sel, &d).map_err(|e| anyhow!("delay-kkf: {e}"))?;
    Ok(ConditioningFixture {
        seed,
        observed: observed.iter().map(|i| i + 1).collect(),
        oracle_mean: oracle.iter().copied().collect(),
        filter_mean: next.chi_hat.iter().copied().collect(),
    })
}

/// Writes every fixture file into `dir` and returns their paths.
pub fn write_fixtures(dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let selection = (0..5).map(selection_fixture).collect::<Result<Vec<_>>>()?;
    let conditioning = (0..5).map(conditioning_fixture).collect::<Result<Vec<_>>>()?;
    let files = [
        ("lasso_graph.json", serde_json::to_vec_pretty(&lasso_fixture()?)?),
        ("greedy_selection.json", serde_json::to_vec_pretty(&selection)?),
        ("kalman_conditioning.json", serde_json::to_vec_pretty(&conditioning)?),
    ];
    files
        .into_iter()
        .map(|(name, bytes)| {
            let path = dir.join(name);
            fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
            Ok(path)
        })
        .collect()
}
