#![allow(dead_code)]

use nalgebra::DMatrix;
use netcarto_core::anomaly_batch::{BatchProblem, RoutingOperator};
use netcarto_core::netmodel::SamplingMask;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.sample::<f64, _>(StandardNormal))
}

/// `[I | B]` with `B` a random 0/1 block of the given density.
pub fn identity_plus_random(r: &mut ChaCha8Rng, links: usize, flows: usize, density: f64) -> DMatrix<f64> {
    DMatrix::from_fn(links, flows, |i, j| {
        if j < links {
            if i == j { 1.0 } else { 0.0 }
        } else if r.random::<f64>() < density {
            1.0
        } else {
            0.0
        }
    })
}

/// Small batch instance: rank-2 link traffic, two anomalies, light noise.
pub fn desk(seed: u64, links: usize, horizon: usize, flows: usize) -> BatchProblem {
    let mut r = rng(seed);
    let u = DMatrix::from_fn(links, 2, |_, _| r.random::<f64>());
    let v = DMatrix::from_fn(horizon, 2, |_, _| r.random::<f64>());
    let routing = identity_plus_random(&mut r, links, flows, 0.3);
    let mut a = DMatrix::zeros(flows, horizon);
    a[(flows - 1, horizon / 4)] = 2.0;
    a[(2, horizon / 2)] = -1.5;
    let noise = gaussian_matrix(&mut r, links, horizon) * 0.01;
    let y = &u * v.transpose() + &routing * &a + noise;
    BatchProblem::new(y, SamplingMask::full(links, horizon), RoutingOperator::new(routing), 0.5, 0.3).expect("valid desk instance")
}
