use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Low-rank nonnegative OD traffic `Z = max(0, U V')`.
///
/// `U` holds uniform mixing weights; each column of `V` is a sinusoid at a
/// harmonic of `period` with a random phase plus a smoothed random trend,
/// offset so that entries stay positive.
pub fn generate_od_traffic(n_flows: usize, horizon: usize, rank: usize, period: usize, seed: u64) -> Result<DMatrix<f64>> {
    if rank < 1 || rank > n_flows.min(horizon) {
        return Err(invalid(format!("rank {rank} outside 1..={}", n_flows.min(horizon))));
    }
    if period == 0 {
        return Err(invalid("period must be positive"));
    }
    let mut rng = super::rng(seed);
    let u = DMatrix::from_fn(n_flows, rank, |_, _| rng.random::<f64>());
    let mut v = DMatrix::zeros(horizon, rank);
    for k in 0..rank {
        let phase = rng.random::<f64>() * std::f64::consts::TAU;
        let harmonic = (k + 1) as f64;
        let trend = smooth_trend(horizon, period, &mut rng);
        for t in 0..horizon {
            let angle = std::f64::consts::TAU * harmonic * t as f64 / period as f64 + phase;
            v[(t, k)] = 1.0 + 0.5 * angle.sin() + trend[t];
        }
    }
    Ok((u * v.transpose()).map(|z| z.max(0.0)))
}

/// Random walk smoothed by a moving average, rescaled to `|trend| <= 0.3`.
fn smooth_trend(horizon: usize, period: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut walk = Vec::with_capacity(horizon);
    let mut level = 0.0;
    for _ in 0..horizon {
        level += rng.random::<f64>() - 0.5;
        walk.push(level);
    }
    let half = (period / 4).max(1);
    let smooth: Vec<f64> = (0..horizon)
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(horizon);
            walk[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    let mean = smooth.iter().sum::<f64>() / horizon as f64;
    let peak = smooth.iter().map(|x| (x - mean).abs()).fold(0.0, f64::max);
    if peak == 0.0 {
        return vec![0.0; horizon];
    }
    smooth.into_iter().map(|x| 0.3 * (x - mean) / peak).collect()
}

/// Burst anomaly model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyConfig {
    /// Target fraction of nonzero entries, in `(0, 1)`.
    pub density: f64,
    pub magnitude: f64,
    /// Length of each burst in time slots.
    pub duration: usize,
    /// Random sign per burst instead of positive surges.
    #[serde(default)]
    pub signed: bool,
}

/// Sparse anomaly matrix built from non-overlapping `duration`-long bursts.
/// Entries are `magnitude * (1 + U(0, 0.5))`.
pub fn inject_anomalies(shape: (usize, usize), config: &AnomalyConfig, seed: u64) -> Result<DMatrix<f64>> {
    let (f, t) = shape;
    if !(config.density > 0.0 && config.density < 1.0) {
        return Err(invalid("anomaly density must lie in (0, 1)"));
    }
    if config.duration == 0 || config.duration > t {
        return Err(invalid("anomaly duration must lie in 1..=horizon"));
    }
    let expected = config.density * (f * t) as f64;
    if expected < 1.0 - 1e-9 {
        return Err(invalid("density * F * T must be at least 1"));
    }
    let bursts = ((expected / config.duration as f64).round() as usize).max(1);
    let slots_per_row = t / config.duration;
    if bursts > f * slots_per_row / 2 {
        return Err(invalid("anomaly density too high for non-overlapping bursts"));
    }
    let mut rng = super::rng(seed);
    let mut a = DMatrix::zeros(f, t);
    let mut placed = 0;
    while placed < bursts {
        let row = rng.random_range(0..f);
        let start = rng.random_range(0..=(t - config.duration));
        let span = start..start + config.duration;
        if span.clone().any(|c| a[(row, c)] != 0.0) {
            continue;
        }
        let sign = if config.signed && rng.random::<bool>() { -1.0 } else { 1.0 };
        for c in span {
            a[(row, c)] = sign * config.magnitude * (1.0 + 0.5 * rng.random::<f64>());
        }
        placed += 1;
    }
    Ok(a)
}
