use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    all_pairs_flows, build_topology, generate_od_traffic, inject_anomalies, shortest_path_routing, sub_seed,
    AnomalyConfig, RoutingMatrix, SamplingMask, Topology,
};
use crate::error::{invalid, mismatch, Result};

/// Measurement noise distribution; both variants are zero mean with the
/// requested standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    #[default]
    Gaussian,
    Uniform,
}

/// Masked noisy link observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Zero outside the mask.
    pub y: DMatrix<f64>,
    pub noise: DMatrix<f64>,
    pub mask: SamplingMask,
}

/// Samples `round(keep_fraction * L)` links per time slot and returns
/// `Y = X + R A + E` on those entries.
pub fn observe(
    link_traffic: &DMatrix<f64>,
    routing: &RoutingMatrix,
    anomalies: &DMatrix<f64>,
    noise_std: f64,
    keep_fraction: f64,
    noise: NoiseKind,
    seed: u64,
) -> Result<Observation> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(invalid("keep_fraction must lie in (0, 1]"));
    }
    if !(noise_std >= 0.0) {
        return Err(invalid("noise_std must be nonnegative"));
    }
    let (l, t) = link_traffic.shape();
    if routing.link_count() != l || anomalies.shape() != (routing.flow_count(), t) {
        return Err(mismatch("observe: X, R and A shapes disagree"));
    }
    let mut rng = super::rng(seed);
    let per_col = (keep_fraction * l as f64).round() as usize;
    let mut columns = Vec::with_capacity(t);
    for _ in 0..t {
        let mut idx = rand::seq::index::sample(&mut rng, l, per_col).into_vec();
        idx.sort_unstable();
        columns.push(idx);
    }
    let mask = SamplingMask::from_columns(l, &columns)?;
    let e = match noise {
        NoiseKind::Gaussian => {
            let dist = Normal::new(0.0, noise_std).expect("nonnegative std");
            DMatrix::from_fn(l, t, |_, _| dist.sample(&mut rng))
        }
        NoiseKind::Uniform => {
            let half = noise_std * 3f64.sqrt();
            DMatrix::from_fn(l, t, |_, _| if half > 0.0 { rng.random_range(-half..half) } else { 0.0 })
        }
    };
    let full = link_traffic + &routing.entries * anomalies + &e;
    Ok(Observation { y: mask.apply(&full), noise: e, mask })
}

/// Knobs of a complete synthetic scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub nodes: usize,
    pub degree: f64,
    pub horizon: usize,
    pub rank: usize,
    pub period: usize,
    pub anomalies: Option<AnomalyConfig>,
    /// Link-level SNR in dB, `10 log10(mean x^2 / sigma^2)`; takes precedence
    /// over `noise_std` when set.
    #[serde(default)]
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub noise: NoiseKind,
    pub keep_fraction: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    /// Desk-scale regime: 20 routers, about 50 links, all 380 OD pairs,
    /// T = 500, rank 5, 0.5% anomalies, 20 dB SNR, full observation.
    pub fn standard(seed: u64) -> Self {
        Self {
            nodes: 20,
            degree: 5.0,
            horizon: 500,
            rank: 5,
            period: 144,
            anomalies: Some(AnomalyConfig { density: 0.005, magnitude: 100.0, duration: 3, signed: false }),
            snr_db: Some(20.0),
            noise_std: 0.0,
            noise: NoiseKind::Gaussian,
            keep_fraction: 1.0,
            seed,
        }
    }
}

/// Ground truth plus observations for one synthetic network.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficScenario {
    pub topology: Topology,
    pub routing: RoutingMatrix,
    /// `F x T` OD traffic.
    pub od_traffic: DMatrix<f64>,
    /// `F x T` anomalies.
    pub anomalies: DMatrix<f64>,
    /// `L x T` nominal link traffic `R Z`.
    pub link_traffic: DMatrix<f64>,
    /// `L x T`, zero outside the mask.
    pub observations: DMatrix<f64>,
    pub noise: DMatrix<f64>,
    pub noise_std: f64,
    pub mask: SamplingMask,
    pub seed: u64,
}

impl TrafficScenario {
    pub fn generate(config: &ScenarioConfig) -> Result<Self> {
        let seed = config.seed;
        let topology = build_topology(config.nodes, config.degree, sub_seed(seed, 1))?;
        let flows = all_pairs_flows(config.nodes);
        let routing = shortest_path_routing(&topology, &flows)?;
        let f = routing.flow_count();
        let od_traffic = generate_od_traffic(f, config.horizon, config.rank, config.period, sub_seed(seed, 2))?;
        let anomalies = match &config.anomalies {
            Some(a) => inject_anomalies((f, config.horizon), a, sub_seed(seed, 3))?,
            None => DMatrix::zeros(f, config.horizon),
        };
        let link_traffic = &routing.entries * &od_traffic;
        let noise_std = match config.snr_db {
            Some(db) => {
                let power = link_traffic.norm_squared() / link_traffic.len() as f64;
                (power / 10f64.powf(db / 10.0)).sqrt()
            }
            None => config.noise_std,
        };
        let obs = observe(&link_traffic, &routing, &anomalies, noise_std, config.keep_fraction, config.noise, sub_seed(seed, 4))?;
        Ok(Self {
            topology,
            routing,
            od_traffic,
            anomalies,
            link_traffic,
            observations: obs.y,
            noise: obs.noise,
            noise_std,
            mask: obs.mask,
            seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            nodes: 8,
            degree: 4.0,
            horizon: 40,
            rank: 3,
            period: 12,
            anomalies: Some(AnomalyConfig { density: 0.02, magnitude: 1.0, duration: 2, signed: false }),
            snr_db: None,
            noise_std: 0.1,
            noise: NoiseKind::Gaussian,
            keep_fraction: 0.75,
            seed: 21,
        }
    }

    #[test]
    fn noiseless_full_observation_is_exact() {
        let s = TrafficScenario::generate(&ScenarioConfig { anomalies: None, noise_std: 0.0, keep_fraction: 1.0, ..small() }).unwrap();
        assert_eq!(s.observations, s.link_traffic);
    }

    #[test]
    fn scenario_invariants() {
        let s = TrafficScenario::generate(&small()).unwrap();
        assert_eq!(s.link_traffic, &s.routing.entries * &s.od_traffic);
        let l = s.routing.link_count();
        let expected = s.mask.apply(&(&s.link_traffic + &s.routing.entries * &s.anomalies + &s.noise));
        assert!((&s.observations - expected).amax() < 1e-12);
        for t in 0..40 {
            assert_eq!(s.mask.column_indices(t).len(), (0.75 * l as f64).round() as usize);
        }
    }

    #[test]
    fn single_spike_shows_on_its_path() {
        let mut s = TrafficScenario::generate(&ScenarioConfig { anomalies: None, noise_std: 0.0, keep_fraction: 1.0, ..small() }).unwrap();
        let mut a = DMatrix::zeros(s.routing.flow_count(), 40);
        a[(5, 7)] = 3.0;
        let obs = observe(&s.link_traffic, &s.routing, &a, 0.0, 1.0, NoiseKind::Gaussian, 1).unwrap();
        s.observations = obs.y;
        let diff = &s.observations - &s.link_traffic;
        for l in 0..s.routing.link_count() {
            let on_path = s.routing.paths[5].contains(&l);
            assert_eq!(diff[(l, 7)] != 0.0, on_path);
        }
        assert!(diff.columns(0, 7).amax() == 0.0);
    }

    #[test]
    fn training_keep_fraction_rounds_per_slot() {
        let s = TrafficScenario::generate(&ScenarioConfig { keep_fraction: 50.0 / 54.0, ..small() }).unwrap();
        let l = s.routing.link_count();
        assert_eq!(s.mask.column_indices(0).len(), ((50.0 / 54.0) * l as f64).round() as usize);
    }

    #[test]
    fn rejects_nonpositive_keep_fraction() {
        assert!(TrafficScenario::generate(&ScenarioConfig { keep_fraction: 0.0, ..small() }).is_err());
    }

    #[test]
    fn same_seed_same_scenario() {
        let a = TrafficScenario::generate(&small()).unwrap();
        let b = TrafficScenario::generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = TrafficScenario::generate(&ScenarioConfig { seed: 22, ..small() }).unwrap();
        assert_ne!(a.observations, c.observations);
    }

    #[test]
    fn uniform_noise_has_requested_std() {
        let s = TrafficScenario::generate(&ScenarioConfig { noise: NoiseKind::Uniform, noise_std: 0.5, keep_fraction: 1.0, horizon: 400, ..small() }).unwrap();
        let var = s.noise.norm_squared() / s.noise.len() as f64;
        assert!((var.sqrt() - 0.5).abs() < 0.03);
        assert!(s.noise.amax() <= 0.5 * 3f64.sqrt());
    }
}
