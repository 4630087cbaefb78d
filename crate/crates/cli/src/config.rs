//! Experiment configuration for [`crate::pipeline::run_pipeline`].

use std::path::PathBuf;

use anyhow::{Context, Result};
use netcarto_core::netmodel::ScenarioConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineKind {
    Dict,
    Kkf,
    Batch,
    Distributed,
    Online,
}

impl PipelineKind {
    /// Module name used in error messages and provenance.
    pub fn module(self) -> &'static str {
        match self {
            PipelineKind::Dict => "traffic-dict",
            PipelineKind::Kkf => "delay-kkf",
            PipelineKind::Batch => "anomaly-batch",
            PipelineKind::Distributed => "anomaly-distributed",
            PipelineKind::Online => "anomaly-online",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DictParams {
    pub lw: f64,
    pub lg: f64,
    /// `None` gives twice the link count.
    pub atoms: Option<usize>,
    pub train_slots: usize,
    pub outer_iters: usize,
    /// Links observed per slot; `None` keeps the scenario mask.
    pub observed_links: Option<usize>,
}

impl Default for DictParams {
    fn default() -> Self {
        Self { lw: 0.1, lg: 1e-5, atoms: None, train_slots: 120, outer_iters: 15, observed_links: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KkfParams {
    pub paths: usize,
    pub alpha: f64,
    pub c_eta: f64,
    pub sigma2: f64,
    pub horizon: usize,
    /// Paths measured per slot, chosen greedily.
    pub budget: usize,
}

impl Default for KkfParams {
    fn default() -> Self {
        Self { paths: 30, alpha: 0.5, c_eta: 0.05, sigma2: 0.1, horizon: 200, budget: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectParams {
    /// `None` uses the data-driven default.
    pub lambda_star: Option<f64>,
    pub lambda_one: Option<f64>,
    pub rho: usize,
    pub max_iters: usize,
    /// Distributed: number of nodes on a ring.
    pub nodes: usize,
    /// Online: forgetting factor.
    pub beta: f64,
    pub roc_thresholds: usize,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self { lambda_star: None, lambda_one: None, rho: 5, max_iters: 3000, nodes: 4, beta: 0.95, roc_thresholds: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub pipeline: PipelineKind,
    pub scenario: ScenarioConfig,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub dict: DictParams,
    #[serde(default)]
    pub kkf: KkfParams,
    #[serde(default)]
    pub detect: DetectParams,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).context("invalid experiment config")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `NETCARTO_SEED` when set.
    pub fn with_env_seed(mut self) -> Result<Self> {
        if let Some(seed) = env_seed()? {
            self.scenario.seed = seed;
        }
        Ok(self)
    }
}

pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var("NETCARTO_SEED") {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| format!("NETCARTO_SEED={v:?} is not an unsigned integer"))?)),
        Err(_) => Ok(None),
    }
}

/// Worker cap from `NETCARTO_THREADS`, at least one.
pub fn env_threads() -> Result<usize> {
    match std::env::var("NETCARTO_THREADS") {
        Ok(v) => {
            let n: usize = v.trim().parse().with_context(|| format!("NETCARTO_THREADS={v:?} is not an unsigned integer"))?;
            Ok(n.max(1))
        }
        Err(_) => Ok(1),
    }
}
