//! Config-driven experiment pipelines with a hashed artifact manifest.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use nalgebra::{DMatrix, DVector};
use netcarto_core::anomaly_batch::{default_lambdas, solve_batch, BatchOptions, BatchProblem, RoutingOperator};
use netcarto_core::anomaly_distributed::{ring_graph, run_admm, AdmmConfig, NodePartition};
use netcarto_core::anomaly_online::{run_stream, OnlineConfig, OnlineState, RoutingSchedule};
use netcarto_core::delay_kkf::{greedy_select_paths, kalman_update, krig_predict, simulate_delays, KkfModel, KkfState};
use netcarto_core::linalg;
use netcarto_core::metrics::{auc, nmspe, nre, roc_curve};
use netcarto_core::netmodel::{gram, laplacian, SamplingMask, TrafficScenario};
use netcarto_core::traffic_dict::{impute_matrix, train_dictionary, ImputeOptions, TrainOptions, TrainingSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, PipelineKind};
use crate::csvio::format_matrix_csv;
use crate::metrics::{params_hash, sha256_hex, MetricsRecord, Provenance};
use crate::plot::{render, PlotSeries};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub pipeline: PipelineKind,
    pub config_hash: String,
    pub artifacts: Vec<Artifact>,
    pub metrics: Vec<MetricsRecord>,
}

/// Files and metrics produced by one pipeline before anything touches disk.
#[derive(Default)]
struct Outputs {
    files: Vec<(String, Vec<u8>)>,
    metrics: Vec<MetricsRecord>,
}

impl Outputs {
    fn matrix(&mut self, name: &str, m: &DMatrix<f64>) {
        self.files.push((name.into(), format_matrix_csv(m, None).into_bytes()));
    }

    fn plot(&mut self, series: &PlotSeries) -> Result<()> {
        for (name, text) in render(series)? {
            self.files.push((name, text.into_bytes()));
        }
        Ok(())
    }
}

/// Resampled mask with `per_slot` uniformly chosen links per column.
pub fn per_slot_mask(links: usize, horizon: usize, per_slot: usize, seed: u64) -> Result<SamplingMask> {
    if per_slot == 0 || per_slot > links {
        return Err(anyhow!("observed links per slot must lie in 1..={links}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols: Vec<Vec<usize>> = (0..horizon)
        .map(|_| {
            let mut keep = rand::seq::index::sample(&mut rng, links, per_slot).into_vec();
            keep.sort_unstable();
            keep
        })
        .collect();
    Ok(SamplingMask::from_columns(links, &cols)?)
}

fn tagged<T>(module: &str, r: netcarto_core::Result<T>) -> Result<T> {
    r.map_err(|e| anyhow!("{module}: {e}"))
}

fn dict_pipeline(config: &ExperimentConfig, prov: &Provenance) -> Result<Outputs> {
    let m = "traffic-dict";
    let p = &config.dict;
    let s = tagged("netmodel", TrafficScenario::generate(&config.scenario))?;
    let (links, horizon) = s.observations.shape();
    if p.train_slots == 0 || p.train_slots >= horizon {
        return Err(anyhow!("{m}: train_slots must lie in 1..{horizon}"));
    }
    let mask = match p.observed_links {
        Some(k) => per_slot_mask(links, horizon, k, config.scenario.seed)?,
        None => s.mask.clone(),
    };
    let full = &s.link_traffic + &s.noise + &s.routing.entries * &s.anomalies;
    let observed = mask.apply(&full);
    let scale = observed.sum() / mask.count().max(1) as f64;
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let y = &observed / scale;
    let lap = tagged("netmodel", laplacian(&gram(&s.routing)))?;
    let train_range = 0..p.train_slots;
    let train = tagged(m, TrainingSet::from_masked(&y.columns(0, p.train_slots).into_owned(), &mask.slice_cols(train_range), lap.clone(), p.lw, p.lg))?;
    let opts = TrainOptions {
        atoms: p.atoms.unwrap_or(2 * links),
        outer_iters: p.outer_iters,
        code_tol: 1e-5,
        ..TrainOptions::for_links(links, config.scenario.seed)
    };
    let (dict, _, _) = tagged(m, train_dictionary(&train, &opts))?;
    let test = p.train_slots..horizon;
    let test_y = y.columns(test.start, test.len()).into_owned();
    let imputed = tagged(m, impute_matrix(&test_y, &mask.slice_cols(test.clone()), &dict, &lap, &ImputeOptions::new(p.lw, p.lg)))?;
    let truth = s.link_traffic.columns(test.start, test.len()).into_owned() / scale;
    let err = tagged(m, nre(&imputed, &truth))?;

    let mut out = Outputs::default();
    out.matrix("dictionary.csv", &dict.basis);
    out.matrix("imputed.csv", &(imputed * scale));
    out.metrics.push(MetricsRecord::new("nre", err, "normalized squared error", prov.clone())?);
    out.metrics.push(MetricsRecord::new("scale", scale, "link-count units", prov.clone())?);
    Ok(out)
}

/// `P x L` path-link incidence from `count` evenly spaced scenario flows.
pub fn scenario_paths(scenario: &TrafficScenario, count: usize) -> Result<DMatrix<f64>> {
    let f = scenario.routing.flow_count();
    if count == 0 || count > f {
        return Err(anyhow!("path count must lie in 1..={f}"));
    }
    let picks: Vec<usize> = (0..count).map(|k| k * f / count).collect();
    Ok(linalg::select_cols(&scenario.routing.entries, &picks).transpose())
}

/// Tracks `delays` measuring `budget` greedily chosen paths per slot.
///
/// Returns the full predicted map (measured entries copied), the chosen
/// paths per slot, and the hidden-path predictions and truths for scoring.
pub fn track_with_selection(
    model: &KkfModel,
    delays: &DMatrix<f64>,
    budget: usize,
    chi0: DVector<f64>,
) -> netcarto_core::Result<(DMatrix<f64>, Vec<Vec<usize>>, Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let (p, t) = delays.shape();
    let mut state = KkfState::new(chi0, DMatrix::identity(p, p))?;
    let mut predicted = DMatrix::zeros(p, t);
    let mut chosen = Vec::with_capacity(t);
    let (mut preds, mut truths) = (Vec::new(), Vec::new());
    for k in 0..t {
        let sel = greedy_select_paths(model, &state.m, budget)?;
        let d = delays.column(k).into_owned();
        let obs = linalg::select_entries(&d, &sel.chosen);
        state = kalman_update(&state, model, &sel, &obs)?;
        let (pred, _) = krig_predict(&state, model, &sel, &obs)?;
        let hidden = sel.complement();
        for (i, &path) in sel.chosen.iter().enumerate() {
            predicted[(path, k)] = obs[i];
        }
        for (i, &path) in hidden.iter().enumerate() {
            predicted[(path, k)] = pred[i];
        }
        preds.push(pred);
        truths.push(linalg::select_entries(&d, &hidden));
        chosen.push(sel.chosen);
    }
    Ok((predicted, chosen, preds, truths))
}

fn kkf_pipeline(config: &ExperimentConfig, prov: &Provenance) -> Result<Outputs> {
    let m = "delay-kkf";
    let p = &config.kkf;
    let s = tagged("netmodel", TrafficScenario::generate(&config.scenario))?;
    let u = scenario_paths(&s, p.paths).map_err(|e| anyhow!("{m}: {e}"))?;
    let model = tagged(m, KkfModel::isotropic(u, p.alpha, p.c_eta, p.sigma2))?;
    let chi0 = DVector::from_element(p.paths, 1.0);
    let (_, delays) = tagged(m, simulate_delays(&model, &chi0, p.horizon, config.scenario.seed))?;
    let (predicted, chosen, preds, truths) = tagged(m, track_with_selection(&model, &delays, p.budget, chi0))?;
    let score = tagged(m, nmspe(&preds, &truths))?;

    let mut out = Outputs::default();
    out.matrix("delays.csv", &delays);
    out.matrix("predictions.csv", &predicted);
    let lines: String = chosen.iter().map(|c| c.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(",") + "\n").collect();
    out.files.push(("selected_paths.csv".into(), lines.into_bytes()));
    out.plot(&PlotSeries::DelayHeatmap { truth: delays, predicted })?;
    out.metrics.push(MetricsRecord::new("nmspe", score, "relative squared error", prov.clone())?);
    Ok(out)
}

fn detection_problem(config: &ExperimentConfig) -> Result<(TrafficScenario, BatchProblem)> {
    let s = tagged("netmodel", TrafficScenario::generate(&config.scenario))?;
    let op = RoutingOperator::from(&s.routing);
    let (ls, l1) = tagged("anomaly-batch", default_lambdas(&s.observations, &s.mask, op.flows()))?;
    let d = &config.detect;
    let problem = tagged(
        "anomaly-batch",
        BatchProblem::new(s.observations.clone(), s.mask.clone(), op, d.lambda_star.unwrap_or(ls), d.lambda_one.unwrap_or(l1)),
    )?;
    Ok((s, problem))
}

fn score_detection(out: &mut Outputs, module: &str, a_hat: &DMatrix<f64>, truth: &DMatrix<f64>, thresholds: usize, prov: &Provenance) -> Result<()> {
    out.matrix("a_hat.csv", a_hat);
    if truth.iter().any(|v| *v != 0.0) {
        let roc = tagged(module, roc_curve(a_hat, truth, thresholds))?;
        out.metrics.push(MetricsRecord::new("auc", auc(&roc), "area", prov.clone())?);
        out.plot(&PlotSeries::Roc(roc))?;
    }
    Ok(())
}

fn batch_pipeline(config: &ExperimentConfig, prov: &Provenance) -> Result<Outputs> {
    let m = "anomaly-batch";
    let (s, problem) = detection_problem(config)?;
    let opts = BatchOptions { tol: 1e-4 * problem.lambda_star, max_iters: config.detect.max_iters, init: None };
    let sol = tagged(m, solve_batch(&problem, &opts))?;
    let mut out = Outputs::default();
    out.matrix("x_hat.csv", &sol.x_hat);
    score_detection(&mut out, m, &sol.a_hat, &s.anomalies, config.detect.roc_thresholds, prov)?;
    out.metrics.push(MetricsRecord::new("objective", sol.objective, "cost", prov.clone())?);
    out.metrics.push(MetricsRecord::new("iterations", sol.report.iterations as f64, "count", prov.clone())?);
    Ok(out)
}

fn distributed_pipeline(config: &ExperimentConfig, prov: &Provenance) -> Result<Outputs> {
    let m = "anomaly-distributed";
    let (s, problem) = detection_problem(config)?;
    let d = &config.detect;
    let partition = tagged(m, NodePartition::contiguous(problem.links(), ring_graph(d.nodes)))?;
    let admm = AdmmConfig { rounds: d.max_iters, ..AdmmConfig::new(d.rho, problem.lambda_star, problem.lambda_one) };
    let run = tagged(m, run_admm(&problem, &partition, &admm, config.scenario.seed))?;
    let mut out = Outputs::default();
    out.matrix("x_hat.csv", &(&run.p * run.q.transpose()));
    score_detection(&mut out, m, &run.a, &s.anomalies, d.roc_thresholds, prov)?;
    out.plot(&PlotSeries::ConsensusTrace(run.trace.iter().map(|r| r.consensus_residual).collect()))?;
    out.metrics.push(MetricsRecord::new("objective", run.objective, "cost", prov.clone())?);
    out.metrics.push(MetricsRecord::new("rounds", run.trace.len() as f64, "count", prov.clone())?);
    Ok(out)
}

/// Per-slot record without wall-clock timing, so artifacts stay reproducible.
#[derive(Serialize)]
struct SlotLine<'a> {
    t: usize,
    support: Vec<usize>,
    prediction_only: bool,
    precision: Option<f64>,
    recall: Option<f64>,
    #[serde(skip)]
    _marker: std::marker::PhantomData<&'a ()>,
}

fn online_pipeline(config: &ExperimentConfig, prov: &Provenance) -> Result<Outputs> {
    let m = "anomaly-online";
    let (s, problem) = detection_problem(config)?;
    let d = &config.detect;
    let (l, t) = problem.y.shape();
    let observed: Vec<Vec<usize>> = (0..t).map(|k| problem.mask.column_indices(k)).collect();
    let warm = d.rho.max(1).min(t);
    let cfg = OnlineConfig::new(d.rho, d.beta, problem.lambda_star, problem.lambda_one);
    let init = tagged(m, OnlineState::from_warmup(&problem.y.columns(0, warm).into_owned(), cfg))?;
    let schedule = RoutingSchedule::fixed(problem.routing.clone());
    let run = tagged(m, run_stream(init, &problem.y, &observed, &schedule, Some(&s.anomalies), false))?;
    debug_assert_eq!(run.x_hat.nrows(), l);
    let mut out = Outputs::default();
    out.matrix("x_hat.csv", &run.x_hat);
    score_detection(&mut out, m, &run.a_hat, &s.anomalies, d.roc_thresholds, prov)?;
    let mut lines = String::new();
    for r in &run.records {
        let line = SlotLine {
            t: r.t + 1,
            support: r.support.iter().map(|f| f + 1).collect(),
            prediction_only: r.prediction_only,
            precision: r.precision,
            recall: r.recall,
            _marker: std::marker::PhantomData,
        };
        lines.push_str(&serde_json::to_string(&line)?);
        lines.push('\n');
    }
    out.files.push(("slots.jsonl".into(), lines.into_bytes()));
    Ok(out)
}

fn write_all(dir: &Path, out: &Outputs, manifest: &Manifest) -> Result<()> {
    let mut written = Vec::new();
    let result = (|| -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut files: Vec<(String, Vec<u8>)> = out.files.clone();
        files.push(("metrics.json".into(), serde_json::to_vec_pretty(&out.metrics)?));
        files.push((MANIFEST.into(), serde_json::to_vec_pretty(manifest)?));
        for (name, bytes) in files {
            let path = dir.join(&name);
            fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
            written.push(path);
        }
        Ok(())
    })();
    if result.is_err() {
        for path in written {
            let _ = fs::remove_file(path);
        }
    }
    result
}

/// Runs the configured pipeline and writes its artifacts and manifest into
/// `config.output_dir`. Nothing is left on disk when a stage fails. Hashes
/// do not depend on the output location.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<Manifest> {
    let located = ExperimentConfig { output_dir: Default::default(), ..config.clone() };
    let prov = Provenance { module: config.pipeline.module().into(), seed: config.scenario.seed, params_hash: params_hash(&located) };
    let out = match config.pipeline {
        PipelineKind::Dict => dict_pipeline(config, &prov),
        PipelineKind::Kkf => kkf_pipeline(config, &prov),
        PipelineKind::Batch => batch_pipeline(config, &prov),
        PipelineKind::Distributed => distributed_pipeline(config, &prov),
        PipelineKind::Online => online_pipeline(config, &prov),
    }?;
    let metrics_bytes = serde_json::to_vec_pretty(&out.metrics)?;
    let mut artifacts: Vec<Artifact> = out.files.iter().map(|(name, bytes)| Artifact { path: name.clone(), sha256: sha256_hex(bytes) }).collect();
    artifacts.push(Artifact { path: "metrics.json".into(), sha256: sha256_hex(&metrics_bytes) });
    artifacts.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").into(),
        pipeline: config.pipeline,
        config_hash: prov.params_hash.clone(),
        artifacts,
        metrics: out.metrics.clone(),
    };
    write_all(&config.output_dir, &out, &manifest)?;
    Ok(manifest)
}
