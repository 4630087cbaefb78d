//! Command-line surface.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use netcarto_core::anomaly_batch::{default_lambdas, solve_batch, BatchOptions, BatchProblem, RoutingOperator};
use netcarto_core::anomaly_distributed::{ring_graph, run_admm, AdmmConfig, NodePartition};
use netcarto_core::anomaly_online::{run_stream, OnlineConfig, OnlineState, RoutingSchedule};
use netcarto_core::delay_kkf::{greedy_select_paths, kalman_update, krig_predict, simulate_delays, KkfModel, KkfState, PathSelection};
use netcarto_core::linalg;
use netcarto_core::metrics::{auc, roc_curve};
use netcarto_core::netmodel::{gram, laplacian, RoutingMatrix, SamplingMask, ScenarioConfig, TrafficScenario};
use netcarto_core::traffic_dict::{impute_matrix, train_dictionary, Dictionary, ImputeOptions, TrainOptions, TrainingSet};
use serde::{Deserialize, Serialize};

use crate::config::{env_seed, env_threads, ExperimentConfig};
use crate::csvio::{format_ids, load_matrix_csv, write_matrix_csv, MissingPolicy};
use crate::oracle::write_fixtures;
use crate::pipeline::{run_pipeline, MANIFEST};
use crate::plot::{emit_plot_data, PlotSeries};

#[derive(Debug, Parser)]
#[command(name = "netcarto", version, about = "Network cartography from partial measurements")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic traffic scenario.
    Generate(GenerateArgs),
    /// Dictionary learning for link-count imputation.
    #[command(subcommand)]
    Dict(DictCommand),
    /// Kriged Kalman filtering of path delays.
    #[command(subcommand)]
    Kkf(KkfCommand),
    /// Sparse-plus-low-rank anomaly detection.
    #[command(subcommand)]
    Detect(DetectCommand),
    /// Run a pipeline config and write artifacts plus a hashed manifest.
    Run(RunArgs),
    /// NRE of a dictionary pipeline over observed-link counts.
    Sweep(SweepArgs),
    /// Write golden fixtures from the brute-force oracles.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Scenario JSON; defaults to the standard desk scenario.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MatrixInput {
    /// Link observations, links x slots; empty cells are unobserved.
    #[arg(long)]
    pub observations: PathBuf,
    /// Routing matrix, links x flows.
    #[arg(long)]
    pub routing: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum DictCommand {
    Train {
        #[command(flatten)]
        input: MatrixInput,
        #[arg(long, default_value_t = 0.1)]
        lw: f64,
        #[arg(long, default_value_t = 1e-5)]
        lg: f64,
        #[arg(long)]
        atoms: Option<usize>,
        #[arg(long, default_value_t = 50)]
        outer_iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Dictionary CSV, links x atoms.
        #[arg(long)]
        out: PathBuf,
    },
    Impute {
        #[command(flatten)]
        input: MatrixInput,
        #[arg(long)]
        dict: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        lw: f64,
        #[arg(long, default_value_t = 1e-5)]
        lg: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct KkfModelArgs {
    /// Path-link incidence, paths x links.
    #[arg(long)]
    pub paths: PathBuf,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long)]
    pub c_eta: f64,
    #[arg(long)]
    pub sigma2: f64,
}

impl KkfModelArgs {
    fn model(&self) -> Result<KkfModel> {
        let u = load_matrix_csv(&self.paths, MissingPolicy::Error)?.values;
        KkfModel::isotropic(u, self.alpha, self.c_eta, self.sigma2).map_err(|e| anyhow!("delay-kkf: {e}"))
    }
}

#[derive(Debug, Subcommand)]
pub enum KkfCommand {
    /// Draw a trend trajectory and delays from the model.
    Simulate {
        #[command(flatten)]
        model: KkfModelArgs,
        #[arg(long)]
        horizon: usize,
        #[arg(long, default_value_t = 1.0)]
        initial: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track measured delays (empty cells unmeasured) and predict the rest.
    Track {
        #[command(flatten)]
        model: KkfModelArgs,
        #[arg(long)]
        delays: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy choice of paths to measure next.
    Select {
        #[command(flatten)]
        model: KkfModelArgs,
        #[arg(long)]
        budget: usize,
        /// Prior error covariance, paths x paths; identity when absent.
        #[arg(long)]
        covariance: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Link observations, links x slots; empty cells are unobserved.
    #[arg(long)]
    pub observations: PathBuf,
    #[arg(long)]
    pub routing: Option<PathBuf>,
    /// Ground-truth anomalies, flows x slots, for ROC output.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub lstar: Option<f64>,
    #[arg(long)]
    pub lone: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum DetectCommand {
    Batch {
        #[command(flatten)]
        common: DetectArgs,
        #[arg(long, default_value_t = 3000)]
        max_iters: usize,
    },
    Distributed {
        #[command(flatten)]
        common: DetectArgs,
        #[arg(long, default_value_t = 4)]
        nodes: usize,
        #[arg(long, default_value_t = 5)]
        rho: usize,
        #[arg(long, default_value_t = 500)]
        rounds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    Online {
        #[command(flatten)]
        common: DetectArgs,
        /// JSON list of `{"start": slot, "routing": file}` segments, 1-indexed slots.
        #[arg(long)]
        routing_seq: Option<PathBuf>,
        #[arg(long, default_value_t = 0.95)]
        beta: f64,
        #[arg(long, default_value_t = 5)]
        rho: usize,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Dictionary pipeline config.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![30, 35, 40, 45, 50])]
    pub sizes: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub out: PathBuf,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn core<T>(module: &str, r: netcarto_core::Result<T>) -> Result<T> {
    r.map_err(|e| anyhow!("{module}: {e}"))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => generate(args),
        Command::Dict(cmd) => dict(cmd),
        Command::Kkf(cmd) => kkf(cmd),
        Command::Detect(cmd) => detect(cmd),
        Command::Run(args) => {
            let text = fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
            let config = ExperimentConfig::from_json(&text)?.with_env_seed()?;
            let manifest = run_pipeline(&config)?;
            println!("{}", config.output_dir.join(MANIFEST).display());
            for m in &manifest.metrics {
                println!("{} = {} {}", m.name, m.value, m.units);
            }
            Ok(())
        }
        Command::Sweep(args) => sweep(args),
        Command::Oracle(args) => {
            for path in write_fixtures(&args.out)? {
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}

fn generate(args: GenerateArgs) -> Result<()> {
    let mut cfg: ScenarioConfig = match &args.scenario {
        Some(p) => read_json(p)?,
        None => ScenarioConfig::standard(0),
    };
    if let Some(seed) = env_seed()? {
        cfg.seed = seed;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let s = core("netmodel", TrafficScenario::generate(&cfg))?;
    let dir = &args.out;
    create_dir(dir)?;
    write_matrix_csv(&dir.join("routing.csv"), &s.routing.entries, None)?;
    write_matrix_csv(&dir.join("od_traffic.csv"), &s.od_traffic, None)?;
    write_matrix_csv(&dir.join("anomalies.csv"), &s.anomalies, None)?;
    write_matrix_csv(&dir.join("link_traffic.csv"), &s.link_traffic, None)?;
    write_matrix_csv(&dir.join("observations.csv"), &s.observations, Some(&s.mask))?;
    let links: String = s.topology.links.iter().map(|(a, b)| format!("{},{}\n", a + 1, b + 1)).collect();
    fs::write(dir.join("links.csv"), links)?;
    let flows: String = s.routing.flows.iter().map(|(a, b)| format!("{},{}\n", a + 1, b + 1)).collect();
    fs::write(dir.join("flows.csv"), flows)?;
    write_json(&dir.join("scenario.json"), &cfg)?;
    println!("{} links, {} flows, {} slots -> {}", s.routing.link_count(), s.routing.flow_count(), s.observations.ncols(), dir.display());
    Ok(())
}

fn load_routing(path: &Path) -> Result<RoutingMatrix> {
    RoutingMatrix::from_dense(load_matrix_csv(path, MissingPolicy::Error)?.values).map_err(|e| anyhow!("netmodel: {e}"))
}

fn load_observations(input: &MatrixInput) -> Result<(DMatrix<f64>, SamplingMask, RoutingMatrix)> {
    let y = load_matrix_csv(&input.observations, MissingPolicy::Mask)?;
    let routing = load_routing(&input.routing)?;
    if routing.link_count() != y.values.nrows() {
        bail!("routing has {} links but observations have {} rows", routing.link_count(), y.values.nrows());
    }
    let mask = y.mask_or_full();
    Ok((y.values, mask, routing))
}

fn dict(cmd: DictCommand) -> Result<()> {
    match cmd {
        DictCommand::Train { input, lw, lg, atoms, outer_iters, seed, out } => {
            let (y, mask, routing) = load_observations(&input)?;
            let lap = core("netmodel", laplacian(&gram(&routing)))?;
            let links = y.nrows();
            let data = core("traffic-dict", TrainingSet::from_masked(&y, &mask, lap, lw, lg))?;
            let opts = TrainOptions { atoms: atoms.unwrap_or(2 * links), outer_iters, ..TrainOptions::for_links(links, seed) };
            let (d, _, trace) = core("traffic-dict", train_dictionary(&data, &opts))?;
            write_matrix_csv(&out, &d.basis, None)?;
            println!("{} sweeps, final objective {:.6e}", trace.objective.len() - 1, trace.objective.last().copied().unwrap_or(f64::NAN));
            Ok(())
        }
        DictCommand::Impute { input, dict, lw, lg, out } => {
            let (y, mask, routing) = load_observations(&input)?;
            let lap = core("netmodel", laplacian(&gram(&routing)))?;
            let basis = load_matrix_csv(&dict, MissingPolicy::Error)?.values;
            let d = core("traffic-dict", Dictionary::new(basis))?;
            let x = core("traffic-dict", impute_matrix(&y, &mask, &d, &lap, &ImputeOptions::new(lw, lg)))?;
            write_matrix_csv(&out, &x, None)
        }
    }
}

fn kkf(cmd: KkfCommand) -> Result<()> {
    match cmd {
        KkfCommand::Simulate { model, horizon, initial, seed, out } => {
            let m = model.model()?;
            let seed = env_seed()?.unwrap_or(seed);
            let (chi, d) = core("delay-kkf", simulate_delays(&m, &DVector::from_element(m.path_count(), initial), horizon, seed))?;
            create_dir(&out)?;
            write_matrix_csv(&out.join("trend.csv"), &chi, None)?;
            write_matrix_csv(&out.join("delays.csv"), &d, None)
        }
        KkfCommand::Track { model, delays, out } => {
            let m = model.model()?;
            let loaded = load_matrix_csv(&delays, MissingPolicy::Mask)?;
            let mask = loaded.mask_or_full();
            let (p, t) = loaded.values.shape();
            if p != m.path_count() {
                bail!("delays have {p} rows but the model has {} paths", m.path_count());
            }
            let first = mask.column_indices(0);
            let start = if first.is_empty() { 0.0 } else { first.iter().map(|&i| loaded.values[(i, 0)]).sum::<f64>() / first.len() as f64 };
            let mut state = core("delay-kkf", KkfState::new(DVector::from_element(p, start), DMatrix::identity(p, p)))?;
            let mut trend = DMatrix::zeros(p, t);
            let mut predicted = DMatrix::zeros(p, t);
            for k in 0..t {
                let sel = core("delay-kkf", PathSelection::new(mask.column_indices(k), p))?;
                let obs = linalg::select_entries(&loaded.values.column(k).into_owned(), &sel.chosen);
                state = core("delay-kkf", kalman_update(&state, &m, &sel, &obs))?;
                let (pred, _) = core("delay-kkf", krig_predict(&state, &m, &sel, &obs))?;
                for (i, &path) in sel.chosen.iter().enumerate() {
                    predicted[(path, k)] = obs[i];
                }
                for (i, path) in sel.complement().into_iter().enumerate() {
                    predicted[(path, k)] = pred[i];
                }
                trend.set_column(k, &state.chi_hat);
            }
            create_dir(&out)?;
            write_matrix_csv(&out.join("trend.csv"), &trend, None)?;
            write_matrix_csv(&out.join("predictions.csv"), &predicted, None)
        }
        KkfCommand::Select { model, budget, covariance, out } => {
            let m = model.model()?;
            let p = m.path_count();
            let prior = match covariance {
                Some(path) => load_matrix_csv(&path, MissingPolicy::Error)?.values,
                None => DMatrix::identity(p, p),
            };
            let sel = core("delay-kkf", greedy_select_paths(&m, &prior, budget))?;
            let text = format_ids(&sel.chosen);
            match out {
                Some(path) => fs::write(&path, text).with_context(|| format!("writing {}", path.display())),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingSegment {
    /// First slot of the segment, 1-indexed.
    pub start: usize,
    pub routing: PathBuf,
}

fn load_schedule(path: &Path) -> Result<RoutingSchedule> {
    let segments: Vec<RoutingSegment> = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::with_capacity(segments.len());
    for seg in segments {
        if seg.start == 0 {
            bail!("routing segments use 1-indexed slots; got start 0");
        }
        let file = if seg.routing.is_absolute() { seg.routing.clone() } else { base.join(&seg.routing) };
        out.push((seg.start - 1, RoutingOperator::from(&load_routing(&file)?)));
    }
    RoutingSchedule::new(out).map_err(|e| anyhow!("anomaly-online: {e}"))
}

#[derive(Serialize)]
struct DetectSummary {
    lambda_star: f64,
    lambda_one: f64,
    objective: Option<f64>,
    auc: Option<f64>,
    seconds: f64,
}

fn detect(cmd: DetectCommand) -> Result<()> {
    let started = Instant::now();
    let common = match &cmd {
        DetectCommand::Batch { common, .. } | DetectCommand::Distributed { common, .. } | DetectCommand::Online { common, .. } => common,
    };
    let y = load_matrix_csv(&common.observations, MissingPolicy::Mask)?;
    let mask = y.mask_or_full();
    let schedule = match &cmd {
        DetectCommand::Online { routing_seq: Some(seq), .. } => Some(load_schedule(seq)?),
        _ => None,
    };
    let routing = match (&common.routing, &schedule) {
        (Some(p), _) => RoutingOperator::from(&load_routing(p)?),
        (None, Some(s)) => s.at(0).clone(),
        (None, None) => bail!("--routing is required (or --routing-seq for online detection)"),
    };
    let (ls, l1) = core("anomaly-batch", default_lambdas(&y.values, &mask, routing.flows()))?;
    let (ls, l1) = (common.lstar.unwrap_or(ls), common.lone.unwrap_or(l1));
    let truth = common.truth.as_ref().map(|p| load_matrix_csv(p, MissingPolicy::Error)).transpose()?.map(|m| m.values);
    create_dir(&common.out)?;
    let problem = core("anomaly-batch", BatchProblem::new(y.values.clone(), mask.clone(), routing.clone(), ls, l1))?;

    let (x_hat, a_hat, objective) = match &cmd {
        DetectCommand::Batch { max_iters, .. } => {
            let sol = core("anomaly-batch", solve_batch(&problem, &BatchOptions { tol: 1e-4 * ls, max_iters: *max_iters, init: None }))?;
            (sol.x_hat, sol.a_hat, Some(sol.objective))
        }
        DetectCommand::Distributed { nodes, rho, rounds, seed, .. } => {
            let partition = core("anomaly-distributed", NodePartition::contiguous(problem.links(), ring_graph(*nodes)))?;
            let config = AdmmConfig { rounds: *rounds, ..AdmmConfig::new(*rho, ls, l1) };
            let run = core("anomaly-distributed", run_admm(&problem, &partition, &config, *seed))?;
            emit_plot_data(&common.out, &PlotSeries::ConsensusTrace(run.trace.iter().map(|r| r.consensus_residual).collect()))?;
            (&run.p * run.q.transpose(), run.a, Some(run.objective))
        }
        DetectCommand::Online { beta, rho, .. } => {
            let t = y.values.ncols();
            let observed: Vec<Vec<usize>> = (0..t).map(|k| mask.column_indices(k)).collect();
            let cfg = OnlineConfig::new(*rho, *beta, ls, l1);
            let warm = (*rho).min(t);
            let init = core("anomaly-online", OnlineState::from_warmup(&y.values.columns(0, warm).into_owned(), cfg))?;
            let schedule = schedule.unwrap_or_else(|| RoutingSchedule::fixed(routing.clone()));
            let run = core("anomaly-online", run_stream(init, &y.values, &observed, &schedule, truth.as_ref(), false))?;
            let mut lines = String::new();
            for r in &run.records {
                let support: Vec<usize> = r.support.iter().map(|f| f + 1).collect();
                lines.push_str(&serde_json::json!({ "t": r.t + 1, "support": support, "micros": r.micros as u64 }).to_string());
                lines.push('\n');
            }
            fs::write(common.out.join("slots.jsonl"), lines)?;
            (run.x_hat, run.a_hat, None)
        }
    };
    write_matrix_csv(&common.out.join("x_hat.csv"), &x_hat, None)?;
    write_matrix_csv(&common.out.join("a_hat.csv"), &a_hat, None)?;
    let auc_value = match &truth {
        Some(tr) => {
            let roc = core("metrics", roc_curve(&a_hat, tr, 200))?;
            emit_plot_data(&common.out, &PlotSeries::Roc(roc.clone()))?;
            Some(auc(&roc))
        }
        None => None,
    };
    let summary = DetectSummary { lambda_star: ls, lambda_one: l1, objective, auc: auc_value, seconds: started.elapsed().as_secs_f64() };
    write_json(&common.out.join("summary.json"), &summary)?;
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let base = ExperimentConfig::from_json(&text)?.with_env_seed()?;
    if base.pipeline != crate::config::PipelineKind::Dict {
        bail!("sweep runs dictionary pipelines; config has {:?}", base.pipeline);
    }
    if args.sizes.is_empty() {
        bail!("no observed-link counts to sweep");
    }
    let configs: Vec<ExperimentConfig> = args
        .sizes
        .iter()
        .map(|&s| {
            let mut c = base.clone();
            c.dict.observed_links = Some(s);
            c.output_dir = args.out.join(format!("S{s}"));
            c
        })
        .collect();
    let workers = env_threads()?.min(configs.len());
    let results = run_cells(&configs, workers);
    let mut points = Vec::new();
    for (cfg, res) in configs.iter().zip(results) {
        let manifest = res?;
        let nre = manifest.metrics.iter().find(|m| m.name == "nre").ok_or_else(|| anyhow!("pipeline produced no NRE"))?;
        points.push((cfg.dict.observed_links.unwrap(), nre.value));
    }
    for path in emit_plot_data(&args.out, &PlotSeries::NreVsS(points))? {
        println!("{}", path.display());
    }
    Ok(())
}

/// Runs independent pipeline cells on up to `workers` threads; results keep
/// the input order.
fn run_cells(configs: &[ExperimentConfig], workers: usize) -> Vec<Result<crate::pipeline::Manifest>> {
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<Result<crate::pipeline::Manifest>>>> = configs.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= configs.len() {
                    break;
                }
                *slots[i].lock().unwrap() = Some(run_pipeline(&configs[i]));
            });
        }
    });
    slots.into_iter().map(|s| s.into_inner().unwrap().expect("every cell ran")).collect()
}
