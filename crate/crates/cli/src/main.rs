//! `vismpc`: collect data, train the flow model, build task suites,
//! benchmark controllers, run single episodes and serve sessions.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use vismpc_core::bench::{collect_random, default_suite, run_bench, run_task, CollectConfig, Method, TaskSuite};
use vismpc_core::dataset::{load_dataset, save_dataset};
use vismpc_core::flow::learned::{evaluate, load_model, save_model, train};
use vismpc_core::flow::{ModelConfig, ModelParams, PredictorModel, TrainConfig};
use vismpc_core::planner::PlanConfig;
use vismpc_service::{ServiceConfig, DEFAULT_PORT};

#[derive(Parser)]
#[command(name = "vismpc", version, about = "Visual MPC for planar pushing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect random-action episodes into a dataset file.
    Collect(CollectArgs),
    /// Train the flow model on a dataset.
    Train(TrainArgs),
    /// Write the default task suite as TOML.
    Tasks(TasksArgs),
    /// Evaluate controllers on a task suite.
    Bench(BenchArgs),
    /// Run one controller on one task and write the episode log.
    Run(RunArgs),
    /// Serve interactive sessions over HTTP and WebSocket.
    Serve(ServeArgs),
}

#[derive(Args)]
struct CollectArgs {
    /// TOML collection config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short)]
    out: PathBuf,
}

/// Training file layout: `[model]` and `[train]` tables, both optional.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct TrainFile {
    model: ModelConfig,
    train: TrainConfig,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Initialization and shuffling seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Held-out dataset for the validation loss.
    #[arg(long)]
    validate: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    /// JSON training report.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct TasksArgs {
    #[arg(long, default_value_t = 32)]
    grid: usize,
    /// Keep only the first N tasks.
    #[arg(long)]
    limit: Option<usize>,
    /// Override every task's episode length.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    /// `oracle` or a path to a trained model file.
    #[arg(long, default_value = "oracle")]
    model: String,
    /// TOML planner config.
    #[arg(long)]
    plan: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Task suite TOML; the default suite when absent.
    #[arg(long)]
    suite: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',', default_values_t = Method::ALL.map(|m| m.name().to_string()))]
    methods: Vec<String>,
    /// JSON report path.
    #[arg(long, short)]
    out: PathBuf,
    /// Tab-separated per-task table.
    #[arg(long)]
    tsv: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Task index within the suite.
    #[arg(long, default_value_t = 0)]
    task: usize,
    #[arg(long, default_value = "visual-mpc")]
    method: String,
    #[command(flatten)]
    model: ModelArgs,
    /// JSON episode log.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 32)]
    grid: usize,
    /// Default scene seed for new sessions.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    objects: usize,
    /// Episode length per session.
    #[arg(long)]
    steps: Option<usize>,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_suite(path: Option<&Path>) -> Result<TaskSuite> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(TaskSuite::from_toml(&text)?)
        }
        None => Ok(default_suite(32)?),
    }
}

impl ModelArgs {
    fn load(&self) -> Result<(PredictorModel, PlanConfig)> {
        let model = if self.model == "oracle" {
            PredictorModel::oracle()
        } else {
            let params = load_model(&self.model).with_context(|| format!("loading model {}", self.model))?;
            PredictorModel::Learned(Arc::new(params))
        };
        let plan = match &self.plan {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                PlanConfig::from_toml(&text)?
            }
            None => PlanConfig::default(),
        };
        Ok((model, plan))
    }
}

fn collect(args: CollectArgs) -> Result<()> {
    let mut cfg: CollectConfig = match &args.config {
        Some(p) => read_toml(p)?,
        None => CollectConfig::default(),
    };
    cfg.episodes = args.episodes.unwrap_or(cfg.episodes);
    cfg.steps = args.steps.unwrap_or(cfg.steps);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    let ds = collect_random(&cfg)?;
    save_dataset(&ds, &args.out)?;
    eprintln!("{} episodes, {} steps -> {}", ds.episodes.len(), ds.total_steps(), args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    config: TrainConfig,
    loss_curve: Vec<f64>,
    windows: usize,
    iterations: usize,
    validation_mse: Option<f64>,
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let mut file: TrainFile = match &args.config {
        Some(p) => read_toml(p)?,
        None => TrainFile::default(),
    };
    file.train.epochs = args.epochs.unwrap_or(file.train.epochs);
    file.train.seed = args.seed.unwrap_or(file.train.seed);
    let ds = load_dataset(&args.data).with_context(|| format!("loading {}", args.data.display()))?;
    file.model.width = ds.width;
    file.model.height = ds.height;
    let mut params = ModelParams::init(file.model.clone(), file.train.seed)?;
    let report = train(&mut params, &ds, &file.train)?;
    for (i, loss) in report.loss_curve.iter().enumerate() {
        eprintln!("epoch {:>3}  loss {loss:.6}", i + 1);
    }
    let validation_mse = match &args.validate {
        Some(p) => Some(evaluate(&params, &load_dataset(p)?, file.train.horizon)?),
        None => None,
    };
    if let Some(v) = validation_mse {
        eprintln!("validation mse {v:.6}");
    }
    save_model(&params, &args.out)?;
    if let Some(path) = &args.report {
        let summary = TrainSummary {
            config: file.train,
            loss_curve: report.loss_curve,
            windows: report.windows,
            iterations: report.iterations,
            validation_mse,
        };
        write(path, &serde_json::to_string_pretty(&summary)?)?;
    }
    Ok(())
}

fn tasks(args: TasksArgs) -> Result<()> {
    let mut suite = default_suite(args.grid)?;
    if let Some(n) = args.limit {
        if n == 0 {
            bail!("--limit must be at least 1");
        }
        suite.tasks.truncate(n);
    }
    if let Some(steps) = args.steps {
        for t in &mut suite.tasks {
            t.steps = steps;
        }
    }
    write(&args.out, &suite.to_toml()?)
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    names.iter().map(|n| Ok(n.parse::<Method>()?)).collect()
}

fn bench(args: BenchArgs) -> Result<()> {
    let suite = load_suite(args.suite.as_deref())?;
    let (model, plan) = args.model.load()?;
    let methods = parse_methods(&args.methods)?;
    let (report, _) = run_bench(&methods, &suite, &model, &plan)?;
    for m in &report.methods {
        eprintln!("{:<13} {:.3} ± {:.3}", m.method, m.mean, m.std);
    }
    write(&args.out, &report.to_json()?)?;
    if let Some(tsv) = &args.tsv {
        write(tsv, &report.to_tsv())?;
    }
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let suite = load_suite(args.suite.as_deref())?;
    let Some(task) = suite.tasks.get(args.task) else {
        bail!("task index {} out of range (suite has {})", args.task, suite.tasks.len());
    };
    let (model, plan) = args.model.load()?;
    let method: Method = args.method.parse()?;
    let log = run_task(method, task, &model, &plan)?;
    eprintln!("{}: final distance {:.3}", task.name, log.mean_final_distance());
    write(&args.out, &serde_json::to_string(&log)?)
}

fn serve(args: ServeArgs) -> Result<()> {
    let (model, plan) = args.model.load()?;
    let mut config = ServiceConfig {
        grid: args.grid,
        seed: args.seed,
        objects: args.objects,
        model,
        plan,
        ..ServiceConfig::default()
    };
    if let Some(steps) = args.steps {
        config.steps = steps;
    }
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .with_context(|| format!("invalid address {}:{}", args.host, args.port))?;
    let runtime = tokio::runtime::Runtime::new()?;
    eprintln!("listening on http://{addr}");
    runtime.block_on(vismpc_service::serve(config, addr))?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Collect(a) => collect(a),
        Command::Train(a) => train_cmd(a),
        Command::Tasks(a) => tasks(a),
        Command::Bench(a) => bench(a),
        Command::Run(a) => run(a),
        Command::Serve(a) => serve(a),
    }
}
