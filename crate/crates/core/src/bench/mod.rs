//! Data collection, baseline controllers, task-suite evaluation and reports.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, EpisodeRecord};
use crate::error::{Error, Result};
use crate::flow::PredictorModel;
use crate::planner::episode::mean;
use crate::planner::{Controller, EpisodeLog, EpisodeRunner, MpcController, PlanConfig};
use crate::sim::{self, random_scene_with, render, Action, SimParams};

pub mod baselines;
pub mod tasks;

pub use baselines::{NoOp, RandomActions, ServoGoal, ServoVector};
pub use tasks::{DEFAULT_STEPS, default_suite, scenario_occlusion, scenario_rotation, scenario_translate, TaskLabel, TaskSpec, TaskSuite};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectConfig {
    pub episodes: usize,
    pub steps: usize,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub objects: usize,
    pub params: SimParams,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            episodes: 200,
            steps: 15,
            seed: 0,
            width: 32,
            height: 32,
            objects: 3,
            params: SimParams::default(),
        }
    }
}

/// Self-supervised data: random scenes driven by uniformly random targets.
pub fn collect_random(cfg: &CollectConfig) -> Result<Dataset> {
    if cfg.episodes == 0 || cfg.steps == 0 {
        return Err(Error::Precondition("collect needs at least one episode and step".into()));
    }
    let kappa = cfg.params.required_radius();
    let mut ds = Dataset::new(cfg.width, cfg.height, kappa, cfg.seed);
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.episodes {
        let scene_seed = master.random::<u64>();
        let mut rng = ChaCha8Rng::seed_from_u64(master.random::<u64>());
        let mut world = random_scene_with(scene_seed, cfg.objects, cfg.width, cfg.height, cfg.params)?;
        let b = world.bounds();
        let mut frames = Vec::with_capacity(cfg.steps);
        let mut states = Vec::with_capacity(cfg.steps);
        let mut actions = Vec::with_capacity(cfg.steps);
        for _ in 0..cfg.steps {
            let a = Action::new(rng.random_range(0.0..=b.x), rng.random_range(0.0..=b.y));
            frames.push(render(&world));
            states.push(world.pusher.to_array());
            actions.push(a.to_array());
            world = sim::step(&world, &a)?;
        }
        ds.push(EpisodeRecord::new(frames, states, actions)?)?;
    }
    Ok(ds)
}

/// Fraction of episodes in which some object moves between frames.
pub fn motion_fraction(ds: &Dataset) -> f64 {
    if ds.episodes.is_empty() {
        return 0.0;
    }
    let moving = ds
        .episodes
        .iter()
        .filter(|ep| {
            ep.frames.windows(2).zip(&ep.states).any(|(f, s)| {
                // Pixels away from the pusher that changed mean an object moved.
                let (w, h) = f[0].dims();
                (0..h).any(|y| {
                    (0..w).any(|x| {
                        let far = (x as f64 - s[0]).powi(2) + (y as f64 - s[1]).powi(2) > 36.0;
                        far && (f[0].get(x, y) - f[1].get(x, y)).abs() > 1e-6 && f[0].get(x, y) < 0.99 && f[1].get(x, y) < 0.99
                    })
                })
            })
        })
        .count();
    moving as f64 / ds.episodes.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Initial,
    Random,
    ServoGoal,
    ServoVector,
    VisualMpc,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Initial,
        Method::Random,
        Method::ServoGoal,
        Method::ServoVector,
        Method::VisualMpc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Initial => "initial",
            Method::Random => "random",
            Method::ServoGoal => "servo-goal",
            Method::ServoVector => "servo-vector",
            Method::VisualMpc => "visual-mpc",
        }
    }

    pub fn controller(self, model: &PredictorModel, plan: &PlanConfig) -> Box<dyn Controller> {
        match self {
            Method::Initial => Box::new(NoOp),
            Method::Random => Box::new(RandomActions),
            Method::ServoGoal => Box::new(ServoGoal),
            Method::ServoVector => Box::new(ServoVector),
            Method::VisualMpc => Box::new(MpcController::new(model.clone(), plan.clone())),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Runs one method on one task. Every method sees the same world and seed.
pub fn run_task(method: Method, task: &TaskSpec, model: &PredictorModel, plan: &PlanConfig) -> Result<EpisodeLog> {
    let world = task.world()?;
    let runner = EpisodeRunner::new(world, task.goal.clone(), method.controller(model, plan), task.seed)?;
    runner.run(task.steps)
}

/// Logs for every `(method, task)` pair, indexed `[method][task]`.
pub fn evaluate(
    methods: &[Method],
    tasks: &[TaskSpec],
    model: &PredictorModel,
    plan: &PlanConfig,
) -> Result<Vec<Vec<EpisodeLog>>> {
    let jobs: Vec<(usize, usize)> = (0..methods.len())
        .flat_map(|m| (0..tasks.len()).map(move |t| (m, t)))
        .collect();
    let logs = jobs
        .par_iter()
        .map(|&(m, t)| run_task(methods[m], &tasks[t], model, plan))
        .collect::<Result<Vec<_>>>()?;
    let mut out: Vec<Vec<EpisodeLog>> = (0..methods.len()).map(|_| Vec::with_capacity(tasks.len())).collect();
    for ((m, _), log) in jobs.into_iter().zip(logs) {
        out[m].push(log);
    }
    Ok(out)
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    /// Mean over tasks of the per-task mean tracked-pixel distance.
    pub mean: f64,
    pub std: f64,
    /// Same statistics for the simulator's material points.
    pub true_mean: f64,
    pub true_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task: String,
    pub label: TaskLabel,
    pub seed: u64,
    /// Per method, in report method order.
    pub distances: Vec<f64>,
    pub true_distances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub grid: [usize; 2],
    pub model: String,
    pub plan: PlanConfig,
    pub methods: Vec<MethodSummary>,
    pub tasks: Vec<TaskRow>,
}

impl BenchReport {
    /// Pure function of the logs, indexed `[method][task]`.
    pub fn from_logs(
        methods: &[Method],
        tasks: &[TaskSpec],
        logs: &[Vec<EpisodeLog>],
        model: &str,
        plan: &PlanConfig,
    ) -> Result<Self> {
        if logs.len() != methods.len() || logs.iter().any(|l| l.len() != tasks.len()) {
            return Err(Error::DimensionMismatch("logs do not cover every method and task".into()));
        }
        let grid = tasks
            .first()
            .map_or([0, 0], |t| [t.scene.width, t.scene.height]);
        let summaries = methods
            .iter()
            .zip(logs)
            .map(|(m, ls)| {
                let d: Vec<f64> = ls.iter().map(EpisodeLog::mean_final_distance).collect();
                let td: Vec<f64> = ls.iter().map(EpisodeLog::mean_true_final_distance).collect();
                MethodSummary {
                    method: m.name().to_string(),
                    mean: mean(&d),
                    std: std_dev(&d),
                    true_mean: mean(&td),
                    true_std: std_dev(&td),
                }
            })
            .collect();
        let rows = tasks
            .iter()
            .enumerate()
            .map(|(t, task)| TaskRow {
                task: task.name.clone(),
                label: task.label,
                seed: task.seed,
                distances: logs.iter().map(|ls| ls[t].mean_final_distance()).collect(),
                true_distances: logs.iter().map(|ls| ls[t].mean_true_final_distance()).collect(),
            })
            .collect();
        Ok(Self {
            grid,
            model: model.to_string(),
            plan: plan.clone(),
            methods: summaries,
            tasks: rows,
        })
    }

    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    /// Tab-separated table: a summary block, then one row per task.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "method\tmean\tstd\ttrue_mean\ttrue_std");
        for m in &self.methods {
            let _ = writeln!(
                s,
                "{}\t{:.3}\t{:.3}\t{:.3}\t{:.3}",
                m.method, m.mean, m.std, m.true_mean, m.true_std
            );
        }
        s.push('\n');
        let _ = write!(s, "task\tlabel\tseed");
        for m in &self.methods {
            let _ = write!(s, "\t{}", m.method);
        }
        s.push('\n');
        for row in &self.tasks {
            let label = serde_json::to_value(row.label)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            let _ = write!(s, "{}\t{}\t{}", row.task, label, row.seed);
            for d in &row.distances {
                let _ = write!(s, "\t{d:.3}");
            }
            s.push('\n');
        }
        s
    }
}

/// Evaluate every method on the suite and build the report.
pub fn run_bench(
    methods: &[Method],
    suite: &TaskSuite,
    model: &PredictorModel,
    plan: &PlanConfig,
) -> Result<(BenchReport, Vec<Vec<EpisodeLog>>)> {
    let logs = evaluate(methods, &suite.tasks, model, plan)?;
    let report = BenchReport::from_logs(methods, &suite.tasks, &logs, model.name(), plan)?;
    Ok((report, logs))
}
