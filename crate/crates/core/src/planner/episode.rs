//! Closed-loop episodes: choose an action, execute it, observe, re-track the
//! designated pixels, repeat.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{plan, GoalSpec, History, Phase, PlanConfig, Sampler};
use crate::dataset::EpisodeRecord;
use crate::error::Result;
use crate::flow::PredictorModel;
use crate::grid::{Image, Pixel, PixelDistribution};
use crate::sim::{self, render, Action, Surface, Vec2, WorldState};
use crate::tracker::{track_all, TrackConfig};

/// What a controller sees before acting.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub t: usize,
    pub world: &'a WorldState,
    pub history: History<'a>,
    pub goal: &'a GoalSpec,
    /// Current designated-pixel estimates, paired with the goal pairs.
    pub pixels: &'a [Pixel],
    /// The goal was (re)set since the previous decision.
    pub goal_changed: bool,
}

#[derive(Debug, Clone)]
pub struct Decision {
    pub action: Action,
    pub objective: Option<f64>,
    /// Predicted final distributions of the designated pixels, if any.
    pub distributions: Vec<PixelDistribution>,
}

impl Decision {
    pub fn action(action: Action) -> Self {
        Self {
            action,
            objective: None,
            distributions: Vec::new(),
        }
    }
}

pub trait Controller: Send {
    fn name(&self) -> &str;
    fn decide(&mut self, ctx: &StepContext<'_>, rng: &mut ChaCha8Rng) -> Result<Decision>;
}

/// Plans with CEM at every step and executes the first planned action.
pub struct MpcController {
    model: PredictorModel,
    cfg: PlanConfig,
    last: Option<Sampler>,
}

impl MpcController {
    pub fn new(model: PredictorModel, cfg: PlanConfig) -> Self {
        Self {
            model,
            cfg,
            last: None,
        }
    }
}

impl Controller for MpcController {
    fn name(&self) -> &str {
        "visual-mpc"
    }

    fn decide(&mut self, ctx: &StepContext<'_>, rng: &mut ChaCha8Rng) -> Result<Decision> {
        let phase = if self.last.is_none() || ctx.goal_changed {
            Phase::Initial
        } else {
            Phase::Replan
        };
        let start = match phase {
            Phase::Replan if self.cfg.warm_start => self.last.as_ref(),
            _ => None,
        };
        let predictor = self.model.predictor_at(ctx.world);
        let result = plan(
            predictor.as_ref(),
            &ctx.history,
            ctx.goal,
            ctx.pixels,
            &self.cfg,
            phase,
            start,
            rng,
        )?;
        self.last = Some(result.sampler);
        Ok(Decision {
            action: result.actions[0],
            objective: Some(result.objective),
            distributions: result.distributions,
        })
    }
}

/// The material point under a designated pixel, followed exactly through
/// the simulator for evaluation.
#[derive(Debug, Clone, Copy)]
struct Anchor {
    surface: Surface,
    point: Vec2,
}

impl Anchor {
    fn at(world: &WorldState, p: Pixel) -> Self {
        Self {
            surface: world.surface_at(p.x, p.y),
            point: Vec2::new(p.x as f64, p.y as f64),
        }
    }

    fn advance(&mut self, world: &WorldState, next: &WorldState) {
        self.point = match self.surface {
            Surface::Background => self.point,
            Surface::Pusher => self.point + (next.pusher - world.pusher),
            Surface::Object(i) => world.objects[i].carry(&next.objects[i], self.point),
        };
    }
}

/// Everything observed during one episode. Per-step vectors have one entry
/// per executed step; `frames`, `worlds`, `pixels` and `true_points` also
/// hold the initial observation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub method: String,
    pub goal: GoalSpec,
    /// `(step, goal)` for every goal set after the start.
    pub goal_changes: Vec<(usize, GoalSpec)>,
    pub frames: Vec<Image>,
    pub worlds: Vec<WorldState>,
    pub actions: Vec<Action>,
    pub objectives: Vec<Option<f64>>,
    /// Tracked designated-pixel estimates.
    pub pixels: Vec<Vec<Pixel>>,
    /// Simulator positions of the designated material points.
    pub true_points: Vec<Vec<Vec2>>,
}

fn distances(points: impl Iterator<Item = (f64, f64)>, goal: &GoalSpec) -> Vec<f64> {
    points
        .zip(goal.goals())
        .map(|((x, y), g)| ((x - g.x as f64).powi(2) + (y - g.y as f64).powi(2)).sqrt())
        .collect()
}

impl EpisodeLog {
    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    /// Euclidean distance from each final tracked pixel to its goal.
    pub fn final_distances(&self) -> Vec<f64> {
        let last = self.pixels.last().expect("log holds the initial observation");
        distances(last.iter().map(|p| (p.x as f64, p.y as f64)), &self.goal)
    }

    /// Euclidean distance from each final material point to its goal.
    pub fn true_final_distances(&self) -> Vec<f64> {
        let last = self.true_points.last().expect("log holds the initial observation");
        distances(last.iter().map(|p| (p.x, p.y)), &self.goal)
    }

    pub fn mean_final_distance(&self) -> f64 {
        mean(&self.final_distances())
    }

    pub fn mean_true_final_distance(&self) -> f64 {
        mean(&self.true_final_distances())
    }

    pub fn final_world(&self) -> &WorldState {
        self.worlds.last().expect("log holds the initial world")
    }

    /// Dataset form: one row per observation, the final one paired with a
    /// stay-in-place action.
    pub fn to_record(&self) -> Result<EpisodeRecord> {
        let states: Vec<[f64; 2]> = self.worlds.iter().map(|w| w.pusher.to_array()).collect();
        let mut actions: Vec<[f64; 2]> = self.actions.iter().map(|a| a.to_array()).collect();
        actions.push(self.final_world().pusher.to_array());
        EpisodeRecord::new(self.frames.clone(), states, actions)
    }

    pub fn summary(&self) -> EpisodeSummary {
        EpisodeSummary {
            method: self.method.clone(),
            goal: self.goal.to_string(),
            steps: self.steps(),
            actions: self.actions.iter().map(|a| a.to_array()).collect(),
            objectives: self.objectives.clone(),
            pixels: self.pixels.iter().map(|ps| ps.iter().map(|p| [p.x, p.y]).collect()).collect(),
            final_distances: self.final_distances(),
            true_final_distances: self.true_final_distances(),
            mean_final_distance: self.mean_final_distance(),
        }
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Human-readable digest of an [`EpisodeLog`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub method: String,
    pub goal: String,
    pub steps: usize,
    pub actions: Vec<[f64; 2]>,
    pub objectives: Vec<Option<f64>>,
    pub pixels: Vec<Vec<[usize; 2]>>,
    pub final_distances: Vec<f64>,
    pub true_final_distances: Vec<f64>,
    pub mean_final_distance: f64,
}

/// Result of one executed step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub t: usize,
    pub action: Action,
    pub objective: Option<f64>,
    pub distributions: Vec<PixelDistribution>,
    pub pixels: Vec<Pixel>,
    pub frame: Image,
}

/// Steps a controller through the simulator one decision at a time. Goals
/// may be replaced between steps.
pub struct EpisodeRunner {
    world: WorldState,
    controller: Box<dyn Controller>,
    goal: GoalSpec,
    pixels: Vec<Pixel>,
    anchors: Vec<Anchor>,
    prev_image: Image,
    prev_state: Vec2,
    goal_changed: bool,
    rng: ChaCha8Rng,
    track_cfg: TrackConfig,
    log: EpisodeLog,
}

impl EpisodeRunner {
    pub fn new(world: WorldState, goal: GoalSpec, controller: Box<dyn Controller>, seed: u64) -> Result<Self> {
        goal.validate(world.width, world.height)?;
        let image = render(&world);
        let pixels = goal.designated();
        let anchors: Vec<Anchor> = pixels.iter().map(|&p| Anchor::at(&world, p)).collect();
        let log = EpisodeLog {
            method: controller.name().to_string(),
            goal: goal.clone(),
            goal_changes: Vec::new(),
            frames: vec![image.clone()],
            worlds: vec![world.clone()],
            actions: Vec::new(),
            objectives: Vec::new(),
            pixels: vec![pixels.clone()],
            true_points: vec![anchors.iter().map(|a| a.point).collect()],
        };
        Ok(Self {
            prev_state: world.pusher,
            world,
            controller,
            goal,
            pixels,
            anchors,
            prev_image: image,
            goal_changed: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            track_cfg: TrackConfig::default(),
            log,
        })
    }

    pub fn with_tracker(mut self, cfg: TrackConfig) -> Self {
        self.track_cfg = cfg;
        self
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn goal(&self) -> &GoalSpec {
        &self.goal
    }

    pub fn pixels(&self) -> &[Pixel] {
        &self.pixels
    }

    pub fn frame(&self) -> &Image {
        self.log.frames.last().expect("log holds the initial observation")
    }

    pub fn steps_taken(&self) -> usize {
        self.log.actions.len()
    }

    pub fn log(&self) -> &EpisodeLog {
        &self.log
    }

    pub fn into_log(self) -> EpisodeLog {
        self.log
    }

    /// Replace the goal; designated pixels restart at the new pairs.
    pub fn set_goal(&mut self, goal: GoalSpec) -> Result<()> {
        goal.validate(self.world.width, self.world.height)?;
        self.pixels = goal.designated();
        self.anchors = self.pixels.iter().map(|&p| Anchor::at(&self.world, p)).collect();
        *self.log.pixels.last_mut().expect("initial pixels") = self.pixels.clone();
        *self.log.true_points.last_mut().expect("initial points") = self.anchors.iter().map(|a| a.point).collect();
        self.log.goal = goal.clone();
        self.log.goal_changes.push((self.steps_taken(), goal.clone()));
        self.goal = goal;
        self.goal_changed = true;
        Ok(())
    }

    pub fn step(&mut self) -> Result<StepOutcome> {
        let t = self.steps_taken();
        let cur_image = self.log.frames.last().expect("initial frame").clone();
        let ctx = StepContext {
            t,
            world: &self.world,
            history: History {
                prev_image: &self.prev_image,
                cur_image: &cur_image,
                prev_state: self.prev_state,
                cur_state: self.world.pusher,
            },
            goal: &self.goal,
            pixels: &self.pixels,
            goal_changed: self.goal_changed,
        };
        let decision = self.controller.decide(&ctx, &mut self.rng)?;
        let action = Action {
            target: self.world.clamp_point(decision.action.target),
        };
        let next = sim::step(&self.world, &action)?;
        let frame = render(&next);
        self.pixels = track_all(&cur_image, &frame, &self.pixels, &self.track_cfg)?;
        for a in &mut self.anchors {
            a.advance(&self.world, &next);
        }

        self.prev_image = cur_image;
        self.prev_state = self.world.pusher;
        self.world = next;
        self.goal_changed = false;

        self.log.frames.push(frame.clone());
        self.log.worlds.push(self.world.clone());
        self.log.actions.push(action);
        self.log.objectives.push(decision.objective);
        self.log.pixels.push(self.pixels.clone());
        self.log.true_points.push(self.anchors.iter().map(|a| a.point).collect());
        Ok(StepOutcome {
            t,
            action,
            objective: decision.objective,
            distributions: decision.distributions,
            pixels: self.pixels.clone(),
            frame,
        })
    }

    pub fn run(mut self, steps: usize) -> Result<EpisodeLog> {
        for _ in 0..steps {
            self.step()?;
        }
        Ok(self.log)
    }
}

/// Runs `steps` planning/execution cycles from `env`.
pub fn run_mpc_episode(
    env: WorldState,
    model: PredictorModel,
    goal: GoalSpec,
    cfg: &PlanConfig,
    steps: usize,
    seed: u64,
) -> Result<EpisodeLog> {
    let controller = Box::new(MpcController::new(model, cfg.clone()));
    EpisodeRunner::new(env, goal, controller, seed)?.run(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{ObjectSpec, SimParams};

    fn scene() -> WorldState {
        WorldState::new(
            32,
            32,
            Vec2::new(8.0, 16.0),
            vec![ObjectSpec::disc(Vec2::new(14.0, 16.0), 3.0, 0.5)],
            SimParams::default(),
        )
        .unwrap()
    }

    #[test]
    fn zero_steps_keeps_initial_distance() {
        let goal = GoalSpec::single(Pixel::new(14, 16), Pixel::new(18, 16));
        let log = run_mpc_episode(scene(), PredictorModel::oracle(), goal, &PlanConfig::default(), 0, 1).unwrap();
        assert_eq!(log.steps(), 0);
        assert_eq!(log.final_distances(), vec![4.0]);
        assert_eq!(log.true_final_distances(), vec![4.0]);
    }

    #[test]
    fn confident_first_step_moves_toward_goal() {
        let goal = GoalSpec::single(Pixel::new(14, 16), Pixel::new(17, 16));
        let target = Vec2::new(17.0, 16.0);
        let mut confident = 0;
        for seed in 0..6 {
            let log = run_mpc_episode(scene(), PredictorModel::oracle(), goal.clone(), &PlanConfig::default(), 1, seed).unwrap();
            if log.objectives[0].is_some_and(|v| v > 0.25f64.ln()) {
                confident += 1;
                let before = (log.true_points[0][0] - target).norm();
                let after = (log.true_points[1][0] - target).norm();
                assert!(after < before, "seed {seed}: {before} -> {after}");
            }
        }
        assert!(confident > 0);
    }

    #[test]
    fn stay_goal_keeps_object_put() {
        let goal = GoalSpec::single(Pixel::new(14, 16), Pixel::new(14, 16));
        let log = run_mpc_episode(scene(), PredictorModel::oracle(), goal, &PlanConfig::default(), 5, 2).unwrap();
        assert!(log.final_distances()[0] <= 1.0);
    }

    #[test]
    fn episodes_are_deterministic() {
        let goal = GoalSpec::single(Pixel::new(14, 16), Pixel::new(17, 18));
        let run = || run_mpc_episode(scene(), PredictorModel::oracle(), goal.clone(), &PlanConfig::default(), 3, 9).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.actions, b.actions);
        assert_eq!(a.objectives, b.objectives);
        assert_eq!(a.frames, b.frames);
    }

    #[test]
    fn log_converts_to_record() {
        let goal = GoalSpec::single(Pixel::new(14, 16), Pixel::new(17, 16));
        let log = run_mpc_episode(scene(), PredictorModel::oracle(), goal, &PlanConfig::default(), 2, 9).unwrap();
        let rec = log.to_record().unwrap();
        assert_eq!(rec.len(), 3);
        let s = serde_json::to_string(&log.summary()).unwrap();
        assert!(s.contains("final_distances"));
    }

    #[test]
    fn goal_change_restarts_designation() {
        let goal = GoalSpec::single(Pixel::new(14, 16), Pixel::new(17, 16));
        let ctrl = Box::new(MpcController::new(PredictorModel::oracle(), PlanConfig::default()));
        let mut runner = EpisodeRunner::new(scene(), goal, ctrl, 5).unwrap();
        runner.step().unwrap();
        let new_goal = GoalSpec::single(Pixel::new(8, 16), Pixel::new(8, 10));
        runner.set_goal(new_goal.clone()).unwrap();
        assert_eq!(runner.pixels(), &[Pixel::new(8, 16)]);
        runner.step().unwrap();
        let log = runner.into_log();
        assert_eq!(log.goal, new_goal);
        assert_eq!(log.goal_changes.len(), 1);
    }
}
