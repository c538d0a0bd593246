//! Benchmark tasks: seeded pushing scenes with pixel goals.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Pixel;
use crate::planner::{GoalPair, GoalSpec};
use crate::sim::{ObjectSpec, SceneConfig, SimParams, Surface, Vec2, WorldState};

pub const DEFAULT_STEPS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskLabel {
    Translate,
    Rotate,
    Stay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub label: TaskLabel,
    pub scene: SceneConfig,
    pub goal: GoalSpec,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Seeds every method's episode on this task.
    pub seed: u64,
}

fn default_steps() -> usize {
    DEFAULT_STEPS
}

impl TaskSpec {
    /// Builds the initial world and checks that every designated pixel lies
    /// on an object or the pusher.
    pub fn world(&self) -> Result<WorldState> {
        let world = self.scene.build()?;
        self.goal.validate(world.width, world.height)?;
        for p in self.goal.designated() {
            if world.surface_at(p.x, p.y) == Surface::Background {
                return Err(Error::Config(format!(
                    "task {}: designated pixel {p} is on the background",
                    self.name
                )));
            }
        }
        Ok(world)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSuite {
    pub tasks: Vec<TaskSpec>,
}

impl TaskSuite {
    pub fn from_toml(text: &str) -> Result<Self> {
        let suite: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if suite.tasks.is_empty() {
            return Err(Error::Config("task suite is empty".into()));
        }
        for t in &suite.tasks {
            t.world()?;
        }
        Ok(suite)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

fn unit(angle: f64) -> Vec2 {
    Vec2::new(angle.cos(), angle.sin())
}

fn to_pixel(p: Vec2, size: usize) -> Pixel {
    Pixel::nearest(p.x, p.y, size, size)
}

fn inside(p: Vec2, margin: f64, size: usize) -> bool {
    let hi = (size - 1) as f64 - margin;
    p.x >= margin && p.y >= margin && p.x <= hi && p.y <= hi
}

/// Distance from `p` to the segment `a..b`.
fn segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(ab) / ab.dot(ab).max(1e-12)).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

fn scene(size: usize, seed: u64, pusher: Vec2, objects: Vec<ObjectSpec>) -> SceneConfig {
    SceneConfig {
        width: size,
        height: size,
        seed,
        n_objects: objects.len(),
        objects: Some(objects),
        pusher: Some(pusher),
        params: SimParams::default(),
    }
}

/// A distractor placed clear of the given keep-out segments.
fn distractor(rng: &mut ChaCha8Rng, size: usize, keep_out: &[(Vec2, Vec2, f64)]) -> Option<ObjectSpec> {
    for _ in 0..200 {
        let r = rng.random_range(2.0..3.0);
        let c = Vec2::new(
            rng.random_range(r + 1.0..size as f64 - 2.0 - r),
            rng.random_range(r + 1.0..size as f64 - 2.0 - r),
        );
        if keep_out.iter().all(|&(a, b, clear)| segment_distance(c, a, b) > r + clear) {
            return Some(ObjectSpec::disc(c, r, rng.random_range(0.35..0.6)));
        }
    }
    None
}

/// One object with the pusher 1-3 px behind it and a goal 3-5 px away,
/// roughly in the direction of a straight push. The required pusher travel
/// fits in one three-step horizon.
pub fn scenario_translate(seed: u64, size: usize) -> Result<TaskSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7452_414e);
    let rp = SimParams::default().pusher_radius;
    for _ in 0..1000 {
        let heading = rng.random_range(0.0..2.0 * PI);
        let c = Vec2::new(
            rng.random_range(9.0..size as f64 - 10.0),
            rng.random_range(9.0..size as f64 - 10.0),
        );
        let obj = if rng.random_bool(0.5) {
            ObjectSpec::disc(c, rng.random_range(2.5..3.5), rng.random_range(0.45..0.8))
        } else {
            ObjectSpec::square(c, rng.random_range(2.2..3.0), rng.random_range(0.0..PI / 2.0), rng.random_range(0.45..0.8))
        };
        let gap = rng.random_range(1.0..3.0);
        let lateral = rng.random_range(-1.5..1.5);
        let back = unit(heading) * -(obj.bounding_radius() + rp + gap);
        let pusher = c + back + unit(heading + PI / 2.0) * lateral;
        let dist = rng.random_range(3.0..5.0);
        let goal_pt = c + unit(heading + rng.random_range(-0.45..0.45)) * dist;
        if !inside(pusher, rp, size) || !inside(goal_pt, 2.0, size) {
            continue;
        }
        let designated = to_pixel(c, size);
        let goal = to_pixel(goal_pt, size);
        let reach = obj.bounding_radius() + 2.0;
        let keep = [(pusher, goal_pt, reach + rp), (c, c, reach + 1.0)];
        let Some(other) = distractor(&mut rng, size, &keep) else {
            continue;
        };
        let task = TaskSpec {
            name: format!("translate-{seed}"),
            label: TaskLabel::Translate,
            scene: scene(size, seed, pusher, vec![obj, other]),
            goal: GoalSpec::single(designated, goal),
            steps: DEFAULT_STEPS,
            seed,
        };
        if task.world().is_ok() {
            return Ok(task);
        }
    }
    Err(Error::PlacementFailure(1000))
}

/// A square with pixels near two opposite corners designated; their goals
/// are the corners turned about the center, so they move in opposing
/// directions.
pub fn scenario_rotation(seed: u64, size: usize) -> Result<TaskSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x524f_5441);
    let rp = SimParams::default().pusher_radius;
    for _ in 0..1000 {
        let h = rng.random_range(3.0..3.6);
        let angle = rng.random_range(0.0..PI / 2.0);
        let c = Vec2::new(
            rng.random_range(11.0..size as f64 - 12.0),
            rng.random_range(11.0..size as f64 - 12.0),
        );
        let obj = ObjectSpec::square(c, h, angle, rng.random_range(0.5..0.8));
        let turn = if rng.random_bool(0.5) { 1.0 } else { -1.0 } * rng.random_range(0.35..0.5);
        let inset = Vec2::new(h - 1.0, h - 1.0).rotate(angle);
        let corners = [c + inset, c - inset];
        let goals: Vec<Vec2> = corners.iter().map(|&p| c + (p - c).rotate(turn)).collect();
        // Pusher faces one side of the square, off its center line.
        let side = rng.random_range(0..4) as f64 * PI / 2.0 + angle;
        let normal = unit(side);
        let pusher = c + normal * (h + rp + rng.random_range(1.0..3.0)) + unit(side + PI / 2.0) * rng.random_range(-2.0..2.0);
        if !inside(pusher, rp, size) || goals.iter().any(|&g| !inside(g, 1.0, size)) {
            continue;
        }
        let pairs = corners
            .iter()
            .zip(&goals)
            .map(|(&d, &g)| GoalPair {
                designated: to_pixel(d, size),
                goal: to_pixel(g, size),
            })
            .collect();
        let reach = obj.bounding_radius() + rp + 3.0;
        let Some(other) = distractor(&mut rng, size, &[(c, c, reach), (pusher, pusher, rp + 2.0)]) else {
            continue;
        };
        let task = TaskSpec {
            name: format!("rotate-{seed}"),
            label: TaskLabel::Rotate,
            scene: scene(size, seed, pusher, vec![obj, other]),
            goal: GoalSpec::new(pairs)?,
            steps: DEFAULT_STEPS,
            seed,
        };
        if task.world().is_ok() {
            return Ok(task);
        }
    }
    Err(Error::PlacementFailure(1000))
}

/// An object that must stay put, and a pusher pixel whose goal lies past
/// the object so the pusher has to travel by it within about one horizon.
pub fn scenario_occlusion(seed: u64, size: usize) -> Result<TaskSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4f43_434c);
    let rp = SimParams::default().pusher_radius;
    for _ in 0..1000 {
        let c = Vec2::new(
            rng.random_range(11.0..size as f64 - 12.0),
            rng.random_range(11.0..size as f64 - 12.0),
        );
        let r = rng.random_range(2.5..3.5);
        let obj = ObjectSpec::disc(c, r, rng.random_range(0.45..0.8));
        let heading = rng.random_range(0.0..2.0 * PI);
        let across = unit(heading);
        let lateral = unit(heading + PI / 2.0) * (rng.random_range(r + rp + 0.3..r + rp + 1.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 });
        let reach = rng.random_range(3.0..4.5);
        let pusher = c - across * reach + lateral;
        let target = c + across * reach + lateral;
        if !inside(pusher, rp, size) || !inside(target, rp, size) {
            continue;
        }
        let pairs = vec![
            GoalPair {
                designated: to_pixel(c, size),
                goal: to_pixel(c, size),
            },
            GoalPair {
                designated: to_pixel(pusher, size),
                goal: to_pixel(target, size),
            },
        ];
        let Some(other) = distractor(&mut rng, size, &[(pusher, target, r + rp + 2.0), (c, c, r + 3.0)]) else {
            continue;
        };
        let task = TaskSpec {
            name: format!("stay-{seed}"),
            label: TaskLabel::Stay,
            scene: scene(size, seed, pusher, vec![obj, other]),
            goal: GoalSpec::new(pairs)?,
            steps: DEFAULT_STEPS,
            seed,
        };
        if task.world().is_ok() {
            return Ok(task);
        }
    }
    Err(Error::PlacementFailure(1000))
}

/// The standard ten tasks: six translations, two rotations, two stay-put
/// tasks with pusher transit.
pub fn default_suite(size: usize) -> Result<TaskSuite> {
    let mut tasks = Vec::with_capacity(10);
    for seed in 0..6 {
        tasks.push(scenario_translate(seed, size)?);
    }
    for seed in 0..2 {
        tasks.push(scenario_rotation(100 + seed, size)?);
    }
    for seed in 0..2 {
        tasks.push(scenario_occlusion(200 + seed, size)?);
    }
    Ok(TaskSuite { tasks })
}
