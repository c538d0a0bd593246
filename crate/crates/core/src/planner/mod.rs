//! Pixel-goal planning: goal specification, the success-probability
//! objective over predicted flows, and CEM action search.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{advect_distribution, predict_rollout, AdvectionMode, Predictor};
use crate::grid::{Image, Pixel, PixelDistribution};
use crate::sim::{Action, Vec2};

pub mod cem;
pub mod episode;

pub use cem::{cem_iteration, cem_optimize, Bounds, CemRun, CemStep, IterationStats, Sampler};
pub use episode::{run_mpc_episode, Controller, Decision, EpisodeLog, EpisodeRunner, MpcController, StepContext, StepOutcome};

/// One designated pixel and where it should end up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalPair {
    pub designated: Pixel,
    pub goal: Pixel,
}

/// Designated/goal pixel pairs, written `x,y->x,y;x,y->x,y`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GoalSpec {
    pairs: Vec<GoalPair>,
}

impl GoalSpec {
    pub fn new(pairs: Vec<GoalPair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::NoGoal);
        }
        Ok(Self { pairs })
    }

    pub fn single(designated: Pixel, goal: Pixel) -> Self {
        Self {
            pairs: vec![GoalPair { designated, goal }],
        }
    }

    pub fn pairs(&self) -> &[GoalPair] {
        &self.pairs
    }

    pub fn designated(&self) -> Vec<Pixel> {
        self.pairs.iter().map(|p| p.designated).collect()
    }

    pub fn goals(&self) -> Vec<Pixel> {
        self.pairs.iter().map(|p| p.goal).collect()
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        for p in &self.pairs {
            for px in [p.designated, p.goal] {
                if !px.in_bounds(width, height) {
                    return Err(Error::OutOfBounds(format!("goal pixel {px} outside {width}x{height}")));
                }
            }
        }
        Ok(())
    }
}

fn parse_pixel(s: &str) -> Result<Pixel> {
    let (x, y) = s
        .split_once(',')
        .ok_or_else(|| Error::Config(format!("expected x,y in {s:?}")))?;
    let num = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|e| Error::Config(format!("bad coordinate {v:?}: {e}")))
    };
    Ok(Pixel::new(num(x)?, num(y)?))
}

impl FromStr for GoalSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (d, g) = part
                .split_once("->")
                .ok_or_else(|| Error::Config(format!("expected x,y->x,y in {part:?}")))?;
            pairs.push(GoalPair {
                designated: parse_pixel(d)?,
                goal: parse_pixel(g)?,
            });
        }
        GoalSpec::new(pairs)
    }
}

impl fmt::Display for GoalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.pairs.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{}->{}", p.designated, p.goal)?;
        }
        Ok(())
    }
}

impl TryFrom<String> for GoalSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<GoalSpec> for String {
    fn from(g: GoalSpec) -> Self {
        g.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanConfig {
    pub horizon: usize,
    pub initial_iterations: usize,
    pub initial_samples: usize,
    pub replan_iterations: usize,
    pub replan_samples: usize,
    pub elites: usize,
    /// Added to the diagonal of every fitted covariance.
    pub covariance_reg: f64,
    /// Floor on goal mass before taking the log.
    pub prob_floor: f64,
    /// Repeat one sampled action over the whole horizon.
    pub tie_actions: bool,
    /// Start replanning from the previous step's final Gaussian instead of
    /// the uniform distribution.
    pub warm_start: bool,
    pub advection: AdvectionMode,
    /// `[x_min, y_min, x_max, y_max]`; the full workspace when absent.
    pub action_box: Option<[f64; 4]>,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            horizon: 3,
            initial_iterations: 4,
            initial_samples: 40,
            replan_iterations: 1,
            replan_samples: 20,
            elites: 10,
            covariance_reg: 1e-4,
            prob_floor: 1e-9,
            tie_actions: true,
            warm_start: false,
            advection: AdvectionMode::Scatter,
            action_box: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Initial,
    Replan,
}

impl PlanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if !(self.prob_floor > 0.0) {
            return Err(Error::Config("prob_floor must be positive".into()));
        }
        if !(self.covariance_reg >= 0.0) {
            return Err(Error::Config("covariance_reg must be non-negative".into()));
        }
        for (j, m) in [
            (self.initial_iterations, self.initial_samples),
            (self.replan_iterations, self.replan_samples),
        ] {
            if j == 0 || m == 0 {
                return Err(Error::Config("iterations and samples must be at least 1".into()));
            }
        }
        if self.elites == 0 {
            return Err(Error::Config("elites must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// `(iterations, samples, elites)` for a phase. Elites never exceed the
    /// sample count.
    pub fn schedule(&self, phase: Phase) -> (usize, usize, usize) {
        let (j, m) = match phase {
            Phase::Initial => (self.initial_iterations, self.initial_samples),
            Phase::Replan => (self.replan_iterations, self.replan_samples),
        };
        (j, m, self.elites.min(m))
    }

    /// Bounds of one sample vector: a single action when tied, otherwise
    /// `horizon` actions.
    pub fn bounds(&self, width: usize, height: usize) -> Bounds {
        let [x0, y0, x1, y1] = self
            .action_box
            .unwrap_or([0.0, 0.0, (width - 1) as f64, (height - 1) as f64]);
        let reps = if self.tie_actions { 1 } else { self.horizon };
        Bounds {
            lo: [x0, y0].repeat(reps),
            hi: [x1, y1].repeat(reps),
        }
    }

    /// Action sequence encoded by a sample vector.
    pub fn decode(&self, v: &[f64]) -> Vec<Action> {
        if self.tie_actions {
            vec![Action::new(v[0], v[1]); self.horizon]
        } else {
            v.chunks_exact(2).map(|c| Action::new(c[0], c[1])).collect()
        }
    }
}

/// The two most recent frames and pusher states.
#[derive(Debug, Clone, Copy)]
pub struct History<'a> {
    pub prev_image: &'a Image,
    pub cur_image: &'a Image,
    pub prev_state: Vec2,
    pub cur_state: Vec2,
}

/// Delta distribution at `pixel`.
pub fn init_distribution(width: usize, height: usize, pixel: Pixel) -> Result<PixelDistribution> {
    PixelDistribution::delta(width, height, pixel)
}

/// Final predicted distributions of the designated pixels under `actions`.
pub fn propagate(
    predictor: &dyn Predictor,
    history: &History<'_>,
    actions: &[Action],
    pixels: &[Pixel],
    mode: AdvectionMode,
) -> Result<Vec<PixelDistribution>> {
    let (w, h) = history.cur_image.dims();
    let rollout = predict_rollout(
        predictor,
        [history.prev_image, history.cur_image],
        [history.prev_state, history.cur_state],
        actions,
    )?;
    pixels
        .iter()
        .map(|&p| {
            let mut dist = init_distribution(w, h, p)?;
            for flow in &rollout.flows {
                dist = advect_distribution(flow, &dist, mode)?;
            }
            Ok(dist)
        })
        .collect()
}

/// `sum_i log(max(P_i(g_i), floor))` over the goal pairs.
pub fn goal_logprob(dists: &[PixelDistribution], goals: &[Pixel], floor: f64) -> f64 {
    dists
        .iter()
        .zip(goals)
        .map(|(d, &g)| d.at(g).max(floor).ln())
        .sum()
}

/// Log-probability that every designated pixel sits on its goal after the
/// action sequence. `pixels` are the current designated-pixel estimates,
/// paired in order with the goals of `goal`.
pub fn success_logprob(
    predictor: &dyn Predictor,
    history: &History<'_>,
    actions: &[Action],
    goal: &GoalSpec,
    pixels: &[Pixel],
    cfg: &PlanConfig,
) -> Result<f64> {
    if actions.len() != cfg.horizon {
        return Err(Error::DimensionMismatch(format!(
            "{} actions for horizon {}",
            actions.len(),
            cfg.horizon
        )));
    }
    if pixels.len() != goal.pairs().len() {
        return Err(Error::DimensionMismatch(format!(
            "{} pixels for {} goal pairs",
            pixels.len(),
            goal.pairs().len()
        )));
    }
    let dists = propagate(predictor, history, actions, pixels, cfg.advection)?;
    Ok(goal_logprob(&dists, &goal.goals(), cfg.prob_floor))
}

#[derive(Debug, Clone)]
pub struct PlanResult {
    pub actions: Vec<Action>,
    pub objective: f64,
    pub iterations: Vec<IterationStats>,
    /// Predicted distribution of each designated pixel under `actions`.
    pub distributions: Vec<PixelDistribution>,
    /// Final fitted sampler, for warm starts.
    pub sampler: Sampler,
}

/// CEM search for the action sequence maximizing [`success_logprob`].
/// The first iteration samples `start` (uniform over the action box when
/// `None`); the incumbent is the best sample seen in any iteration.
#[allow(clippy::too_many_arguments)]
pub fn plan<R: Rng>(
    predictor: &dyn Predictor,
    history: &History<'_>,
    goal: &GoalSpec,
    pixels: &[Pixel],
    cfg: &PlanConfig,
    phase: Phase,
    start: Option<&Sampler>,
    rng: &mut R,
) -> Result<PlanResult> {
    cfg.validate()?;
    let (w, h) = history.cur_image.dims();
    goal.validate(w, h)?;
    let bounds = cfg.bounds(w, h);
    let (iters, m, k) = cfg.schedule(phase);
    let objective =
        |v: &[f64]| success_logprob(predictor, history, &cfg.decode(v), goal, pixels, cfg);

    let sampler = match start {
        Some(s) if s.dim() == bounds.dim() => s.clone(),
        _ => Sampler::Uniform(bounds.clone()),
    };
    let run = cem_optimize(&objective, sampler, &bounds, iters, m, k, cfg.covariance_reg, rng)?;
    let actions = cfg.decode(&run.best);
    let distributions = propagate(predictor, history, &actions, pixels, cfg.advection)?;
    Ok(PlanResult {
        actions,
        objective: run.best_value,
        iterations: run.iterations,
        distributions,
        sampler: run.sampler,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{KernelBank, MaskField, Prediction, StepInput};
    use crate::grid::{offset_index, FlowField};

    /// Replays a fixed list of flows, ignoring the inputs.
    struct Scripted(Vec<FlowField>);

    impl Predictor for Scripted {
        fn predict(&self, input: &StepInput<'_>) -> Result<Prediction> {
            let flow = self.0[input.actions.len() - 1].clone();
            let (w, h) = flow.dims();
            let bank = KernelBank::new(flow.radius(), vec![vec![1.0 / 9.0; 9]]).unwrap();
            Ok(Prediction {
                flow,
                masks: MaskField::one_hot(w, h, 1, 0),
                kernels: bank,
            })
        }
        fn radius(&self) -> usize {
            1
        }
        fn pusher_speed(&self) -> f64 {
            3.0
        }
    }

    fn history(img: &Image) -> History<'_> {
        History {
            prev_image: img,
            cur_image: img,
            prev_state: Vec2::ZERO,
            cur_state: Vec2::ZERO,
        }
    }

    fn cfg(h: usize) -> PlanConfig {
        PlanConfig {
            horizon: h,
            ..PlanConfig::default()
        }
    }

    #[test]
    fn goal_spec_parse_and_display() {
        let g: GoalSpec = "3,4->5,6; 0,0->7,7".parse().unwrap();
        assert_eq!(g.pairs().len(), 2);
        assert_eq!(g.pairs()[1].goal, Pixel::new(7, 7));
        assert_eq!(g.to_string(), "3,4->5,6;0,0->7,7");
        assert!(matches!("".parse::<GoalSpec>(), Err(Error::NoGoal)));
        assert!("3,4-5,6".parse::<GoalSpec>().is_err());
        assert!("a,4->5,6".parse::<GoalSpec>().is_err());
        assert!(g.validate(8, 8).is_ok());
        assert!(g.validate(7, 8).is_err());
    }

    #[test]
    fn init_distribution_examples() {
        let d = init_distribution(8, 8, Pixel::new(3, 5)).unwrap();
        assert_eq!(d.get(3, 5), 1.0);
        assert_eq!(d.total(), 1.0);
        assert_eq!(init_distribution(8, 8, Pixel::new(0, 0)).unwrap().get(0, 0), 1.0);
        assert!(matches!(init_distribution(8, 8, Pixel::new(8, 0)), Err(Error::OutOfBounds(_))));
    }

    #[test]
    fn logprob_identity_flow() {
        let img = Image::zeros(8, 8).unwrap();
        let p = Scripted(vec![FlowField::identity(8, 8, 1)]);
        let a = [Action::new(0.0, 0.0)];
        let hit = GoalSpec::single(Pixel::new(2, 2), Pixel::new(2, 2));
        let miss = GoalSpec::single(Pixel::new(2, 2), Pixel::new(3, 2));
        let c = cfg(1);
        assert_eq!(success_logprob(&p, &history(&img), &a, &hit, &[Pixel::new(2, 2)], &c).unwrap(), 0.0);
        let v = success_logprob(&p, &history(&img), &a, &miss, &[Pixel::new(2, 2)], &c).unwrap();
        assert_eq!(v, 1e-9f64.ln());
    }

    #[test]
    fn logprob_split_then_identity() {
        let img = Image::zeros(8, 8).unwrap();
        let mut w = FlowField::identity(8, 8, 1).weights().to_vec();
        let base = (4 * 8 + 4) * 9;
        w[base + offset_index(1, 0, 0)] = 0.5;
        w[base + offset_index(1, 1, 0)] = 0.5;
        let split = FlowField::new(8, 8, 1, w).unwrap();
        let p = Scripted(vec![split, FlowField::identity(8, 8, 1)]);
        let a = [Action::new(0.0, 0.0); 2];
        let goal = GoalSpec::single(Pixel::new(4, 4), Pixel::new(5, 4));
        let v = success_logprob(&p, &history(&img), &a, &goal, &[Pixel::new(4, 4)], &cfg(2)).unwrap();
        assert!((v - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn logprob_checks_lengths() {
        let img = Image::zeros(8, 8).unwrap();
        let p = Scripted(vec![FlowField::identity(8, 8, 1)]);
        let goal = GoalSpec::single(Pixel::new(2, 2), Pixel::new(2, 2));
        let a = [Action::new(0.0, 0.0); 2];
        assert!(success_logprob(&p, &history(&img), &a, &goal, &[Pixel::new(2, 2)], &cfg(1)).is_err());
        assert!(success_logprob(&p, &history(&img), &a[..1], &goal, &[], &cfg(1)).is_err());
    }

    #[test]
    fn tied_decoding_repeats_action() {
        let c = cfg(3);
        let acts = c.decode(&[4.0, 5.0]);
        assert_eq!(acts, vec![Action::new(4.0, 5.0); 3]);
        assert_eq!(c.bounds(32, 16).hi, vec![31.0, 15.0]);
        let untied = PlanConfig {
            tie_actions: false,
            ..c
        };
        assert_eq!(untied.bounds(32, 32).dim(), 6);
        assert_eq!(untied.decode(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0])[2], Action::new(5.0, 6.0));
    }

    #[test]
    fn plan_config_toml_roundtrip() {
        let c = PlanConfig {
            action_box: Some([1.0, 2.0, 20.0, 21.0]),
            warm_start: true,
            ..PlanConfig::default()
        };
        assert_eq!(PlanConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
        assert!(PlanConfig::from_toml("horizon = 0").is_err());
        assert!(PlanConfig::from_toml("prob_floor = 0.0").is_err());
    }

    #[test]
    fn single_sample_plan_returns_it() {
        use rand::SeedableRng;
        let img = Image::zeros(8, 8).unwrap();
        let p = Scripted(vec![FlowField::identity(8, 8, 1)]);
        let goal = GoalSpec::single(Pixel::new(2, 2), Pixel::new(2, 2));
        let c = PlanConfig {
            horizon: 1,
            initial_iterations: 1,
            initial_samples: 1,
            ..PlanConfig::default()
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let r = plan(&p, &history(&img), &goal, &[Pixel::new(2, 2)], &c, Phase::Initial, None, &mut rng).unwrap();
        assert_eq!(r.objective, 0.0);
        assert_eq!(r.iterations.len(), 1);
        assert_eq!(r.actions.len(), 1);
    }
}
