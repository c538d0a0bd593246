//! Hand-designed comparison controllers. The servo baselines read pixel
//! coordinates as workspace coordinates (the renderer is identity-calibrated).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::planner::{Controller, Decision, StepContext};
use crate::sim::{Action, Vec2};

/// Commands the pusher's current position: nothing moves.
pub struct NoOp;

impl Controller for NoOp {
    fn name(&self) -> &str {
        "initial"
    }

    fn decide(&mut self, ctx: &StepContext<'_>, _rng: &mut ChaCha8Rng) -> Result<Decision> {
        Ok(Decision::action(Action {
            target: ctx.world.pusher,
        }))
    }
}

/// Uniform random targets over the workspace.
pub struct RandomActions;

impl Controller for RandomActions {
    fn name(&self) -> &str {
        "random"
    }

    fn decide(&mut self, ctx: &StepContext<'_>, rng: &mut ChaCha8Rng) -> Result<Decision> {
        let b = ctx.world.bounds();
        Ok(Decision::action(Action::new(
            rng.random_range(0.0..=b.x),
            rng.random_range(0.0..=b.y),
        )))
    }
}

/// Drives the pusher to the first goal pixel.
pub struct ServoGoal;

impl Controller for ServoGoal {
    fn name(&self) -> &str {
        "servo-goal"
    }

    fn decide(&mut self, ctx: &StepContext<'_>, _rng: &mut ChaCha8Rng) -> Result<Decision> {
        let g = ctx.goal.pairs()[0].goal;
        Ok(Decision::action(Action::new(g.x as f64, g.y as f64)))
    }
}

/// Moves the pusher along the vector from the tracked first pixel to its
/// goal.
pub struct ServoVector;

impl Controller for ServoVector {
    fn name(&self) -> &str {
        "servo-vector"
    }

    fn decide(&mut self, ctx: &StepContext<'_>, _rng: &mut ChaCha8Rng) -> Result<Decision> {
        let g = ctx.goal.pairs()[0].goal;
        let d = ctx.pixels[0];
        let v = Vec2::new(g.x as f64 - d.x as f64, g.y as f64 - d.y as f64);
        Ok(Decision::action(Action {
            target: ctx.world.clamp_point(ctx.world.pusher + v),
        }))
    }
}
