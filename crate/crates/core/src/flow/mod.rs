//! Stochastic pixel flow: mask/kernel compositing, advection of images and
//! pixel distributions, and the predictors that produce flows.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_same, clamp_index, normalize, offset_index, offsets, FlowField, Image, PixelDistribution};
use crate::sim::{self, Action, Vec2, WorldState};

pub mod learned;

pub use learned::{LearnedPredictor, ModelConfig, ModelParams, TrainConfig};

/// `C` normalized kernels over offsets in `[-radius, radius]^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    radius: usize,
    channels: usize,
    weights: Vec<f64>,
}

impl KernelBank {
    pub fn new(radius: usize, channels: Vec<Vec<f64>>) -> Result<Self> {
        let k2 = (2 * radius + 1).pow(2);
        if channels.is_empty() {
            return Err(Error::DimensionMismatch("kernel bank needs a channel".into()));
        }
        for (c, kernel) in channels.iter().enumerate() {
            if kernel.len() != k2 {
                return Err(Error::DimensionMismatch(format!(
                    "channel {c} has {} weights, expected {k2}",
                    kernel.len()
                )));
            }
            let sum: f64 = kernel.iter().sum();
            if kernel.iter().any(|w| !w.is_finite() || *w < 0.0) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidKernel {
                    x: c,
                    y: 0,
                    reason: format!("channel kernel sums to {sum}"),
                });
            }
        }
        Ok(Self {
            radius,
            channels: channels.len(),
            weights: channels.concat(),
        })
    }

    pub(crate) fn from_parts(radius: usize, channels: usize, weights: Vec<f64>) -> Self {
        Self {
            radius,
            channels,
            weights,
        }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn kernel(&self, c: usize) -> &[f64] {
        let k2 = (2 * self.radius + 1).pow(2);
        &self.weights[c * k2..(c + 1) * k2]
    }
}

/// Per-pixel convex weights over `C` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskField {
    width: usize,
    height: usize,
    channels: usize,
    weights: Vec<f64>,
}

impl MaskField {
    pub fn new(width: usize, height: usize, channels: usize, weights: Vec<f64>) -> Result<Self> {
        if channels == 0 || weights.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "mask field {width}x{height}x{channels} with {} weights",
                weights.len()
            )));
        }
        for (i, w) in weights.chunks_exact(channels).enumerate() {
            let sum: f64 = w.iter().sum();
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidKernel {
                    x: i % width,
                    y: i / width,
                    reason: format!("mask weights sum to {sum}"),
                });
            }
        }
        Ok(Self {
            width,
            height,
            channels,
            weights,
        })
    }

    /// All weight on `channel` at every pixel.
    pub fn one_hot(width: usize, height: usize, channels: usize, channel: usize) -> Self {
        let mut weights = vec![0.0; width * height * channels];
        for w in weights.chunks_exact_mut(channels) {
            w[channel] = 1.0;
        }
        Self {
            width,
            height,
            channels,
            weights,
        }
    }

    pub(crate) fn from_parts(width: usize, height: usize, channels: usize, weights: Vec<f64>) -> Self {
        Self {
            width,
            height,
            channels,
            weights,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn at(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.weights[i..i + self.channels]
    }
}

/// Per-pixel flow kernel as the mask-weighted mixture of channel kernels.
pub fn composite_flow(masks: &MaskField, kernels: &KernelBank) -> Result<FlowField> {
    if masks.channels != kernels.channels {
        return Err(Error::DimensionMismatch(format!(
            "{} mask channels vs {} kernels",
            masks.channels, kernels.channels
        )));
    }
    let k2 = (2 * kernels.radius + 1).pow(2);
    let n = masks.width * masks.height;
    let mut weights = vec![0.0; n * k2];
    for (p, out) in weights.chunks_exact_mut(k2).enumerate() {
        let xi = &masks.weights[p * masks.channels..(p + 1) * masks.channels];
        for (c, &w) in xi.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, &m) in out.iter_mut().zip(kernels.kernel(c)) {
                *o += w * m;
            }
        }
    }
    Ok(FlowField::from_parts(masks.width, masks.height, kernels.radius, weights))
}

/// Gather advection: `out(x, y) = sum_{k,l} F(x, y, k, l) * img(x - k, y - l)`,
/// sources clamped to the nearest edge pixel.
pub fn advect_image(flow: &FlowField, img: &Image) -> Result<Image> {
    check_same(flow.dims(), img.dims())?;
    let out = gather(flow, img.data());
    Image::from_vec(img.width(), img.height(), out)
}

pub(crate) fn gather(flow: &FlowField, src: &[f64]) -> Vec<f64> {
    let (w, h) = flow.dims();
    let r = flow.radius() as i64;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let kernel = flow.kernel(x, y);
            let mut acc = 0.0;
            let mut idx = 0;
            for l in -r..=r {
                let sy = clamp_index(y as i64 - l, h);
                for k in -r..=r {
                    let wgt = kernel[idx];
                    idx += 1;
                    if wgt != 0.0 {
                        acc += wgt * src[sy * w + clamp_index(x as i64 - k, w)];
                    }
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdvectionMode {
    /// Mass at `(x, y)` moves to `(x + k, y + l)` with weight `F(x, y, k, l)`.
    #[default]
    Scatter,
    /// The image gather applied to the mass grid.
    Gather,
}

/// Push mass forward without renormalizing; total mass is conserved.
pub fn scatter_mass(flow: &FlowField, dist: &PixelDistribution) -> Result<PixelDistribution> {
    check_same(flow.dims(), dist.dims())?;
    let (w, h) = flow.dims();
    let r = flow.radius() as i64;
    let mut out = PixelDistribution::zeros(w, h);
    let dst = out.mass_mut();
    for (i, &m) in dist.mass().iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        let kernel = flow.kernel(i % w, i / w);
        let mut idx = 0;
        for l in -r..=r {
            let dy = clamp_index(y + l, h);
            for k in -r..=r {
                let wgt = kernel[idx];
                idx += 1;
                if wgt != 0.0 {
                    dst[dy * w + clamp_index(x + k, w)] += m * wgt;
                }
            }
        }
    }
    Ok(out)
}

/// One propagation step of a pixel-position distribution through `flow`.
pub fn advect_distribution(
    flow: &FlowField,
    dist: &PixelDistribution,
    mode: AdvectionMode,
) -> Result<PixelDistribution> {
    let moved = match mode {
        AdvectionMode::Scatter => scatter_mass(flow, dist)?,
        AdvectionMode::Gather => {
            check_same(flow.dims(), dist.dims())?;
            let (w, h) = flow.dims();
            PixelDistribution::from_vec(w, h, gather(flow, dist.mass()))?
        }
    };
    normalize(&moved)
}

/// Mean squared intensity error over every pixel of every frame.
pub fn mse_loss(pred: &[Image], truth: &[Image]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predicted vs {} true frames",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        check_same(p.dims(), t.dims())?;
        sum += p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        count += p.data().len();
    }
    Ok(sum / count as f64)
}

/// Gaussian log-density of a frame under the predicted mean with isotropic
/// variance `sigma2`.
pub fn gaussian_log_likelihood(mean: &Image, observed: &Image, sigma2: f64) -> Result<f64> {
    check_same(mean.dims(), observed.dims())?;
    let n = mean.data().len() as f64;
    let sq: f64 = mean
        .data()
        .iter()
        .zip(observed.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(-0.5 * sq / sigma2 - 0.5 * n * (2.0 * std::f64::consts::PI * sigma2).ln())
}

/// Inputs for one prediction step.
#[derive(Debug, Clone, Copy)]
pub struct StepInput<'a> {
    pub prev_image: &'a Image,
    pub cur_image: &'a Image,
    pub prev_state: Vec2,
    pub cur_state: Vec2,
    /// Actions commanded since the rollout anchor; the last one is the action
    /// whose effect is being predicted.
    pub actions: &'a [Action],
}

impl StepInput<'_> {
    pub fn action(&self) -> Action {
        *self.actions.last().expect("step input carries at least one action")
    }
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub flow: FlowField,
    pub masks: MaskField,
    pub kernels: KernelBank,
}

/// Action-conditioned flow predictor. Implementations are pure.
pub trait Predictor: Send + Sync {
    fn predict(&self, input: &StepInput<'_>) -> Result<Prediction>;

    /// Kernel radius of produced flows.
    fn radius(&self) -> usize;

    /// Pusher travel per step used to advance the predicted pusher state.
    fn pusher_speed(&self) -> f64;
}

/// Kinematic pusher prediction: move toward the target by at most `v_max`.
pub fn advance_pusher(state: Vec2, action: &Action, v_max: f64) -> Vec2 {
    state + (action.target - state).clamp_len(v_max)
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub flows: Vec<FlowField>,
    /// Predicted mean frames `I_{t+1} .. I_{t+H}`.
    pub images: Vec<Image>,
    pub states: Vec<Vec2>,
}

/// Recursive multi-step prediction. Step `j` conditions on the two most
/// recent frames (true for `j = 0`, predicted afterwards).
pub fn predict_rollout(
    predictor: &dyn Predictor,
    images: [&Image; 2],
    states: [Vec2; 2],
    actions: &[Action],
) -> Result<Rollout> {
    if actions.is_empty() {
        return Err(Error::Precondition("rollout horizon must be at least 1".into()));
    }
    check_same(images[0].dims(), images[1].dims())?;
    let speed = predictor.pusher_speed();
    let mut frames: Vec<Image> = Vec::with_capacity(actions.len());
    let mut flows = Vec::with_capacity(actions.len());
    let mut xs = vec![states[0], states[1]];
    for j in 0..actions.len() {
        let (prev, cur) = match j {
            0 => (images[0], images[1]),
            1 => (images[1], &frames[0]),
            _ => (&frames[j - 2], &frames[j - 1]),
        };
        let input = StepInput {
            prev_image: prev,
            cur_image: cur,
            prev_state: xs[j],
            cur_state: xs[j + 1],
            actions: &actions[..=j],
        };
        let pred = predictor.predict(&input)?;
        let next = advect_image(&pred.flow, cur)?;
        xs.push(advance_pusher(xs[j + 1], &actions[j], speed));
        flows.push(pred.flow);
        frames.push(next);
    }
    Ok(Rollout {
        flows,
        images: frames,
        states: xs.split_off(2),
    })
}

/// Flow predictor backed by the simulator's ground truth.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    anchor: WorldState,
    radius: usize,
}

impl OraclePredictor {
    pub fn new(anchor: WorldState, radius: usize) -> Self {
        Self { anchor, radius }
    }
}

/// Exact channel decomposition of a delta-kernel flow: one delta kernel per
/// distinct offset present, one-hot masks.
fn decompose_deltas(flow: &FlowField) -> (MaskField, KernelBank) {
    let r = flow.radius();
    let k2 = flow.side() * flow.side();
    let mut used = vec![false; k2];
    for kernel in flow.weights().chunks_exact(k2) {
        for (o, &w) in kernel.iter().enumerate() {
            if w > 0.0 {
                used[o] = true;
            }
        }
    }
    let slots: Vec<usize> = (0..k2).filter(|&o| used[o]).collect();
    let mut channel_of = vec![usize::MAX; k2];
    let mut kernels = vec![0.0; slots.len() * k2];
    for (c, &o) in slots.iter().enumerate() {
        channel_of[o] = c;
        kernels[c * k2 + o] = 1.0;
    }
    let c = slots.len();
    let (w, h) = flow.dims();
    let mut masks = vec![0.0; w * h * c];
    for (p, kernel) in flow.weights().chunks_exact(k2).enumerate() {
        for (o, &wgt) in kernel.iter().enumerate() {
            if wgt > 0.0 {
                masks[p * c + channel_of[o]] += wgt;
            }
        }
    }
    (
        MaskField::from_parts(w, h, c, masks),
        KernelBank::from_parts(r, c, kernels),
    )
}

impl Predictor for OraclePredictor {
    fn predict(&self, input: &StepInput<'_>) -> Result<Prediction> {
        let (last, prefix) = input
            .actions
            .split_last()
            .ok_or_else(|| Error::Precondition("oracle step needs an action".into()))?;
        let mut state = self.anchor.clone();
        for a in prefix {
            state = sim::step(&state, a)?;
        }
        let flow = sim::ground_truth_flow(&state, last, self.radius)?;
        let (masks, kernels) = decompose_deltas(&flow);
        Ok(Prediction {
            flow,
            masks,
            kernels,
        })
    }

    fn radius(&self) -> usize {
        self.radius
    }

    fn pusher_speed(&self) -> f64 {
        self.anchor.params.v_max
    }
}

/// Which predictor drives planning.
#[derive(Debug, Clone)]
pub enum PredictorModel {
    Oracle { radius: usize },
    Learned(Arc<ModelParams>),
}

impl PredictorModel {
    pub fn oracle() -> Self {
        PredictorModel::Oracle {
            radius: crate::sim::SimParams::default().required_radius(),
        }
    }

    /// Predictor conditioned on the current world. Only the oracle reads it.
    pub fn predictor_at(&self, env: &WorldState) -> Box<dyn Predictor + '_> {
        match self {
            PredictorModel::Oracle { radius } => Box::new(OraclePredictor::new(env.clone(), *radius)),
            PredictorModel::Learned(params) => Box::new(LearnedPredictor::new(params.as_ref())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PredictorModel::Oracle { .. } => "oracle",
            PredictorModel::Learned(_) => "learned",
        }
    }
}

/// Kernel slot with the largest weight, as an offset.
pub fn kernel_argmax(kernel: &[f64], radius: usize) -> (i64, i64) {
    let mut best = offset_index(radius, 0, 0);
    for (i, &w) in kernel.iter().enumerate() {
        if w > kernel[best] {
            best = i;
        }
    }
    offsets(radius).nth(best).expect("slot within kernel")
}
