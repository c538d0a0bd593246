//! Learned flow predictor: a per-pixel network producing masks, plus
//! globally pooled features producing the channel kernels. Trained with
//! backpropagation through the recursive multi-step rollout.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{advance_pusher, advect_image, KernelBank, MaskField, Prediction, Predictor, StepInput};
use crate::dataset::{Dataset, EpisodeRecord, LeReader, LeWriter};
use crate::error::{Error, Result};
use crate::grid::{clamp_index, offset_index, FlowField, Image};
use crate::sim::{Action, Vec2};

pub const MODEL_MAGIC: &[u8; 4] = b"VFMP";
pub const MODEL_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Flow kernel radius.
    pub radius: usize,
    /// Half-width of the image patches fed to the per-pixel network.
    pub patch_radius: usize,
    pub hidden: usize,
    /// Pusher travel per step for the kinematic state prediction.
    pub v_max: f64,
    /// Initial logit on the zero offset of every kernel.
    pub identity_bias: f64,
    /// Fixed pixel variance of the Gaussian observation model.
    pub sigma2: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            channels: 5,
            radius: 3,
            patch_radius: 3,
            hidden: 32,
            v_max: 3.0,
            identity_bias: 3.0,
            sigma2: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn kernel_len(&self) -> usize {
        (2 * self.radius + 1).pow(2)
    }

    pub fn patch_len(&self) -> usize {
        (2 * self.patch_radius + 1).pow(2)
    }

    /// Two image patches, previous and current pusher state, action, pixel
    /// coordinates.
    pub fn input_dim(&self) -> usize {
        2 * self.patch_len() + 8
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::GridTooSmall {
                width: self.width,
                height: self.height,
            });
        }
        if self.channels == 0 || self.hidden == 0 {
            return Err(Error::Config("model needs at least one channel and hidden unit".into()));
        }
        if !(self.v_max.is_finite() && self.v_max > 0.0) {
            return Err(Error::Config(format!("v_max must be positive, got {}", self.v_max)));
        }
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return Err(Error::Config(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        Ok(())
    }

    fn layout(&self) -> Layout {
        let d = self.input_dim();
        let hd = self.hidden;
        let c = self.channels;
        let k2 = self.kernel_len();
        let w1 = 0;
        let b1 = w1 + hd * d;
        let wm = b1 + hd;
        let bm = wm + c * hd;
        let wk = bm + c;
        let bk = wk + c * k2 * hd;
        Layout {
            d,
            hd,
            c,
            k2,
            w1,
            b1,
            wm,
            bm,
            wk,
            bk,
            total: bk + c * k2,
        }
    }
}

/// Offsets of each parameter block inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    d: usize,
    hd: usize,
    c: usize,
    k2: usize,
    w1: usize,
    b1: usize,
    wm: usize,
    bm: usize,
    wk: usize,
    bk: usize,
    total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    theta: Vec<f64>,
}

impl ModelParams {
    /// Random initialization; kernels start near the identity.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let lay = config.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = vec![0.0; lay.total];
        let mut fill = |range: std::ops::Range<usize>, std: f64, rng: &mut ChaCha8Rng| {
            let normal = Normal::new(0.0, std).expect("positive std");
            for v in &mut theta[range] {
                *v = normal.sample(rng);
            }
        };
        fill(lay.w1..lay.b1, 1.0 / (lay.d as f64).sqrt(), &mut rng);
        fill(lay.wm..lay.bm, 1.0 / (lay.hd as f64).sqrt(), &mut rng);
        fill(lay.wk..lay.bk, 0.5 / (lay.hd as f64).sqrt(), &mut rng);
        let centre = offset_index(config.radius, 0, 0);
        for c in 0..lay.c {
            theta[lay.bk + c * lay.k2 + centre] = config.identity_bias;
        }
        Ok(Self { config, theta })
    }

    pub fn from_theta(config: ModelConfig, theta: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if theta.len() != config.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters, expected {}",
                theta.len(),
                config.param_count()
            )));
        }
        Ok(Self { config, theta })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }
}

fn norm_coord(v: f64, side: usize) -> f64 {
    2.0 * v / (side - 1) as f64 - 1.0
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Turns upstream gradients w.r.t. softmax outputs `s` into gradients
/// w.r.t. the logits, in place.
fn softmax_backward(s: &[f64], ds: &mut [f64]) {
    let dot: f64 = s.iter().zip(ds.iter()).map(|(a, b)| a * b).sum();
    for (g, &p) in ds.iter_mut().zip(s) {
        *g = p * (*g - dot);
    }
}

/// Intermediate values of one forward step kept for the backward pass.
struct StepCache {
    global: [f64; 6],
    hidden: Vec<f64>,
    masks: Vec<f64>,
    pooled: Vec<f64>,
    kernels: Vec<f64>,
    flow: Vec<f64>,
    out: Vec<f64>,
}

struct Net<'a> {
    cfg: &'a ModelConfig,
    lay: Layout,
    theta: &'a [f64],
}

impl<'a> Net<'a> {
    fn new(params: &'a ModelParams) -> Self {
        Self {
            cfg: &params.config,
            lay: params.config.layout(),
            theta: &params.theta,
        }
    }

    fn global_features(&self, prev_state: Vec2, cur_state: Vec2, action: &Action) -> [f64; 6] {
        let (w, h) = (self.cfg.width, self.cfg.height);
        [
            norm_coord(prev_state.x, w),
            norm_coord(prev_state.y, h),
            norm_coord(cur_state.x, w),
            norm_coord(cur_state.y, h),
            norm_coord(action.target.x, w),
            norm_coord(action.target.y, h),
        ]
    }

    fn features(&self, prev: &[f64], cur: &[f64], global: &[f64; 6], p: usize, u: &mut [f64]) {
        let (w, h) = (self.cfg.width, self.cfg.height);
        let r = self.cfg.patch_radius as i64;
        let (x, y) = ((p % w) as i64, (p / w) as i64);
        let pl = self.cfg.patch_len();
        let mut i = 0;
        for dy in -r..=r {
            let row = clamp_index(y + dy, h) * w;
            for dx in -r..=r {
                let src = row + clamp_index(x + dx, w);
                u[i] = cur[src];
                u[pl + i] = prev[src];
                i += 1;
            }
        }
        u[2 * pl..2 * pl + 6].copy_from_slice(global);
        u[2 * pl + 6] = norm_coord(x as f64, w);
        u[2 * pl + 7] = norm_coord(y as f64, h);
    }

    fn forward(&self, prev: &[f64], cur: &[f64], prev_state: Vec2, cur_state: Vec2, action: &Action) -> StepCache {
        let lay = self.lay;
        let (w, h) = (self.cfg.width, self.cfg.height);
        let n = w * h;
        let th = self.theta;
        let global = self.global_features(prev_state, cur_state, action);

        let mut hidden = vec![0.0; n * lay.hd];
        let mut masks = vec![0.0; n * lay.c];
        let mut u = vec![0.0; lay.d];
        for p in 0..n {
            self.features(prev, cur, &global, p, &mut u);
            let hp = &mut hidden[p * lay.hd..(p + 1) * lay.hd];
            for (j, out) in hp.iter_mut().enumerate() {
                let row = &th[lay.w1 + j * lay.d..lay.w1 + (j + 1) * lay.d];
                let z = th[lay.b1 + j] + row.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
                *out = z.tanh();
            }
            let mp = &mut masks[p * lay.c..(p + 1) * lay.c];
            for (c, out) in mp.iter_mut().enumerate() {
                let row = &th[lay.wm + c * lay.hd..lay.wm + (c + 1) * lay.hd];
                *out = th[lay.bm + c] + row.iter().zip(hp.iter()).map(|(a, b)| a * b).sum::<f64>();
            }
            softmax_in_place(mp);
        }

        let mut pooled = vec![0.0; lay.hd];
        for hp in hidden.chunks_exact(lay.hd) {
            for (g, v) in pooled.iter_mut().zip(hp) {
                *g += v;
            }
        }
        pooled.iter_mut().for_each(|g| *g /= n as f64);

        let mut kernels = vec![0.0; lay.c * lay.k2];
        for (co, out) in kernels.iter_mut().enumerate() {
            let row = &th[lay.wk + co * lay.hd..lay.wk + (co + 1) * lay.hd];
            *out = th[lay.bk + co] + row.iter().zip(&pooled).map(|(a, b)| a * b).sum::<f64>();
        }
        for kc in kernels.chunks_exact_mut(lay.k2) {
            softmax_in_place(kc);
        }

        let mut flow = vec![0.0; n * lay.k2];
        for (p, fp) in flow.chunks_exact_mut(lay.k2).enumerate() {
            for c in 0..lay.c {
                let xi = masks[p * lay.c + c];
                for (f, m) in fp.iter_mut().zip(&kernels[c * lay.k2..(c + 1) * lay.k2]) {
                    *f += xi * m;
                }
            }
        }

        let ff = FlowField::from_parts(w, h, self.cfg.radius, flow);
        let out = super::gather(&ff, cur);
        StepCache {
            global,
            hidden,
            masks,
            pooled,
            kernels,
            flow: ff.weights().to_vec(),
            out,
        }
    }

    /// Accumulates parameter gradients into `grad` given `e = dL/d(out)`.
    /// Image gradients are added to `d_prev` / `d_cur` when requested.
    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        prev: &[f64],
        cur: &[f64],
        cache: &StepCache,
        e: &[f64],
        grad: &mut [f64],
        mut d_prev: Option<&mut [f64]>,
        mut d_cur: Option<&mut [f64]>,
    ) {
        let lay = self.lay;
        let (w, h) = (self.cfg.width, self.cfg.height);
        let n = w * h;
        let r = self.cfg.radius as i64;
        let th = self.theta;

        // Through the advection and the mask/kernel mixture.
        let mut dmask = vec![0.0; n * lay.c];
        let mut dkern = vec![0.0; lay.c * lay.k2];
        let mut df = vec![0.0; lay.k2];
        for p in 0..n {
            let ep = e[p];
            if ep == 0.0 {
                continue;
            }
            let (x, y) = ((p % w) as i64, (p / w) as i64);
            let fp = &cache.flow[p * lay.k2..(p + 1) * lay.k2];
            let mut o = 0;
            for l in -r..=r {
                let row = clamp_index(y - l, h) * w;
                for k in -r..=r {
                    let src = row + clamp_index(x - k, w);
                    df[o] = ep * cur[src];
                    if let Some(dc) = d_cur.as_deref_mut() {
                        dc[src] += ep * fp[o];
                    }
                    o += 1;
                }
            }
            for c in 0..lay.c {
                let kc = &cache.kernels[c * lay.k2..(c + 1) * lay.k2];
                dmask[p * lay.c + c] = df.iter().zip(kc).map(|(a, b)| a * b).sum();
                let xi = cache.masks[p * lay.c + c];
                for (dk, d) in dkern[c * lay.k2..(c + 1) * lay.k2].iter_mut().zip(&df) {
                    *dk += d * xi;
                }
            }
        }
        for (s, ds) in cache.masks.chunks_exact(lay.c).zip(dmask.chunks_exact_mut(lay.c)) {
            softmax_backward(s, ds);
        }
        for (s, ds) in cache.kernels.chunks_exact(lay.k2).zip(dkern.chunks_exact_mut(lay.k2)) {
            softmax_backward(s, ds);
        }

        // Kernel head.
        let mut dpooled = vec![0.0; lay.hd];
        for (co, &dq) in dkern.iter().enumerate() {
            if dq == 0.0 {
                continue;
            }
            grad[lay.bk + co] += dq;
            let base = lay.wk + co * lay.hd;
            for j in 0..lay.hd {
                grad[base + j] += dq * cache.pooled[j];
                dpooled[j] += th[base + j] * dq;
            }
        }
        let pool_share: Vec<f64> = dpooled.iter().map(|g| g / n as f64).collect();

        // Mask head and the shared hidden layer.
        let pl = self.cfg.patch_len();
        let want_images = d_prev.is_some() || d_cur.is_some();
        let mut u = vec![0.0; lay.d];
        let mut dz = vec![0.0; lay.hd];
        let mut du = vec![0.0; 2 * pl];
        let pr = self.cfg.patch_radius as i64;
        for p in 0..n {
            let hp = &cache.hidden[p * lay.hd..(p + 1) * lay.hd];
            let ds = &dmask[p * lay.c..(p + 1) * lay.c];
            dz.copy_from_slice(&pool_share);
            for (c, &g) in ds.iter().enumerate() {
                grad[lay.bm + c] += g;
                let base = lay.wm + c * lay.hd;
                for j in 0..lay.hd {
                    grad[base + j] += g * hp[j];
                    dz[j] += th[base + j] * g;
                }
            }
            for (d, v) in dz.iter_mut().zip(hp) {
                *d *= 1.0 - v * v;
            }
            self.features(prev, cur, &cache.global, p, &mut u);
            if want_images {
                du.iter_mut().for_each(|v| *v = 0.0);
            }
            for (j, &g) in dz.iter().enumerate() {
                grad[lay.b1 + j] += g;
                let base = lay.w1 + j * lay.d;
                for (gw, ui) in grad[base..base + lay.d].iter_mut().zip(&u) {
                    *gw += g * ui;
                }
                if want_images {
                    for (dv, wv) in du.iter_mut().zip(&th[base..base + 2 * pl]) {
                        *dv += wv * g;
                    }
                }
            }
            if want_images {
                let (x, y) = ((p % w) as i64, (p / w) as i64);
                let mut i = 0;
                for dy in -pr..=pr {
                    let row = clamp_index(y + dy, h) * w;
                    for dx in -pr..=pr {
                        let src = row + clamp_index(x + dx, w);
                        if let Some(dc) = d_cur.as_deref_mut() {
                            dc[src] += du[i];
                        }
                        if let Some(dp) = d_prev.as_deref_mut() {
                            dp[src] += du[pl + i];
                        }
                        i += 1;
                    }
                }
            }
        }
    }
}

/// Prediction with fixed parameters.
pub struct LearnedPredictor<'a> {
    params: &'a ModelParams,
}

impl<'a> LearnedPredictor<'a> {
    pub fn new(params: &'a ModelParams) -> Self {
        Self { params }
    }
}

impl Predictor for LearnedPredictor<'_> {
    fn predict(&self, input: &StepInput<'_>) -> Result<Prediction> {
        let cfg = &self.params.config;
        for img in [input.prev_image, input.cur_image] {
            if img.dims() != (cfg.width, cfg.height) {
                return Err(Error::DimensionMismatch(format!(
                    "{}x{} frame for a {}x{} model",
                    img.width(),
                    img.height(),
                    cfg.width,
                    cfg.height
                )));
            }
        }
        let net = Net::new(self.params);
        let cache = net.forward(
            input.prev_image.data(),
            input.cur_image.data(),
            input.prev_state,
            input.cur_state,
            &input.action(),
        );
        Ok(Prediction {
            flow: FlowField::from_parts(cfg.width, cfg.height, cfg.radius, cache.flow),
            masks: MaskField::from_parts(cfg.width, cfg.height, cfg.channels, cache.masks),
            kernels: KernelBank::from_parts(cfg.radius, cfg.channels, cache.kernels),
        })
    }

    fn radius(&self) -> usize {
        self.params.config.radius
    }

    fn pusher_speed(&self) -> f64 {
        self.params.config.v_max
    }
}

/// A training example: two conditioning frames, actions over the horizon,
/// and the true frames they produced.
#[derive(Debug, Clone, Copy)]
struct Window<'a> {
    episode: &'a EpisodeRecord,
    start: usize,
    horizon: usize,
}

impl Window<'_> {
    fn prev_index(&self) -> usize {
        self.start.saturating_sub(1)
    }
}

fn windows(ds: &Dataset, horizon: usize) -> Vec<Window<'_>> {
    let mut out = Vec::new();
    for ep in &ds.episodes {
        if ep.len() > horizon {
            for start in 0..ep.len() - horizon {
                out.push(Window {
                    episode: ep,
                    start,
                    horizon,
                });
            }
        }
    }
    out
}

/// Mean squared error of the recursive rollout over one window, and its
/// gradient when requested.
fn window_loss(params: &ModelParams, win: &Window<'_>, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    let net = Net::new(params);
    let ep = win.episode;
    let hz = win.horizon;
    let n = params.config.width * params.config.height;
    let scale = 1.0 / (hz * n) as f64;
    let v_max = params.config.v_max;

    let mut frames: Vec<Vec<f64>> = vec![
        ep.frames[win.prev_index()].data().to_vec(),
        ep.frames[win.start].data().to_vec(),
    ];
    let mut states = vec![
        Vec2::from_array(ep.states[win.prev_index()]),
        Vec2::from_array(ep.states[win.start]),
    ];
    let mut caches = Vec::with_capacity(hz);
    let mut loss = 0.0;
    for j in 0..hz {
        let action = Action::from_array(ep.actions[win.start + j]);
        let cache = net.forward(&frames[j], &frames[j + 1], states[j], states[j + 1], &action);
        let target = ep.frames[win.start + j + 1].data();
        loss += cache
            .out
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        frames.push(cache.out.clone());
        states.push(advance_pusher(states[j + 1], &action, v_max));
        caches.push(cache);
    }
    loss *= scale;
    if !want_grad {
        return (loss, None);
    }

    let mut grad = vec![0.0; params.theta.len()];
    let mut dframes: Vec<Vec<f64>> = vec![vec![0.0; n]; hz + 2];
    for j in 0..hz {
        let target = ep.frames[win.start + j + 1].data();
        for ((d, a), b) in dframes[j + 2].iter_mut().zip(&frames[j + 2]).zip(target) {
            *d += 2.0 * (a - b) * scale;
        }
    }
    for j in (0..hz).rev() {
        let e = std::mem::take(&mut dframes[j + 2]);
        let (head, _) = dframes.split_at_mut(j + 2);
        let (lo, hi) = head.split_at_mut(j + 1);
        // Frames 0 and 1 are observations; only predicted frames carry gradient.
        let d_prev = if j >= 2 { Some(lo[j].as_mut_slice()) } else { None };
        let d_cur = if j >= 1 { Some(hi[0].as_mut_slice()) } else { None };
        net.backward(&frames[j], &frames[j + 1], &caches[j], &e, &mut grad, d_prev, d_cur);
    }
    (loss, Some(grad))
}

/// Mean loss and gradient over a batch, summed in batch order.
fn batch_loss_grad(params: &ModelParams, batch: &[Window<'_>]) -> (Vec<f64>, Vec<f64>) {
    let results: Vec<(f64, Option<Vec<f64>>)> = batch.par_iter().map(|w| window_loss(params, w, true)).collect();
    let mut grad = vec![0.0; params.theta.len()];
    let mut losses = Vec::with_capacity(batch.len());
    for (loss, g) in results {
        losses.push(loss);
        for (acc, v) in grad.iter_mut().zip(g.expect("gradient requested")) {
            *acc += v;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    (losses, grad)
}

fn batch_loss(params: &ModelParams, batch: &[Window<'_>]) -> f64 {
    let losses: Vec<f64> = batch.par_iter().map(|w| window_loss(params, w, false).0).collect();
    losses.iter().sum::<f64>() / batch.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// Rollout length used for backpropagation through time.
    pub horizon: usize,
    pub seed: u64,
    /// Cap on the number of training windows, drawn once before training.
    pub max_windows: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            batch_size: 8,
            learning_rate: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            horizon: 3,
            seed: 0,
            max_windows: None,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(len: usize, cfg: &TrainConfig) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_epsilon,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            theta[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean window loss per epoch.
    pub loss_curve: Vec<f64>,
    pub windows: usize,
    pub iterations: usize,
}

fn check_dataset(params: &ModelParams, ds: &Dataset, horizon: usize) -> Result<()> {
    let cfg = &params.config;
    if (ds.width, ds.height) != (cfg.width, cfg.height) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} dataset for a {}x{} model",
            ds.width, ds.height, cfg.width, cfg.height
        )));
    }
    if horizon == 0 {
        return Err(Error::Precondition("training horizon must be at least 1".into()));
    }
    if ds.episodes.iter().all(|ep| ep.len() <= horizon) {
        return Err(Error::Precondition(format!(
            "no episode has at least {} steps",
            horizon + 1
        )));
    }
    Ok(())
}

/// Minimizes the rollout MSE with Adam over shuffled minibatches.
pub fn train(params: &mut ModelParams, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    check_dataset(params, ds, cfg.horizon)?;
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate >= 0.0) {
        return Err(Error::Config(format!("invalid learning rate {}", cfg.learning_rate)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pool = windows(ds, cfg.horizon);
    if let Some(cap) = cfg.max_windows {
        if cap < pool.len() {
            let mut idx: Vec<usize> = (0..pool.len()).collect();
            idx.shuffle(&mut rng);
            idx.truncate(cap.max(1));
            idx.sort_unstable();
            pool = idx.into_iter().map(|i| pool[i]).collect();
        }
    }

    let mut adam = Adam::new(params.theta.len(), cfg);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut iteration = 0;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut losses = vec![0.0; pool.len()];
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Window<'_>> = chunk.iter().map(|&i| pool[i]).collect();
            let (batch_losses, grad) = batch_loss_grad(params, &batch);
            if let Some(bad) = batch_losses.iter().find(|l| !l.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    iteration,
                    detail: format!("window loss {bad}"),
                });
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    iteration,
                    detail: "non-finite gradient".into(),
                });
            }
            adam.step(&mut params.theta, &grad);
            for (&i, l) in chunk.iter().zip(batch_losses) {
                losses[i] = l;
            }
            iteration += 1;
        }
        curve.push(losses.iter().sum::<f64>() / losses.len() as f64);
    }
    Ok(TrainReport {
        loss_curve: curve,
        windows: pool.len(),
        iterations: iteration,
    })
}

/// Mean rollout MSE over every window of the dataset.
pub fn evaluate(params: &ModelParams, ds: &Dataset, horizon: usize) -> Result<f64> {
    check_dataset(params, ds, horizon)?;
    Ok(batch_loss(params, &windows(ds, horizon)))
}

/// Mean per-window Gaussian log-likelihood of the predicted frames under
/// the fixed variance `sigma2`.
pub fn log_likelihood(params: &ModelParams, ds: &Dataset, horizon: usize) -> Result<f64> {
    let mse = evaluate(params, ds, horizon)?;
    let n = (horizon * ds.width * ds.height) as f64;
    let s2 = params.config.sigma2;
    Ok(-0.5 * n * mse / s2 - 0.5 * n * (2.0 * std::f64::consts::PI * s2).ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

/// `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares the analytic gradient with central finite differences
/// (step 1e-4) on `n_coords` random parameters, using two windows drawn from
/// the dataset.
pub fn grad_check(params: &ModelParams, ds: &Dataset, horizon: usize, n_coords: usize, seed: u64) -> Result<GradCheckReport> {
    grad_check_impl(params, ds, horizon, n_coords, seed, false)
}

/// As [`grad_check`], but doubles the analytic gradient of the
/// largest-magnitude checked coordinate first. A sound checker flags it.
pub fn grad_check_with_fault(
    params: &ModelParams,
    ds: &Dataset,
    horizon: usize,
    n_coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    grad_check_impl(params, ds, horizon, n_coords, seed, true)
}

fn grad_check_impl(
    params: &ModelParams,
    ds: &Dataset,
    horizon: usize,
    n_coords: usize,
    seed: u64,
    fault: bool,
) -> Result<GradCheckReport> {
    check_dataset(params, ds, horizon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = windows(ds, horizon);
    pool.shuffle(&mut rng);
    pool.truncate(2);
    let (_, mut analytic) = batch_loss_grad(params, &pool);

    let len = params.theta.len();
    let count = n_coords.min(len);
    let coords = rand::seq::index::sample(&mut rng, len, count).into_vec();
    if fault {
        let worst = *coords
            .iter()
            .max_by(|&&a, &&b| analytic[a].abs().total_cmp(&analytic[b].abs()))
            .ok_or_else(|| Error::Precondition("no coordinates to check".into()))?;
        analytic[worst] *= 2.0;
    }

    const STEP: f64 = 1e-4;
    let mut probe = params.clone();
    let mut max_err = 0.0;
    let mut worst_index = 0;
    for &i in &coords {
        let orig = probe.theta[i];
        probe.theta[i] = orig + STEP;
        let up = batch_loss(&probe, &pool);
        probe.theta[i] = orig - STEP;
        let down = batch_loss(&probe, &pool);
        probe.theta[i] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let err = relative_error(analytic[i], numeric);
        if err > max_err || (max_err == 0.0 && i == coords[0]) {
            max_err = err;
            worst_index = i;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_err,
        worst_index,
        checked: count,
    })
}

/// Checkpoint layout: `"VFMP" | u16 version | u32 width | u32 height |
/// u32 channels | u32 radius | u32 patch_radius | u32 hidden | f32 v_max |
/// f32 sigma2 | u32 n_params | n_params * f32`.
pub fn write_model<W: Write>(params: &ModelParams, out: W) -> Result<W> {
    let c = &params.config;
    let mut w = LeWriter::new(out);
    w.bytes(MODEL_MAGIC)?;
    w.u16(MODEL_VERSION)?;
    for v in [c.width, c.height, c.channels, c.radius, c.patch_radius, c.hidden] {
        w.u32(v)?;
    }
    w.f32(c.v_max)?;
    w.f32(c.sigma2)?;
    w.u32(params.theta.len())?;
    for &v in &params.theta {
        w.f32(v)?;
    }
    Ok(w.into_inner())
}

pub fn read_model<R: Read>(input: R) -> Result<ModelParams> {
    let mut r = LeReader::new(input);
    r.magic(MODEL_MAGIC)?;
    let version = r.u16()?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let config = ModelConfig {
        width: r.u32()?,
        height: r.u32()?,
        channels: r.u32()?,
        radius: r.u32()?,
        patch_radius: r.u32()?,
        hidden: r.u32()?,
        v_max: r.f32s(1)?[0],
        sigma2: r.f32s(1)?[0],
        ..ModelConfig::default()
    };
    config.validate()?;
    let n = r.u32()?;
    if n != config.param_count() {
        return Err(Error::Format(format!(
            "{n} parameters stored, architecture needs {}",
            config.param_count()
        )));
    }
    let theta = r.f32s(n)?;
    if !r.at_end()? {
        return Err(Error::Format("trailing bytes after parameters".into()));
    }
    ModelParams::from_theta(config, theta)
}

pub fn save_model(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let mut w = write_model(params, BufWriter::new(File::create(path)?))?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams> {
    read_model(BufReader::new(File::open(path)?))
}

/// Episodes of smooth random images where each frame is the previous one
/// shifted by `(dx, dy)` with edge replication.
pub fn shift_dataset(
    seed: u64,
    episodes: usize,
    steps: usize,
    width: usize,
    height: usize,
    shift: (i64, i64),
    radius: usize,
) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flow = FlowField::uniform_offset(width, height, radius, shift.0, shift.1)?;
    let mut ds = Dataset::new(width, height, radius, seed);
    for _ in 0..episodes {
        let blobs: Vec<(f64, f64, f64, f64)> = (0..6)
            .map(|_| {
                (
                    rng.random_range(0.0..width as f64),
                    rng.random_range(0.0..height as f64),
                    rng.random_range(1.5..4.0),
                    rng.random_range(0.3..0.9),
                )
            })
            .collect();
        let mut img = Image::from_fn(width, height, |x, y| {
            let v: f64 = blobs
                .iter()
                .map(|&(cx, cy, s, a)| {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    a * (-d2 / (2.0 * s * s)).exp()
                })
                .sum();
            v.min(1.0)
        })?;
        let mut frames = Vec::with_capacity(steps);
        for _ in 0..steps {
            frames.push(img.clone());
            img = advect_image(&flow, &img)?;
        }
        ds.push(EpisodeRecord::new(frames, vec![[0.0, 0.0]; steps], vec![[0.0, 0.0]; steps])?)?;
    }
    Ok(ds)
}
