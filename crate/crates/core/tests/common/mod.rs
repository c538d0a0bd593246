//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use vismpc_core::flow::{KernelBank, MaskField, Prediction, Predictor, StepInput};
use vismpc_core::grid::{FlowField, Image, PixelDistribution};
use vismpc_core::Result;

/// Random per-pixel kernels; about a third of the weights are zero.
pub fn random_flow<R: Rng>(rng: &mut R, w: usize, h: usize, radius: usize) -> FlowField {
    let k2 = (2 * radius + 1).pow(2);
    let mut weights = Vec::with_capacity(w * h * k2);
    for _ in 0..w * h {
        let mut k: Vec<f64> = (0..k2)
            .map(|_| if rng.random_bool(0.33) { 0.0 } else { rng.random::<f64>() })
            .collect();
        if k.iter().all(|&v| v == 0.0) {
            k[k2 / 2] = 1.0;
        }
        let s: f64 = k.iter().sum();
        weights.extend(k.iter().map(|v| v / s));
    }
    FlowField::new(w, h, radius, weights).unwrap()
}

fn simplex<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(3)).collect();
    let s: f64 = v.iter().sum::<f64>().max(1e-300);
    v.iter().map(|x| x / s).collect()
}

pub fn random_masks<R: Rng>(rng: &mut R, w: usize, h: usize, c: usize) -> MaskField {
    let weights = (0..w * h).flat_map(|_| simplex(rng, c)).collect();
    MaskField::new(w, h, c, weights).unwrap()
}

pub fn random_kernels<R: Rng>(rng: &mut R, c: usize, radius: usize) -> KernelBank {
    let k2 = (2 * radius + 1).pow(2);
    KernelBank::new(radius, (0..c).map(|_| simplex(rng, k2)).collect()).unwrap()
}

pub fn random_image<R: Rng>(rng: &mut R, w: usize, h: usize) -> Image {
    Image::from_vec(w, h, (0..w * h).map(|_| rng.random::<f64>()).collect()).unwrap()
}

pub fn random_distribution<R: Rng>(rng: &mut R, w: usize, h: usize) -> PixelDistribution {
    PixelDistribution::from_vec(w, h, simplex(rng, w * h)).unwrap()
}

/// Dense transition matrix `T[dst, src]` built by enumerating every source
/// pixel and offset directly from the flow weights.
pub fn transition_matrix(flow: &FlowField) -> DMatrix<f64> {
    let (w, h) = flow.dims();
    let r = flow.radius() as i64;
    let mut t = DMatrix::zeros(w * h, w * h);
    for sy in 0..h as i64 {
        for sx in 0..w as i64 {
            for l in -r..=r {
                for k in -r..=r {
                    let dx = (sx + k).clamp(0, w as i64 - 1);
                    let dy = (sy + l).clamp(0, h as i64 - 1);
                    let wgt = flow.weight(sx as usize, sy as usize, k, l);
                    t[((dy * w as i64 + dx) as usize, (sy * w as i64 + sx) as usize)] += wgt;
                }
            }
        }
    }
    t
}

pub fn as_vector(d: &PixelDistribution) -> DVector<f64> {
    DVector::from_column_slice(d.mass())
}

/// Returns the same flow for every input.
pub struct FixedFlow(pub FlowField);

impl Predictor for FixedFlow {
    fn predict(&self, _input: &StepInput<'_>) -> Result<Prediction> {
        let (w, h) = self.0.dims();
        let r = self.0.radius();
        Ok(Prediction {
            flow: self.0.clone(),
            masks: MaskField::one_hot(w, h, 1, 0),
            kernels: KernelBank::new(r, vec![FlowField::identity(1, 1, r).kernel(0, 0).to_vec()])?,
        })
    }

    fn radius(&self) -> usize {
        self.0.radius()
    }

    fn pusher_speed(&self) -> f64 {
        1.0
    }
}

/// Textured image and a copy shifted by `(dx, dy)` with edge replication.
pub fn shifted_pair<R: Rng>(rng: &mut R, size: usize, dx: i64, dy: i64) -> (Image, Image) {
    let a = random_image(rng, size, size);
    let b = Image::from_fn(size, size, |x, y| {
        let sx = (x as i64 - dx).clamp(0, size as i64 - 1) as usize;
        let sy = (y as i64 - dy).clamp(0, size as i64 - 1) as usize;
        a.get(sx, sy)
    })
    .unwrap();
    (a, b)
}
