//! Dense grid types: intensity images, pixel-position distributions, and
//! per-pixel stochastic flow kernels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest image side accepted anywhere in the pipeline.
pub const MIN_IMAGE_SIDE: usize = 8;

/// Tolerance used when validating kernels passed to [`FlowField::new`].
pub const KERNEL_SUM_TOLERANCE: f64 = 1e-4;

const ZERO_MASS: f64 = 1e-12;

/// Integer pixel coordinate; `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pixel {
    pub x: usize,
    pub y: usize,
}

impl Pixel {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Pixel) -> f64 {
        let dx = self.x as f64 - other.x as f64;
        let dy = self.y as f64 - other.y as f64;
        dx.hypot(dy)
    }

    pub fn in_bounds(&self, width: usize, height: usize) -> bool {
        self.x < width && self.y < height
    }

    /// Nearest pixel to a continuous workspace point, clamped into the grid.
    pub fn nearest(px: f64, py: f64, width: usize, height: usize) -> Self {
        let cx = px.round().clamp(0.0, (width - 1) as f64);
        let cy = py.round().clamp(0.0, (height - 1) as f64);
        Self::new(cx as usize, cy as usize)
    }
}

impl std::fmt::Display for Pixel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{}", self.x, self.y)
    }
}

/// Clamp a signed coordinate into `[0, len)`.
#[inline]
pub(crate) fn clamp_index(v: i64, len: usize) -> usize {
    v.clamp(0, len as i64 - 1) as usize
}

/// Single-channel intensity image, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        check_image_dims(width, height)?;
        Ok(Self {
            width,
            height,
            data: vec![value; width * height],
        })
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_image_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "image {}x{} needs {} values, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("image values must be finite".into()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        check_image_dims(width, height)?;
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::from_vec(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Value at a signed coordinate, clamped to the nearest edge pixel.
    #[inline]
    pub fn get_clamped(&self, x: i64, y: i64) -> f64 {
        self.get(clamp_index(x, self.width), clamp_index(y, self.height))
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean_abs_diff(&self, other: &Image) -> Result<f64> {
        check_same(self.dims(), other.dims())?;
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(sum / self.data.len() as f64)
    }

    /// 8-bit quantization, `round(v * 255)` after clamping to [0, 1].
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::from_vec(
            width,
            height,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }
}

fn check_image_dims(width: usize, height: usize) -> Result<()> {
    if width < MIN_IMAGE_SIDE || height < MIN_IMAGE_SIDE {
        return Err(Error::GridTooSmall { width, height });
    }
    Ok(())
}

pub(crate) fn check_same(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}

/// Nonnegative mass over pixel positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelDistribution {
    width: usize,
    height: usize,
    mass: Vec<f64>,
}

impl PixelDistribution {
    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "distribution needs a non-empty grid");
        Self {
            width,
            height,
            mass: vec![0.0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, mass: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || mass.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "distribution {}x{} with {} entries",
                width,
                height,
                mass.len()
            )));
        }
        if mass.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::Precondition(
                "distribution entries must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            mass,
        })
    }

    /// Unit mass at `pixel`.
    pub fn delta(width: usize, height: usize, pixel: Pixel) -> Result<Self> {
        if !pixel.in_bounds(width, height) {
            return Err(Error::OutOfBounds(format!(
                "pixel {pixel} outside {width}x{height}"
            )));
        }
        let mut d = Self::zeros(width, height);
        d.mass[pixel.y * width + pixel.x] = 1.0;
        Ok(d)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub(crate) fn mass_mut(&mut self) -> &mut [f64] {
        &mut self.mass
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.mass[y * self.width + x]
    }

    pub fn at(&self, p: Pixel) -> f64 {
        self.get(p.x, p.y)
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Pixel holding the most mass; ties go to the first in row-major order.
    pub fn argmax(&self) -> Pixel {
        let mut best = 0;
        for (i, &m) in self.mass.iter().enumerate() {
            if m > self.mass[best] {
                best = i;
            }
        }
        Pixel::new(best % self.width, best / self.width)
    }
}

/// Rescale `dist` to unit total mass.
pub fn normalize(dist: &PixelDistribution) -> Result<PixelDistribution> {
    let total = dist.total();
    if !(total > ZERO_MASS) {
        return Err(Error::ZeroMass(total));
    }
    Ok(PixelDistribution {
        width: dist.width,
        height: dist.height,
        mass: dist.mass.iter().map(|m| m / total).collect(),
    })
}

/// Per-pixel normalized kernels over integer offsets `(k, l)` in
/// `[-radius, radius]^2`; `k` is the column offset, `l` the row offset.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    radius: usize,
    weights: Vec<f64>,
}

impl FlowField {
    /// Validating constructor: every weight must be finite and nonnegative and
    /// each kernel must sum to 1 within [`KERNEL_SUM_TOLERANCE`].
    pub fn new(width: usize, height: usize, radius: usize, weights: Vec<f64>) -> Result<Self> {
        let side = 2 * radius + 1;
        let k2 = side * side;
        if width == 0 || height == 0 || weights.len() != width * height * k2 {
            return Err(Error::DimensionMismatch(format!(
                "flow {}x{} radius {} needs {} weights, got {}",
                width,
                height,
                radius,
                width * height * k2,
                weights.len()
            )));
        }
        for (i, kernel) in weights.chunks_exact(k2).enumerate() {
            let (x, y) = (i % width, i / width);
            if kernel.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::InvalidKernel {
                    x,
                    y,
                    reason: "negative or non-finite weight".into(),
                });
            }
            let sum: f64 = kernel.iter().sum();
            if (sum - 1.0).abs() > KERNEL_SUM_TOLERANCE {
                return Err(Error::InvalidKernel {
                    x,
                    y,
                    reason: format!("kernel sums to {sum}"),
                });
            }
        }
        Ok(Self {
            width,
            height,
            radius,
            weights,
        })
    }

    /// Construct without validation; callers guarantee the invariants.
    pub(crate) fn from_parts(width: usize, height: usize, radius: usize, weights: Vec<f64>) -> Self {
        debug_assert_eq!(weights.len(), width * height * (2 * radius + 1).pow(2));
        Self {
            width,
            height,
            radius,
            weights,
        }
    }

    pub fn identity(width: usize, height: usize, radius: usize) -> Self {
        Self::uniform_offset(width, height, radius, 0, 0)
            .expect("zero offset always fits")
    }

    /// Every pixel carries a delta kernel at offset `(k, l)`.
    pub fn uniform_offset(width: usize, height: usize, radius: usize, k: i64, l: i64) -> Result<Self> {
        let r = radius as i64;
        if k.abs() > r || l.abs() > r {
            return Err(Error::OutOfBounds(format!(
                "offset ({k}, {l}) outside radius {radius}"
            )));
        }
        let side = 2 * radius + 1;
        let k2 = side * side;
        let mut weights = vec![0.0; width * height * k2];
        let idx = offset_index(radius, k, l);
        for kernel in weights.chunks_exact_mut(k2) {
            kernel[idx] = 1.0;
        }
        Ok(Self::from_parts(width, height, radius, weights))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Kernel side length `2 * radius + 1`.
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn kernel(&self, x: usize, y: usize) -> &[f64] {
        let k2 = self.side() * self.side();
        let start = (y * self.width + x) * k2;
        &self.weights[start..start + k2]
    }

    pub fn weight(&self, x: usize, y: usize, k: i64, l: i64) -> f64 {
        self.kernel(x, y)[offset_index(self.radius, k, l)]
    }

    /// Offsets paired with kernel slots, in storage order.
    pub fn offsets(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        offsets(self.radius)
    }
}

/// Storage slot of offset `(k, l)` within a kernel of the given radius.
#[inline]
pub fn offset_index(radius: usize, k: i64, l: i64) -> usize {
    let side = 2 * radius as i64 + 1;
    ((l + radius as i64) * side + (k + radius as i64)) as usize
}

/// All offsets `(k, l)` of a kernel, row-major over `l` then `k`.
pub fn offsets(radius: usize) -> impl Iterator<Item = (i64, i64)> {
    let r = radius as i64;
    (-r..=r).flat_map(move |l| (-r..=r).map(move |k| (k, l)))
}
