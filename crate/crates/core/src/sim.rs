//! Planar quasi-static pushing world.
//!
//! A disc pusher servos toward a commanded target at bounded speed. Objects it
//! sweeps into are displaced along the contact normal; squares also turn when
//! pushed off-center. Objects never move unless pushed. Pixel `(x, y)` and
//! workspace point `(x, y)` coincide, with pixel centers at integer coordinates.

use std::ops::{Add, Mul, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{offset_index, FlowField, Image, Pixel, MIN_IMAGE_SIDE};

/// Intensity of the pusher in rendered frames.
pub const PUSHER_INTENSITY: f64 = 1.0;

const PLACEMENT_ATTEMPTS: usize = 1000;
const SEARCH_ITERS: usize = 100;
const CONTACT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Shorten to at most `max_len`.
    pub fn clamp_len(self, max_len: f64) -> Vec2 {
        let n = self.norm();
        if n > max_len {
            self * (max_len / n)
        } else {
            self
        }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn from_array(a: [f64; 2]) -> Self {
        Self::new(a[0], a[1])
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

/// Commanded pusher position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub target: Vec2,
}

impl Action {
    pub const fn new(x: f64, y: f64) -> Self {
        Self {
            target: Vec2::new(x, y),
        }
    }

    pub fn from_array(a: [f64; 2]) -> Self {
        Self::new(a[0], a[1])
    }

    pub fn to_array(self) -> [f64; 2] {
        self.target.to_array()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Disc { radius: f64 },
    Square { half_extent: f64, angle: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub center: Vec2,
    pub intensity: f64,
    #[serde(default = "default_mass")]
    pub mass: f64,
}

fn default_mass() -> f64 {
    1.0
}

impl ObjectSpec {
    pub fn disc(center: Vec2, radius: f64, intensity: f64) -> Self {
        Self {
            shape: Shape::Disc { radius },
            center,
            intensity,
            mass: 1.0,
        }
    }

    pub fn square(center: Vec2, half_extent: f64, angle: f64, intensity: f64) -> Self {
        Self {
            shape: Shape::Square { half_extent, angle },
            center,
            intensity,
            mass: 1.0,
        }
    }

    pub fn with_mass(mut self, mass: f64) -> Self {
        self.mass = mass;
        self
    }

    pub fn angle(&self) -> f64 {
        match self.shape {
            Shape::Disc { .. } => 0.0,
            Shape::Square { angle, .. } => angle,
        }
    }

    fn set_angle(&mut self, a: f64) {
        if let Shape::Square { angle, .. } = &mut self.shape {
            *angle = a;
        }
    }

    /// Radius of the smallest center-anchored circle containing the object.
    pub fn bounding_radius(&self) -> f64 {
        match self.shape {
            Shape::Disc { radius } => radius,
            Shape::Square { half_extent, .. } => half_extent * std::f64::consts::SQRT_2,
        }
    }

    /// Half-width of the axis-aligned bounding box.
    pub fn extent(&self) -> f64 {
        match self.shape {
            Shape::Disc { radius } => radius,
            Shape::Square { half_extent, angle } => {
                half_extent * (angle.cos().abs() + angle.sin().abs())
            }
        }
    }

    pub fn covers(&self, p: Vec2) -> bool {
        let d = p - self.center;
        match self.shape {
            Shape::Disc { radius } => d.dot(d) <= radius * radius,
            Shape::Square { half_extent, angle } => {
                let local = d.rotate(-angle);
                local.x.abs() <= half_extent && local.y.abs() <= half_extent
            }
        }
    }

    /// Signed distance from `p` to the object boundary (negative inside).
    pub fn signed_distance(&self, p: Vec2) -> f64 {
        let d = p - self.center;
        match self.shape {
            Shape::Disc { radius } => d.norm() - radius,
            Shape::Square { half_extent, angle } => {
                let q = d.rotate(-angle);
                let ox = q.x.abs() - half_extent;
                let oy = q.y.abs() - half_extent;
                let outside = Vec2::new(ox.max(0.0), oy.max(0.0)).norm();
                outside + ox.max(oy).min(0.0)
            }
        }
    }

    /// Closest point of the (filled) object to `p`.
    pub fn closest_point(&self, p: Vec2) -> Vec2 {
        let d = p - self.center;
        match self.shape {
            Shape::Disc { radius } => {
                let n = d.norm();
                if n <= radius {
                    p
                } else {
                    self.center + d * (radius / n)
                }
            }
            Shape::Square { half_extent, angle } => {
                let q = d.rotate(-angle);
                let c = Vec2::new(
                    q.x.clamp(-half_extent, half_extent),
                    q.y.clamp(-half_extent, half_extent),
                );
                self.center + c.rotate(angle)
            }
        }
    }

    /// Points whose displacement bounds that of every surface point under a
    /// rigid motion: the center for discs (they never turn), corners for squares.
    fn probe_points(&self) -> Vec<Vec2> {
        match self.shape {
            Shape::Disc { .. } => vec![self.center],
            Shape::Square { half_extent, angle } => [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)]
                .iter()
                .map(|&(sx, sy)| self.center + Vec2::new(sx * half_extent, sy * half_extent).rotate(angle))
                .collect(),
        }
    }

    /// Where the material point at `p` ends up when the object moves to `next`.
    pub fn carry(&self, next: &ObjectSpec, p: Vec2) -> Vec2 {
        next.center + (p - self.center).rotate(next.angle() - self.angle())
    }

    fn max_displacement(&self, next: &ObjectSpec) -> f64 {
        self.probe_points()
            .into_iter()
            .map(|p| (self.carry(next, p) - p).norm())
            .fold(0.0, f64::max)
    }

    fn validate(&self) -> Result<()> {
        let size = match self.shape {
            Shape::Disc { radius } => radius,
            Shape::Square { half_extent, .. } => half_extent,
        };
        if !(size >= 1.5) {
            return Err(Error::Config(format!("object size {size} below 1.5 px")));
        }
        if !(self.intensity > 0.0 && self.intensity <= 1.0) {
            return Err(Error::Config(format!(
                "object intensity {} outside (0, 1]",
                self.intensity
            )));
        }
        if !(self.mass > 0.0) {
            return Err(Error::Config("object mass factor must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    /// Maximum pusher travel per step, px.
    pub v_max: f64,
    /// Rotation gain for off-center pushes on squares, rad per px of lever arm
    /// at full pusher speed.
    pub torque_gain: f64,
    /// Cap on any object surface point's per-step motion, px.
    pub max_surface_step: f64,
    pub pusher_radius: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            v_max: 3.0,
            torque_gain: 0.08,
            max_surface_step: 3.0,
            pusher_radius: 2.0,
        }
    }
}

impl SimParams {
    /// Smallest flow radius that covers every surface's per-step motion.
    pub fn required_radius(&self) -> usize {
        self.v_max.max(self.max_surface_step).round() as usize
    }
}

/// What occupies a pixel in a rendered frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    Background,
    Pusher,
    Object(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub width: usize,
    pub height: usize,
    pub pusher: Vec2,
    pub objects: Vec<ObjectSpec>,
    pub step: u64,
    pub seed: u64,
    pub params: SimParams,
}

impl WorldState {
    pub fn new(width: usize, height: usize, pusher: Vec2, objects: Vec<ObjectSpec>, params: SimParams) -> Result<Self> {
        if width < MIN_IMAGE_SIDE || height < MIN_IMAGE_SIDE {
            return Err(Error::GridTooSmall { width, height });
        }
        for o in &objects {
            o.validate()?;
        }
        Ok(Self {
            width,
            height,
            pusher,
            objects,
            step: 0,
            seed: 0,
            params,
        })
    }

    /// Upper corner of the action box; both axes span `[0, side - 1]`.
    pub fn bounds(&self) -> Vec2 {
        Vec2::new((self.width - 1) as f64, (self.height - 1) as f64)
    }

    pub fn in_bounds(&self, p: Vec2) -> bool {
        let b = self.bounds();
        p.x.is_finite() && p.y.is_finite() && p.x >= 0.0 && p.y >= 0.0 && p.x <= b.x && p.y <= b.y
    }

    /// Clamp a point into the action box.
    pub fn clamp_point(&self, p: Vec2) -> Vec2 {
        let b = self.bounds();
        Vec2::new(p.x.clamp(0.0, b.x), p.y.clamp(0.0, b.y))
    }

    pub fn pusher_covers(&self, p: Vec2) -> bool {
        let d = p - self.pusher;
        d.dot(d) <= self.params.pusher_radius * self.params.pusher_radius
    }

    /// Topmost surface at pixel `(x, y)`: pusher, then objects in reverse
    /// draw order, then background.
    pub fn surface_at(&self, x: usize, y: usize) -> Surface {
        let p = Vec2::new(x as f64, y as f64);
        if self.pusher_covers(p) {
            return Surface::Pusher;
        }
        self.objects
            .iter()
            .enumerate()
            .rev()
            .find(|(_, o)| o.covers(p))
            .map_or(Surface::Background, |(i, _)| Surface::Object(i))
    }

    pub fn pusher_pixel(&self) -> Pixel {
        Pixel::nearest(self.pusher.x, self.pusher.y, self.width, self.height)
    }

    pub fn object_pixel(&self, i: usize) -> Pixel {
        let c = self.objects[i].center;
        Pixel::nearest(c.x, c.y, self.width, self.height)
    }
}

/// Smallest `s` in `[0, 1]` with `obj.signed_distance(start + s * delta) <= thresh`.
///
/// The signed distance to a convex set is convex along a line, so the
/// sublevel set is an interval; returns `(last_clear, first_hit)`.
fn first_contact(obj: &ObjectSpec, start: Vec2, delta: Vec2, thresh: f64) -> Option<(f64, f64)> {
    let f = |s: f64| obj.signed_distance(start + delta * s);
    if f(0.0) <= thresh {
        return Some((0.0, 0.0));
    }
    let (mut a, mut b) = (0.0, 1.0);
    for _ in 0..SEARCH_ITERS {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if f(m1) <= f(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    let s_min = if f(1.0) <= f(a) { 1.0 } else { a };
    if f(s_min) > thresh {
        return None;
    }
    let (mut lo, mut hi) = (0.0, s_min);
    for _ in 0..SEARCH_ITERS {
        let mid = 0.5 * (lo + hi);
        if f(mid) <= thresh {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some((lo, hi))
}

fn clamp_into_bounds(obj: &mut ObjectSpec, width: usize, height: usize) {
    let e = obj.extent();
    let (w, h) = ((width - 1) as f64, (height - 1) as f64);
    if w >= 2.0 * e {
        obj.center.x = obj.center.x.clamp(e, w - e);
    }
    if h >= 2.0 * e {
        obj.center.y = obj.center.y.clamp(e, h - e);
    }
}

/// Move `obj` by translation `d` and rotation `dtheta`, shrinking the motion
/// until no surface point travels farther than `cap`, then clamping into the
/// world.
fn displace(obj: &ObjectSpec, d: Vec2, dtheta: f64, cap: f64, width: usize, height: usize) -> ObjectSpec {
    let moved = |d: Vec2, dtheta: f64| {
        let mut n = *obj;
        n.center = obj.center + d;
        n.set_angle(obj.angle() + dtheta);
        n
    };
    let (mut d, mut dtheta) = (d, dtheta);
    let mut next = moved(d, dtheta);
    for _ in 0..64 {
        let m = obj.max_displacement(&next);
        if m <= cap {
            break;
        }
        let f = cap / m * (1.0 - 1e-12);
        d = d * f;
        dtheta *= f;
        next = moved(d, dtheta);
    }
    clamp_into_bounds(&mut next, width, height);
    if obj.max_displacement(&next) > cap + CONTACT_EPS {
        next = moved(d.clamp_len(cap), 0.0);
        clamp_into_bounds(&mut next, width, height);
    }
    next
}

/// Advance the world by one commanded action.
pub fn step(state: &WorldState, action: &Action) -> Result<WorldState> {
    if !state.in_bounds(action.target) {
        return Err(Error::OutOfBounds(format!(
            "action target ({}, {}) outside [0, {}] x [0, {}]",
            action.target.x,
            action.target.y,
            state.width - 1,
            state.height - 1
        )));
    }
    let params = &state.params;
    let rp = params.pusher_radius;
    let start = state.pusher;
    let delta = (action.target - start).clamp_len(params.v_max);

    let mut objects = state.objects.clone();
    if delta.norm() > 0.0 {
        for (obj, next) in state.objects.iter().zip(objects.iter_mut()) {
            let Some((_, s)) = first_contact(obj, start, delta, rp) else {
                continue;
            };
            let at_contact = start + delta * s;
            let cp = obj.closest_point(at_contact);
            let mut normal = cp - at_contact;
            if normal.norm() < 1e-12 {
                normal = obj.center - at_contact;
            }
            if normal.norm() < 1e-12 {
                normal = delta;
            }
            let normal = normal * (1.0 / normal.norm());
            let push = (delta * (1.0 - s)).dot(normal);
            if push <= 0.0 {
                continue;
            }
            let d = normal * (push / obj.mass);
            let dtheta = match obj.shape {
                Shape::Disc { .. } => 0.0,
                Shape::Square { .. } => params.torque_gain * (cp - obj.center).cross(d) / params.v_max,
            };
            *next = displace(obj, d, dtheta, params.max_surface_step, state.width, state.height);
            if next.signed_distance(start) < rp - CONTACT_EPS {
                *next = displace(obj, d, 0.0, params.max_surface_step, state.width, state.height);
            }
        }
    }

    // The pusher stops at its first contact with the objects' final poses.
    let mut travel = 1.0f64;
    for obj in &objects {
        if let Some((clear, _)) = first_contact(obj, start, delta, rp - CONTACT_EPS) {
            travel = travel.min(clear);
        }
    }
    let pusher = start + delta * travel;

    Ok(WorldState {
        width: state.width,
        height: state.height,
        pusher,
        objects,
        step: state.step + 1,
        seed: state.seed,
        params: state.params,
    })
}

/// Rasterize the world: background 0, objects in order, pusher on top.
pub fn render(state: &WorldState) -> Image {
    Image::from_fn(state.width, state.height, |x, y| match state.surface_at(x, y) {
        Surface::Background => 0.0,
        Surface::Pusher => PUSHER_INTENSITY,
        Surface::Object(i) => state.objects[i].intensity,
    })
    .expect("world dimensions validated at construction")
}

/// Per-pixel displacement of whatever surface occupies each pixel of `state`
/// when moving to `next`.
pub fn surface_displacements(state: &WorldState, next: &WorldState) -> Vec<Vec2> {
    let mut out = Vec::with_capacity(state.width * state.height);
    for y in 0..state.height {
        for x in 0..state.width {
            let p = Vec2::new(x as f64, y as f64);
            let d = match state.surface_at(x, y) {
                Surface::Background => Vec2::ZERO,
                Surface::Pusher => next.pusher - state.pusher,
                Surface::Object(i) => state.objects[i].carry(&next.objects[i], p) - p,
            };
            out.push(d);
        }
    }
    out
}

/// Delta-kernel flow field moving each pixel with its surface, rounded to
/// the nearest integer offset.
pub fn ground_truth_flow(state: &WorldState, action: &Action, radius: usize) -> Result<FlowField> {
    let next = step(state, action)?;
    flow_between(state, &next, radius)
}

pub(crate) fn flow_between(state: &WorldState, next: &WorldState, radius: usize) -> Result<FlowField> {
    let side = 2 * radius + 1;
    let k2 = side * side;
    let (w, h) = (state.width, state.height);
    let mut weights = vec![0.0; w * h * k2];
    let r = radius as i64;
    for (i, d) in surface_displacements(state, next).into_iter().enumerate() {
        let (dx, dy) = (d.x.round() as i64, d.y.round() as i64);
        if dx.abs() > r || dy.abs() > r {
            return Err(Error::RadiusTooSmall {
                radius,
                x: i % w,
                y: i / w,
                dx,
                dy,
            });
        }
        weights[i * k2 + offset_index(radius, dx, dy)] = 1.0;
    }
    Ok(FlowField::from_parts(w, h, radius, weights))
}

/// Seeded scene: pusher on the border band, `n_objects` non-overlapping
/// objects at least 1 px inside the world.
pub fn random_scene(seed: u64, n_objects: usize, width: usize, height: usize) -> Result<WorldState> {
    random_scene_with(seed, n_objects, width, height, SimParams::default())
}

pub fn random_scene_with(
    seed: u64,
    n_objects: usize,
    width: usize,
    height: usize,
    params: SimParams,
) -> Result<WorldState> {
    if n_objects == 0 {
        return Err(Error::Precondition("scene needs at least one object".into()));
    }
    if width < MIN_IMAGE_SIDE || height < MIN_IMAGE_SIDE {
        return Err(Error::GridTooSmall { width, height });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (wmax, hmax) = ((width - 1) as f64, (height - 1) as f64);
    let rp = params.pusher_radius;

    let side = rng.random_range(0..4u8);
    let depth = rp + rng.random_range(0.0..2.0);
    let pusher = match side {
        0 => Vec2::new(rng.random_range(rp..=wmax - rp), depth),
        1 => Vec2::new(rng.random_range(rp..=wmax - rp), hmax - depth),
        2 => Vec2::new(depth, rng.random_range(rp..=hmax - rp)),
        _ => Vec2::new(wmax - depth, rng.random_range(rp..=hmax - rp)),
    };

    let mut objects: Vec<ObjectSpec> = Vec::with_capacity(n_objects);
    let mut attempts = 0;
    while objects.len() < n_objects {
        attempts += 1;
        if attempts > PLACEMENT_ATTEMPTS {
            return Err(Error::PlacementFailure(PLACEMENT_ATTEMPTS));
        }
        let shape = if rng.random_bool(0.5) {
            Shape::Disc {
                radius: rng.random_range(2.0..3.5),
            }
        } else {
            Shape::Square {
                half_extent: rng.random_range(2.0..2.8),
                angle: rng.random_range(0.0..std::f64::consts::FRAC_PI_2),
            }
        };
        let intensity = rng.random_range(0.35..0.85);
        let mass = rng.random_range(1.0..1.5);
        let mut obj = ObjectSpec {
            shape,
            center: Vec2::ZERO,
            intensity,
            mass,
        };
        let e = obj.extent();
        let (lo_x, hi_x) = (e + 1.0, wmax - 1.0 - e);
        let (lo_y, hi_y) = (e + 1.0, hmax - 1.0 - e);
        if lo_x >= hi_x || lo_y >= hi_y {
            continue;
        }
        obj.center = Vec2::new(rng.random_range(lo_x..hi_x), rng.random_range(lo_y..hi_y));
        let r = obj.bounding_radius();
        let clear_pusher = (obj.center - pusher).norm() >= r + rp + 1.0;
        let clear_others = objects
            .iter()
            .all(|o| (o.center - obj.center).norm() >= r + o.bounding_radius() + 1.0);
        if clear_pusher && clear_others {
            objects.push(obj);
        }
    }
    let mut state = WorldState::new(width, height, pusher, objects, params)?;
    state.seed = seed;
    Ok(state)
}

/// Reproducible scene description, accepted as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    #[serde(default = "default_grid")]
    pub width: usize,
    #[serde(default = "default_grid")]
    pub height: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_objects")]
    pub n_objects: usize,
    /// Explicit objects; when present they replace the random layout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objects: Option<Vec<ObjectSpec>>,
    /// Explicit pusher position; overrides the random border spawn.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pusher: Option<Vec2>,
    #[serde(default)]
    pub params: SimParams,
}

fn default_grid() -> usize {
    32
}

fn default_objects() -> usize {
    2
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            seed: 0,
            n_objects: 2,
            objects: None,
            pusher: None,
            params: SimParams::default(),
        }
    }
}

impl SceneConfig {
    pub fn from_seed(seed: u64, n_objects: usize, grid: usize) -> Self {
        Self {
            width: grid,
            height: grid,
            seed,
            n_objects,
            ..Self::default()
        }
    }

    pub fn build(&self) -> Result<WorldState> {
        let mut state = match &self.objects {
            Some(objs) => {
                let mut base = random_scene_with(self.seed, 1, self.width, self.height, self.params)?;
                base.objects = objs.clone();
                for o in &base.objects {
                    o.validate()?;
                }
                base
            }
            None => random_scene_with(self.seed, self.n_objects, self.width, self.height, self.params)?,
        };
        if let Some(p) = self.pusher {
            if !state.in_bounds(p) {
                return Err(Error::OutOfBounds(format!("pusher ({}, {}) outside world", p.x, p.y)));
            }
            state.pusher = p;
        }
        Ok(state)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world(pusher: Vec2, objects: Vec<ObjectSpec>) -> WorldState {
        WorldState::new(32, 32, pusher, objects, SimParams::default()).unwrap()
    }

    #[test]
    fn no_contact_leaves_objects() {
        let s = world(
            Vec2::new(3.0, 3.0),
            vec![ObjectSpec::disc(Vec2::new(20.0, 20.0), 3.0, 0.5)],
        );
        let n = step(&s, &Action::new(3.0, 9.0)).unwrap();
        assert_eq!(n.objects, s.objects);
        assert_eq!(n.pusher, Vec2::new(3.0, 6.0));
    }

    #[test]
    fn head_on_push_matches_hand_computation() {
        // Pusher r=2 at (10,10) already overlaps the r=3 disc at (14,10) by 1 px.
        // Contact at s=0 with normal (1,0): the object takes the full 3 px of
        // sweep along the normal (mass 1), landing at x=17. The pusher then
        // stops where it touches the moved disc: 17 - 3 - 2 = 12.
        let s = world(
            Vec2::new(10.0, 10.0),
            vec![ObjectSpec::disc(Vec2::new(14.0, 10.0), 3.0, 0.5)],
        );
        let n = step(&s, &Action::new(20.0, 10.0)).unwrap();
        assert!((n.objects[0].center.x - 17.0).abs() < 1e-12);
        assert_eq!(n.objects[0].center.y, 10.0);
        assert!((n.pusher.x - 12.0).abs() < 1e-9);
        assert!(n.objects[0].signed_distance(n.pusher) >= 2.0 - 1e-9);
    }

    #[test]
    fn push_from_a_gap_moves_only_post_contact_sweep() {
        // Gap of 1 px: contact after 1/3 of the 3 px sweep, object moves 2 px.
        let s = world(
            Vec2::new(8.0, 10.0),
            vec![ObjectSpec::disc(Vec2::new(14.0, 10.0), 3.0, 0.5)],
        );
        let n = step(&s, &Action::new(20.0, 10.0)).unwrap();
        assert!((n.objects[0].center.x - 16.0).abs() < 1e-9);
        assert!((n.pusher.x - 11.0).abs() < 1e-9);
    }

    #[test]
    fn heavy_object_moves_less() {
        let s = world(
            Vec2::new(9.0, 10.0),
            vec![ObjectSpec::disc(Vec2::new(14.0, 10.0), 3.0, 0.5).with_mass(2.0)],
        );
        let n = step(&s, &Action::new(20.0, 10.0)).unwrap();
        assert!((n.objects[0].center.x - 15.5).abs() < 1e-9);
        assert!((n.pusher.x - 10.5).abs() < 1e-9);
    }

    #[test]
    fn off_center_push_rotates_square() {
        let sq = ObjectSpec::square(Vec2::new(16.0, 16.0), 3.0, 0.0, 0.6);
        let mut s = world(Vec2::new(10.0, 18.5), vec![sq]);
        for _ in 0..5 {
            s = step(&s, &Action::new(30.0, 18.5)).unwrap();
        }
        let turned = s.objects[0].angle().abs();
        assert!(turned > 10f64.to_radians(), "rotation {turned}");
        assert!(s.objects[0].center.x > 16.0);
    }

    #[test]
    fn objects_clamp_at_world_edge() {
        let s = world(
            Vec2::new(24.0, 10.0),
            vec![ObjectSpec::disc(Vec2::new(28.5, 10.0), 2.5, 0.5)],
        );
        let n = step(&s, &Action::new(31.0, 10.0)).unwrap();
        assert!(n.objects[0].center.x <= 31.0 - 2.5 + 1e-12);
        assert!(n.objects[0].signed_distance(n.pusher) >= 2.0 - 1e-9);
    }

    #[test]
    fn out_of_bounds_action_is_rejected() {
        let s = world(Vec2::new(3.0, 3.0), vec![]);
        assert!(matches!(
            step(&s, &Action::new(32.0, 3.0)),
            Err(Error::OutOfBounds(_))
        ));
        assert!(step(&s, &Action::new(-0.1, 3.0)).is_err());
        assert!(step(&s, &Action::new(31.0, 31.0)).is_ok());
    }

    #[test]
    fn render_draw_order() {
        let empty = world(Vec2::new(-10.0, -10.0), vec![]);
        assert!(render(&empty).data().iter().all(|&v| v == 0.0));

        let s = world(
            Vec2::new(-10.0, -10.0),
            vec![ObjectSpec::disc(Vec2::new(16.0, 16.0), 3.0, 0.4)],
        );
        let img = render(&s);
        for y in 0..32 {
            for x in 0..32 {
                let inside = ((x as f64 - 16.0).powi(2) + (y as f64 - 16.0).powi(2)) <= 9.0;
                assert_eq!(img.get(x, y), if inside { 0.4 } else { 0.0 });
            }
        }

        let mut over = s.clone();
        over.pusher = Vec2::new(18.0, 16.0);
        let img = render(&over);
        assert_eq!(img.get(18, 16), PUSHER_INTENSITY);
        assert_eq!(img.get(14, 16), 0.4);
    }

    #[test]
    fn stationary_action_gives_identity_flow() {
        let s = random_scene(3, 2, 32, 32).unwrap();
        let f = ground_truth_flow(&s, &Action::from_array(s.pusher.to_array()), 3).unwrap();
        assert_eq!(f, FlowField::identity(32, 32, 3));
    }

    #[test]
    fn integer_translation_flow() {
        // Pusher touching the disc, moving 2 px straight right.
        let s = world(
            Vec2::new(9.0, 10.0),
            vec![ObjectSpec::disc(Vec2::new(14.0, 10.0), 3.0, 0.5)],
        );
        let a = Action::new(11.0, 10.0);
        let n = step(&s, &a).unwrap();
        assert!((n.objects[0].center.x - 16.0).abs() < 1e-9);
        let f = ground_truth_flow(&s, &a, 3).unwrap();
        assert_eq!(f.weight(14, 10, 2, 0), 1.0);
        assert_eq!(f.weight(12, 10, 2, 0), 1.0);
        assert_eq!(f.weight(25, 25, 0, 0), 1.0);
    }

    #[test]
    fn fractional_translation_rounds_to_nearest() {
        // Object displacement 1.4 px -> offset (1, 0).
        let s = world(
            Vec2::new(9.0, 10.0),
            vec![ObjectSpec::disc(Vec2::new(14.0, 10.0), 3.0, 0.5)],
        );
        let a = Action::new(10.4, 10.0);
        let n = step(&s, &a).unwrap();
        assert!((n.objects[0].center.x - 15.4).abs() < 1e-9);
        let f = ground_truth_flow(&s, &a, 3).unwrap();
        assert_eq!(f.weight(14, 10, 1, 0), 1.0);
    }

    #[test]
    fn small_radius_is_rejected() {
        let s = world(Vec2::new(5.0, 5.0), vec![]);
        let r = ground_truth_flow(&s, &Action::new(8.0, 5.0), 2);
        assert!(matches!(r, Err(Error::RadiusTooSmall { .. })));
    }

    #[test]
    fn random_scene_constraints() {
        let a = random_scene(7, 3, 32, 32).unwrap();
        assert_eq!(a, random_scene(7, 3, 32, 32).unwrap());
        for seed in 0..50 {
            let s = random_scene(seed, 3, 32, 32).unwrap();
            for (i, o) in s.objects.iter().enumerate() {
                let e = o.extent();
                assert!(o.center.x - e >= 1.0 && o.center.x + e <= 30.0);
                assert!(o.center.y - e >= 1.0 && o.center.y + e <= 30.0);
                for p in &s.objects[i + 1..] {
                    let gap = (o.center - p.center).norm() - o.bounding_radius() - p.bounding_radius();
                    assert!(gap >= 1.0);
                }
                assert!(o.signed_distance(s.pusher) > s.params.pusher_radius);
            }
            let p = s.pusher;
            let border = p.x.min(p.y).min(31.0 - p.x).min(31.0 - p.y);
            assert!(border <= 4.0 + 1e-9, "pusher not on border: {p:?}");
        }
        assert!(random_scene(1, 0, 32, 32).is_err());
    }

    #[test]
    fn crowded_scene_fails_placement() {
        assert!(matches!(
            random_scene(1, 40, 8, 8),
            Err(Error::PlacementFailure(_))
        ));
    }

    #[test]
    fn scene_config_toml_roundtrip() {
        let cfg = SceneConfig {
            objects: Some(vec![ObjectSpec::square(Vec2::new(12.0, 12.0), 3.0, 0.2, 0.7)]),
            pusher: Some(Vec2::new(4.0, 12.0)),
            ..SceneConfig::default()
        };
        let text = cfg.to_toml().unwrap();
        let back = SceneConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        let w = back.build().unwrap();
        assert_eq!(w.pusher, Vec2::new(4.0, 12.0));
        assert_eq!(w.objects.len(), 1);
    }
}
