//! Block-matching tracker for designated pixels between consecutive frames.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_same, Image, Pixel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackConfig {
    pub patch_radius: usize,
    pub search_radius: usize,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            patch_radius: 3,
            search_radius: 4,
        }
    }
}

fn ssd(prev: &Image, next: &Image, from: (i64, i64), to: (i64, i64), r: i64) -> f64 {
    let mut acc = 0.0;
    for dy in -r..=r {
        for dx in -r..=r {
            let a = prev.get_clamped(from.0 + dx, from.1 + dy);
            let b = next.get_clamped(to.0 + dx, to.1 + dy);
            acc += (a - b) * (a - b);
        }
    }
    acc
}

/// New location of `pixel`: the in-bounds displacement within the search
/// window minimizing the sum of squared differences between edge-clamped
/// patches. Ties prefer the smaller displacement, then smaller `(dy, dx)`.
pub fn track(prev: &Image, next: &Image, pixel: Pixel, cfg: &TrackConfig) -> Result<Pixel> {
    check_same(prev.dims(), next.dims())?;
    let (w, h) = prev.dims();
    if !pixel.in_bounds(w, h) {
        return Err(Error::OutOfBounds(format!("tracked pixel {pixel} outside {w}x{h}")));
    }
    let s = cfg.search_radius as i64;
    let r = cfg.patch_radius as i64;
    let from = (pixel.x as i64, pixel.y as i64);
    let mut best: Option<(f64, i64, i64, i64)> = None;
    for dy in -s..=s {
        for dx in -s..=s {
            let to = (from.0 + dx, from.1 + dy);
            if to.0 < 0 || to.1 < 0 || to.0 >= w as i64 || to.1 >= h as i64 {
                continue;
            }
            let cost = ssd(prev, next, from, to, r);
            let d2 = dx * dx + dy * dy;
            let better = match best {
                None => true,
                Some((c, bd2, bdy, bdx)) => {
                    cost < c || (cost == c && (d2, dy, dx) < (bd2, bdy, bdx))
                }
            };
            if better {
                best = Some((cost, d2, dy, dx));
            }
        }
    }
    let (_, _, dy, dx) = best.expect("zero displacement is always a candidate");
    Ok(Pixel::new((from.0 + dx) as usize, (from.1 + dy) as usize))
}

pub fn track_all(prev: &Image, next: &Image, pixels: &[Pixel], cfg: &TrackConfig) -> Result<Vec<Pixel>> {
    pixels.iter().map(|&p| track(prev, next, p, cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(cx: usize, cy: usize) -> Image {
        Image::from_fn(16, 16, |x, y| {
            let d2 = (x as f64 - cx as f64).powi(2) + (y as f64 - cy as f64).powi(2);
            (-d2 / 4.0).exp()
        })
        .unwrap()
    }

    #[test]
    fn follows_translation() {
        let a = blob(7, 7);
        let b = blob(9, 6);
        assert_eq!(track(&a, &b, Pixel::new(7, 7), &TrackConfig::default()).unwrap(), Pixel::new(9, 6));
    }

    #[test]
    fn identical_frames_do_not_drift() {
        let a = blob(5, 10);
        let mut p = Pixel::new(3, 12);
        for _ in 0..50 {
            p = track(&a, &a, p, &TrackConfig::default()).unwrap();
        }
        assert_eq!(p, Pixel::new(3, 12));
    }

    #[test]
    fn flat_image_ties_to_zero_motion() {
        let a = Image::filled(8, 8, 0.4).unwrap();
        assert_eq!(track(&a, &a, Pixel::new(0, 7), &TrackConfig::default()).unwrap(), Pixel::new(0, 7));
    }

    #[test]
    fn rejects_out_of_bounds_pixel() {
        let a = blob(5, 5);
        assert!(track(&a, &a, Pixel::new(16, 0), &TrackConfig::default()).is_err());
    }
}
