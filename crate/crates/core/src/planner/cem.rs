//! Cross-entropy method over box-bounded real vectors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned sampling box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "bounds of length {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a.is_finite() && b.is_finite() && a <= b)) {
            return Err(Error::Config("bounds need finite lo <= hi".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn clip(&self, v: &mut [f64]) {
        for ((x, lo), hi) in v.iter_mut().zip(&self.lo).zip(&self.hi) {
            *x = x.clamp(*lo, *hi);
        }
    }
}

/// Sampling distribution of one CEM iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum Sampler {
    Uniform(Bounds),
    Gaussian { mean: DVector<f64>, cov: DMatrix<f64> },
}

impl Sampler {
    pub fn dim(&self) -> usize {
        match self {
            Sampler::Uniform(b) => b.dim(),
            Sampler::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            Sampler::Uniform(b) => b.lo.iter().zip(&b.hi).map(|(l, h)| 0.5 * (l + h)).collect(),
            Sampler::Gaussian { mean, .. } => mean.iter().copied().collect(),
        }
    }

    /// Draws `m` samples, each clipped to `bounds`.
    pub fn sample<R: Rng>(&self, m: usize, bounds: &Bounds, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(m);
        match self {
            Sampler::Uniform(b) => {
                for _ in 0..m {
                    let mut v: Vec<f64> = b
                        .lo
                        .iter()
                        .zip(&b.hi)
                        .map(|(&lo, &hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo })
                        .collect();
                    bounds.clip(&mut v);
                    out.push(v);
                }
            }
            Sampler::Gaussian { mean, cov } => {
                let chol = cov
                    .clone()
                    .cholesky()
                    .ok_or_else(|| Error::DegenerateCovariance("covariance is not positive definite".into()))?;
                let l = chol.l();
                for _ in 0..m {
                    let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
                    let x = mean + &l * z;
                    let mut v: Vec<f64> = x.iter().copied().collect();
                    bounds.clip(&mut v);
                    out.push(v);
                }
            }
        }
        Ok(out)
    }
}

/// Outcome of one CEM iteration.
#[derive(Debug, Clone)]
pub struct CemStep {
    pub next: Sampler,
    pub samples: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    /// Sample indices of the elites, best first.
    pub elites: Vec<usize>,
    pub best: Vec<f64>,
    pub best_value: f64,
}

/// Ranking key: NaN never beats a number.
fn rank_value(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Top `k` sample indices by value; equal values keep the lower index.
pub fn select_elites(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| rank_value(values[b]).total_cmp(&rank_value(values[a])).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Mean and population covariance of `points`, plus `lambda * I`.
pub fn fit_gaussian(points: &[&[f64]], lambda: f64) -> Result<Sampler> {
    let n = points.len();
    if n == 0 {
        return Err(Error::Precondition("cannot fit a Gaussian to zero points".into()));
    }
    let d = points[0].len();
    let mut mean = DVector::zeros(d);
    for p in points {
        mean += DVector::from_column_slice(p);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for p in points {
        let c = DVector::from_column_slice(p) - &mean;
        cov += &c * c.transpose();
    }
    cov /= n as f64;
    for i in 0..d {
        cov[(i, i)] += lambda;
    }
    if cov.iter().chain(mean.iter()).any(|v| !v.is_finite()) {
        return Err(Error::DegenerateCovariance("non-finite elite moments".into()));
    }
    Ok(Sampler::Gaussian { mean, cov })
}

/// Draw `m` samples from `sampler`, evaluate them in parallel, refit to the
/// top `k`.
pub fn cem_iteration<F, R>(
    objective: &F,
    sampler: &Sampler,
    m: usize,
    k: usize,
    lambda: f64,
    bounds: &Bounds,
    rng: &mut R,
) -> Result<CemStep>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
    R: Rng,
{
    if k == 0 || k > m {
        return Err(Error::Precondition(format!("need 1 <= K <= M, got K={k}, M={m}")));
    }
    if sampler.dim() != bounds.dim() {
        return Err(Error::DimensionMismatch(format!(
            "sampler dimension {} vs bounds {}",
            sampler.dim(),
            bounds.dim()
        )));
    }
    let samples = sampler.sample(m, bounds, rng)?;
    let values = samples
        .par_iter()
        .map(|s| objective(s))
        .collect::<Result<Vec<f64>>>()?;
    let elites = select_elites(&values, k);
    let points: Vec<&[f64]> = elites.iter().map(|&i| samples[i].as_slice()).collect();
    let next = fit_gaussian(&points, lambda)?;
    let top = elites[0];
    Ok(CemStep {
        next,
        best: samples[top].clone(),
        best_value: values[top],
        samples,
        values,
        elites,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub samples: usize,
    pub best_value: f64,
    pub elite_mean_value: f64,
    pub best_so_far: f64,
    /// Mean of the Gaussian fitted to this iteration's elites.
    pub mean: Vec<f64>,
}

/// Outcome of a full CEM run.
#[derive(Debug, Clone)]
pub struct CemRun {
    /// Best sample seen in any iteration; later ties keep the earlier one.
    pub best: Vec<f64>,
    pub best_value: f64,
    pub iterations: Vec<IterationStats>,
    /// Sampler fitted by the last iteration.
    pub sampler: Sampler,
}

/// Runs `iterations` CEM iterations from `start`, tracking the incumbent.
#[allow(clippy::too_many_arguments)]
pub fn cem_optimize<F, R>(
    objective: &F,
    start: Sampler,
    bounds: &Bounds,
    iterations: usize,
    m: usize,
    k: usize,
    lambda: f64,
    rng: &mut R,
) -> Result<CemRun>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
    R: Rng,
{
    if iterations == 0 {
        return Err(Error::Precondition("CEM needs at least one iteration".into()));
    }
    let mut sampler = start;
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut stats = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let step = cem_iteration(objective, &sampler, m, k, lambda, bounds, rng)?;
        let improves = match &best {
            None => true,
            Some((_, v)) => rank_value(step.best_value) > rank_value(*v),
        };
        if improves {
            best = Some((step.best.clone(), step.best_value));
        }
        let elite_mean_value = step.elites.iter().map(|&i| step.values[i]).sum::<f64>() / k as f64;
        stats.push(IterationStats {
            samples: m,
            best_value: step.best_value,
            elite_mean_value,
            best_so_far: best.as_ref().map_or(f64::NEG_INFINITY, |b| b.1),
            mean: step.next.mean(),
        });
        sampler = step.next;
    }
    let (best, best_value) = best.expect("at least one iteration");
    Ok(CemRun {
        best,
        best_value,
        iterations: stats,
        sampler,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn box2() -> Bounds {
        Bounds::new(vec![0.0, 0.0], vec![31.0, 31.0]).unwrap()
    }

    #[test]
    fn elites_break_ties_by_index() {
        assert_eq!(select_elites(&[1.0, 3.0, 3.0, 2.0, f64::NAN], 3), vec![1, 2, 3]);
        assert_eq!(select_elites(&[0.0; 6], 4), vec![0, 1, 2, 3]);
    }

    #[test]
    fn k_equals_m_fits_all_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let obj = |v: &[f64]| Ok(v[0]);
        let step = cem_iteration(&obj, &Sampler::Uniform(box2()), 12, 12, 0.0, &box2(), &mut rng).unwrap();
        let pts: Vec<&[f64]> = step.samples.iter().map(Vec::as_slice).collect();
        let (Sampler::Gaussian { mean: m1, cov: c1 }, Sampler::Gaussian { mean: m2, cov: c2 }) =
            (&step.next, fit_gaussian(&pts, 0.0).unwrap())
        else {
            panic!("fit returns a Gaussian");
        };
        assert!((m1 - m2).norm() < 1e-12 && (c1 - c2).norm() < 1e-10);
        let mx = step.samples.iter().map(|s| s[0]).sum::<f64>() / 12.0;
        assert!((step.next.mean()[0] - mx).abs() < 1e-12);
    }

    #[test]
    fn constant_objective_keeps_first_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let obj = |_: &[f64]| Ok(-1.0);
        let step = cem_iteration(&obj, &Sampler::Uniform(box2()), 40, 10, 1e-4, &box2(), &mut rng).unwrap();
        assert_eq!(step.elites, (0..10).collect::<Vec<_>>());
        assert_eq!(step.best, step.samples[0]);
    }

    #[test]
    fn gaussian_samples_are_clipped() {
        let mean = DVector::from_vec(vec![30.0, 0.5]);
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![100.0, 100.0]));
        let s = Sampler::Gaussian { mean, cov };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for v in s.sample(200, &box2(), &mut rng).unwrap() {
            assert!(v.iter().all(|x| (0.0..=31.0).contains(x)));
        }
    }

    #[test]
    fn non_positive_covariance_is_degenerate() {
        let s = Sampler::Gaussian {
            mean: DVector::zeros(2),
            cov: DMatrix::from_element(2, 2, f64::NAN),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(s.sample(1, &box2(), &mut rng), Err(Error::DegenerateCovariance(_))));
        let bad = [f64::INFINITY, 0.0];
        assert!(matches!(fit_gaussian(&[&bad[..]], 1e-4), Err(Error::DegenerateCovariance(_))));
    }

    #[test]
    fn optimize_converges_on_quadratic() {
        let target = [12.3, 20.7];
        let obj = |v: &[f64]| Ok(-((v[0] - target[0]).powi(2) + (v[1] - target[1]).powi(2)));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let run = cem_optimize(&obj, Sampler::Uniform(box2()), &box2(), 4, 40, 10, 1e-4, &mut rng).unwrap();
        assert_eq!(run.iterations.len(), 4);
        assert!(run.best_value > -0.25, "{run:?}");
        assert!(run.iterations.windows(2).all(|w| w[1].best_so_far >= w[0].best_so_far));
        assert_eq!(run.iterations[3].best_so_far, run.best_value);
    }

    #[test]
    fn rejects_bad_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let obj = |_: &[f64]| Ok(0.0);
        assert!(cem_iteration(&obj, &Sampler::Uniform(box2()), 5, 6, 1e-4, &box2(), &mut rng).is_err());
    }
}
