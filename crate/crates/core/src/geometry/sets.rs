use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::norm;

/// Closed convex bounded decision set. Boxes are `[lo, hi]^n`, balls are
/// centered at the origin, and the simplex is the probability simplex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "set_kind", rename_all = "snake_case")]
pub enum ConstraintSet {
    Box { lo: f64, hi: f64 },
    EuclideanBall { radius: f64 },
    Simplex,
}

impl ConstraintSet {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ConstraintSet::Box { lo, hi } if !(lo < hi && lo.is_finite() && hi.is_finite()) => {
                Err(Error::config("set_params", format!("box needs finite lo < hi, got [{lo}, {hi}]")))
            }
            ConstraintSet::EuclideanBall { radius } if !(radius > 0.0 && radius.is_finite()) => {
                Err(Error::config("set_params", format!("ball radius must be positive, got {radius}")))
            }
            _ => Ok(()),
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        match *self {
            ConstraintSet::Box { lo, hi } => x.iter().all(|&v| v >= lo - tol && v <= hi + tol),
            ConstraintSet::EuclideanBall { radius } => norm(x) <= radius + tol,
            ConstraintSet::Simplex => {
                x.iter().all(|&v| v >= -tol) && (x.iter().sum::<f64>() - 1.0).abs() <= tol * x.len().max(1) as f64
            }
        }
    }

    pub fn project(&self, x: &mut [f64]) {
        match *self {
            ConstraintSet::Box { lo, hi } => x.iter_mut().for_each(|v| *v = v.clamp(lo, hi)),
            ConstraintSet::EuclideanBall { radius } => {
                let n = norm(x);
                if n > radius {
                    x.iter_mut().for_each(|v| *v *= radius / n);
                }
            }
            ConstraintSet::Simplex => project_simplex(x),
        }
    }

    /// Default common starting point: box or ball center, simplex barycenter.
    pub fn center(&self, dim: usize) -> Vec<f64> {
        match *self {
            ConstraintSet::Box { lo, hi } => vec![0.5 * (lo + hi); dim],
            ConstraintSet::EuclideanBall { .. } => vec![0.0; dim],
            ConstraintSet::Simplex => vec![1.0 / dim as f64; dim],
        }
    }

    /// Diameter `sup ||x - y||`.
    pub fn diameter(&self, dim: usize) -> f64 {
        match *self {
            ConstraintSet::Box { lo, hi } => (hi - lo) * (dim as f64).sqrt(),
            ConstraintSet::EuclideanBall { radius } => 2.0 * radius,
            ConstraintSet::Simplex => {
                if dim > 1 {
                    std::f64::consts::SQRT_2
                } else {
                    0.0
                }
            }
        }
    }

    /// `sup ||x||` over the set.
    pub fn max_norm(&self, dim: usize) -> f64 {
        match *self {
            ConstraintSet::Box { lo, hi } => lo.abs().max(hi.abs()) * (dim as f64).sqrt(),
            ConstraintSet::EuclideanBall { radius } => radius,
            ConstraintSet::Simplex => 1.0,
        }
    }

    /// Uniformly distributed point of the set.
    pub fn sample<R: Rng>(&self, rng: &mut R, dim: usize) -> Vec<f64> {
        match *self {
            ConstraintSet::Box { lo, hi } => (0..dim).map(|_| rng.random_range(lo..=hi)).collect(),
            ConstraintSet::EuclideanBall { radius } => {
                let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
                let n = norm(&v).max(f64::MIN_POSITIVE);
                let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
                v.iter_mut().for_each(|c| *c *= r / n);
                v
            }
            ConstraintSet::Simplex => {
                let mut v: Vec<f64> = (0..dim).map(|_| Exp1.sample(rng)).collect();
                let s: f64 = v.iter().sum();
                v.iter_mut().for_each(|c| *c /= s);
                v
            }
        }
    }

    /// Extreme points worth probing when certifying a minimum: box corners
    /// (small dimension only), simplex vertices.
    pub fn vertices(&self, dim: usize) -> Vec<Vec<f64>> {
        match *self {
            ConstraintSet::Box { lo, hi } if dim <= 10 => (0..1usize << dim)
                .map(|mask| (0..dim).map(|k| if mask >> k & 1 == 1 { hi } else { lo }).collect())
                .collect(),
            ConstraintSet::Simplex => (0..dim)
                .map(|k| {
                    let mut e = vec![0.0; dim];
                    e[k] = 1.0;
                    e
                })
                .collect(),
            _ => Vec::new(),
        }
    }
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(x: &mut [f64]) {
    let n = x.len();
    if n == 0 {
        return;
    }
    let mut u = x.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cumsum += uk;
        let cand = (cumsum - 1.0) / (k + 1) as f64;
        if uk - cand > 0.0 {
            tau = cand;
        }
    }
    x.iter_mut().for_each(|v| *v = (*v - tau).max(0.0));
}
