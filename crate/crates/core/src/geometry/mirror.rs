use serde::{Deserialize, Serialize};

use super::sets::ConstraintSet;
use crate::error::{Error, Result};
use crate::vector::dot;

/// Coordinate floor for the entropy map. Iterates are kept on the floored
/// simplex, which is the working domain where the gradient is Lipschitz.
pub const ENTROPY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapKind {
    EuclideanHalfSqNorm,
    NegEntropy,
    PNormSq { p: f64 },
}

/// Distance-generating function with its strong-convexity modulus and
/// gradient Lipschitz constant (both in the Euclidean norm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MirrorMap {
    pub kind: MapKind,
    pub sigma: f64,
    pub lipschitz: f64,
}

impl MirrorMap {
    pub fn euclidean() -> Self {
        MirrorMap {
            kind: MapKind::EuclideanHalfSqNorm,
            sigma: 1.0,
            lipschitz: 1.0,
        }
    }

    pub fn neg_entropy() -> Self {
        MirrorMap {
            kind: MapKind::NegEntropy,
            sigma: 1.0,
            lipschitz: 1.0 / ENTROPY_FLOOR,
        }
    }

    /// `1/2 ||x||_p^2` for `p in (1, 2]`: `(p-1)`-strongly convex, gradient not
    /// Lipschitz near the coordinate hyperplanes when `p < 2`.
    pub fn p_norm_sq(p: f64) -> Result<Self> {
        if !(p > 1.0 && p <= 2.0) {
            return Err(Error::config("p_norm", format!("p must lie in (1, 2], got {p}")));
        }
        Ok(MirrorMap {
            kind: MapKind::PNormSq { p },
            sigma: p - 1.0,
            lipschitz: if p == 2.0 { 1.0 } else { f64::INFINITY },
        })
    }

    /// Rejects set combinations outside the map's domain.
    pub fn check_set(&self, set: &ConstraintSet) -> Result<()> {
        match (self.kind, set) {
            (MapKind::NegEntropy, ConstraintSet::Simplex) => Ok(()),
            (MapKind::NegEntropy, _) => Err(Error::config(
                "mirror_map",
                "neg_entropy is only supported on the simplex",
            )),
            _ => Ok(()),
        }
    }

    fn check_domain(&self, x: &[f64]) -> Result<()> {
        if let MapKind::NegEntropy = self.kind {
            if let Some(v) = x.iter().find(|v| !(**v > 0.0)) {
                return Err(Error::DomainViolation {
                    what: "neg_entropy",
                    detail: format!("coordinate {v} is not positive"),
                });
            }
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check_domain(x)?;
        Ok(match self.kind {
            MapKind::EuclideanHalfSqNorm => 0.5 * dot(x, x),
            MapKind::NegEntropy => x.iter().map(|v| v * v.ln()).sum(),
            MapKind::PNormSq { p } => 0.5 * p_norm(x, p).powi(2),
        })
    }

    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_domain(x)?;
        Ok(match self.kind {
            MapKind::EuclideanHalfSqNorm => x.to_vec(),
            MapKind::NegEntropy => x.iter().map(|v| v.ln() + 1.0).collect(),
            MapKind::PNormSq { p } => p_norm_grad(x, p),
        })
    }

    /// `D(x, y) = phi(x) - phi(y) - <grad phi(y), x - y>`.
    pub fn bregman(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if let MapKind::NegEntropy = self.kind {
            self.check_domain(x)?;
            self.check_domain(y)?;
            return Ok(x.iter().zip(y).map(|(a, b)| a * (a / b).ln() - a + b).sum::<f64>().max(0.0));
        }
        let g = self.grad(y)?;
        let d = self.value(x)? - self.value(y)? - x.iter().zip(y).zip(&g).map(|((a, b), c)| c * (a - b)).sum::<f64>();
        Ok(d.max(0.0))
    }

    /// `sup D(x, y)` over the set (entropy: over the floored simplex).
    pub fn bregman_diameter_sq(&self, set: &ConstraintSet, dim: usize) -> f64 {
        match self.kind {
            MapKind::EuclideanHalfSqNorm => 0.5 * set.diameter(dim).powi(2),
            MapKind::NegEntropy => (1.0 / ENTROPY_FLOOR).ln(),
            MapKind::PNormSq { p } => 2.0 * set_p_radius(set, dim, p).powi(2),
        }
    }

    /// Nonnegative proximal function for dual averaging: the map shifted so
    /// its minimum over the natural domain is zero.
    pub fn prox_value(&self, x: &[f64]) -> Result<f64> {
        let base = match self.kind {
            MapKind::NegEntropy => {
                let clamped: Vec<f64> = x.iter().map(|v| v.max(ENTROPY_FLOOR)).collect();
                return Ok(self.value(&clamped)? + (x.len() as f64).ln());
            }
            _ => self.value(x)?,
        };
        Ok(base)
    }

    /// Keeps an entropy iterate on the floored simplex.
    pub fn clamp_domain(&self, x: &mut [f64]) {
        if let MapKind::NegEntropy = self.kind {
            floor_simplex(x, ENTROPY_FLOOR);
        }
    }
}

fn set_p_radius(set: &ConstraintSet, dim: usize, p: f64) -> f64 {
    match *set {
        ConstraintSet::Box { lo, hi } => lo.abs().max(hi.abs()) * (dim as f64).powf(1.0 / p),
        // ||x||_p <= n^(1/p - 1/2) ||x||_2 for p <= 2
        ConstraintSet::EuclideanBall { radius } => radius * (dim as f64).powf(1.0 / p - 0.5),
        ConstraintSet::Simplex => 1.0,
    }
}

pub fn p_norm(x: &[f64], p: f64) -> f64 {
    x.iter().map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p)
}

fn p_norm_grad(x: &[f64], p: f64) -> Vec<f64> {
    let n = p_norm(x, p);
    if n == 0.0 {
        return vec![0.0; x.len()];
    }
    let scale = n.powf(2.0 - p);
    x.iter().map(|v| scale * v.signum() * v.abs().powf(p - 1.0)).collect()
}

/// Raises coordinates to `floor` and renormalizes onto the simplex.
pub fn floor_simplex(x: &mut [f64], floor: f64) {
    let mut s = 0.0;
    for v in x.iter_mut() {
        *v = v.max(floor);
        s += *v;
    }
    x.iter_mut().for_each(|v| *v /= s);
}

/// `D(a, sum_k w_k b_k) <= sum_k w_k D(a, b_k)` up to `1e-10`.
pub fn separate_convexity_check(map: &MirrorMap, a: &[f64], bs: &[Vec<f64>], weights: &[f64]) -> Result<bool> {
    assert_eq!(bs.len(), weights.len(), "one weight per point");
    let mut mix = vec![0.0; a.len()];
    let mut rhs = 0.0;
    for (b, &w) in bs.iter().zip(weights) {
        crate::vector::axpy(w, b, &mut mix);
        rhs += w * map.bregman(a, b)?;
    }
    Ok(map.bregman(a, &mix)? <= rhs + 1e-10)
}
