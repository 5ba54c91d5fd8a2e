use serde::{Deserialize, Serialize};

use super::mirror::ENTROPY_FLOOR;
use super::sets::{project_simplex, ConstraintSet};
use crate::error::{Error, Result};
use crate::vector::{dot, norm1, norm_inf, soft_threshold};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegKind {
    Zero,
    L1,
    HalfL2Sq,
    Linf,
    Entropy,
    MixedL1L2,
}

/// Convex regularizer. Single-weight kinds use `lambda1`; the mixed kind is
/// `lambda1/2 ||x||^2 + lambda2 ||x||_1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regularizer {
    pub kind: RegKind,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Regularizer {
    pub fn zero() -> Self {
        Regularizer {
            kind: RegKind::Zero,
            lambda1: 0.0,
            lambda2: 0.0,
        }
    }

    pub fn new(kind: RegKind, lambda1: f64, lambda2: f64) -> Self {
        Regularizer { kind, lambda1, lambda2 }
    }

    pub fn check_set(&self, set: &ConstraintSet) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::config("lambda1", "regularizer weights must be nonnegative"));
        }
        match (self.kind, set) {
            (RegKind::Entropy, ConstraintSet::Simplex) => Ok(()),
            (RegKind::Entropy, _) => Err(Error::config("regularizer", "entropy is only supported on the simplex")),
            _ => Ok(()),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let (l1, l2) = (self.lambda1, self.lambda2);
        match self.kind {
            RegKind::Zero => 0.0,
            RegKind::L1 => l1 * norm1(x),
            RegKind::HalfL2Sq => 0.5 * l1 * dot(x, x),
            RegKind::Linf => l1 * norm_inf(x),
            RegKind::Entropy => l1 * x.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>(),
            RegKind::MixedL1L2 => 0.5 * l1 * dot(x, x) + l2 * norm1(x),
        }
    }

    pub fn subgradient(&self, x: &[f64]) -> Vec<f64> {
        let (l1, l2) = (self.lambda1, self.lambda2);
        let sign = |v: f64| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 };
        match self.kind {
            RegKind::Zero => vec![0.0; x.len()],
            RegKind::L1 => x.iter().map(|&v| l1 * sign(v)).collect(),
            RegKind::HalfL2Sq => x.iter().map(|v| l1 * v).collect(),
            RegKind::Linf => {
                let mut g = vec![0.0; x.len()];
                let m = norm_inf(x);
                if m > 0.0 {
                    let k = x.iter().position(|v| v.abs() == m).unwrap_or(0);
                    g[k] = l1 * sign(x[k]);
                }
                g
            }
            RegKind::Entropy => x.iter().map(|v| l1 * (v.max(ENTROPY_FLOOR).ln() + 1.0)).collect(),
            RegKind::MixedL1L2 => x.iter().map(|&v| l1 * v + l2 * sign(v)).collect(),
        }
    }

    /// Bound on the norm of any returned subgradient over the set.
    pub fn subgradient_bound(&self, set: &ConstraintSet, dim: usize) -> f64 {
        let (l1, l2) = (self.lambda1, self.lambda2);
        let rn = (dim as f64).sqrt();
        match self.kind {
            RegKind::Zero => 0.0,
            RegKind::L1 => l1 * rn,
            RegKind::HalfL2Sq => l1 * set.max_norm(dim),
            RegKind::Linf => l1,
            RegKind::Entropy => l1 * rn * ((1.0 / ENTROPY_FLOOR).ln() + 1.0),
            RegKind::MixedL1L2 => l1 * set.max_norm(dim) + l2 * rn,
        }
    }

    /// `argmin_{x in set} 1/2 ||x - v||^2 + step * reg(x)`.
    pub fn prox(&self, set: &ConstraintSet, v: &[f64], step: f64) -> Vec<f64> {
        let (l1, l2) = (step * self.lambda1, step * self.lambda2);
        let simplex = matches!(set, ConstraintSet::Simplex);
        let mut x: Vec<f64> = match self.kind {
            RegKind::Zero => v.to_vec(),
            // on the simplex ||x||_1 is constant
            RegKind::L1 if simplex => v.to_vec(),
            RegKind::L1 => v.iter().map(|&u| soft_threshold(u, l1)).collect(),
            RegKind::HalfL2Sq => v.iter().map(|u| u / (1.0 + l1)).collect(),
            RegKind::MixedL1L2 if simplex => v.iter().map(|u| u / (1.0 + l1)).collect(),
            RegKind::MixedL1L2 => v.iter().map(|&u| soft_threshold(u, l2) / (1.0 + l1)).collect(),
            RegKind::Linf => return prox_linf(set, v, l1),
            RegKind::Entropy => return prox_entropy_simplex(v, l1),
        };
        set.project(&mut x);
        x
    }
}

/// `v - P_{c B_1}(v)`: the unconstrained prox of `c ||.||_inf`.
fn prox_linf_free(v: &[f64], c: f64) -> Vec<f64> {
    if norm1(v) <= c {
        return vec![0.0; v.len()];
    }
    let mut a: Vec<f64> = v.iter().map(|u| u.abs() / c).collect();
    project_simplex(&mut a);
    v.iter().zip(&a).map(|(u, w)| u - u.signum() * w * c).collect()
}

/// Bisection for the root of a nondecreasing function on `[lo, hi]`,
/// clamped to the interval ends.
pub(crate) fn monotone_root(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    if f(lo) >= 0.0 {
        return lo;
    }
    if f(hi) <= 0.0 {
        return hi;
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if f(m) < 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Finds `mu` with `sum_k x_k(mu) = 1` for coordinate maps nondecreasing in
/// `mu`; returns the renormalized point and `mu`.
pub(crate) fn solve_sum_one(n: usize, x_of: impl Fn(usize, f64) -> f64) -> (Vec<f64>, f64) {
    let total = |mu: f64| (0..n).map(|k| x_of(k, mu)).sum::<f64>() - 1.0;
    let (mut lo, mut hi) = (-1.0, 1.0);
    while total(lo) > 0.0 {
        lo *= 2.0;
    }
    while total(hi) < 0.0 {
        hi *= 2.0;
    }
    let mu = monotone_root(lo, hi, total);
    let mut x: Vec<f64> = (0..n).map(|k| x_of(k, mu)).collect();
    let s: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= s);
    (x, mu)
}

fn prox_linf(set: &ConstraintSet, v: &[f64], c: f64) -> Vec<f64> {
    if c == 0.0 {
        let mut x = v.to_vec();
        set.project(&mut x);
        return x;
    }
    match *set {
        ConstraintSet::EuclideanBall { .. } => {
            let mut x = prox_linf_free(v, c);
            set.project(&mut x);
            x
        }
        ConstraintSet::Box { lo, hi } => {
            // cap s on |x_k|; the objective is convex in s with derivative
            // c - sum over capped coordinates of (|v_k| - s)
            let s_min = if lo > 0.0 { lo } else if hi < 0.0 { -hi } else { 0.0 };
            let s_max = lo.abs().max(hi.abs());
            let clip = |s: f64, u: f64| u.clamp(lo.max(-s), hi.min(s));
            let deriv = |s: f64| {
                c - v
                    .iter()
                    .map(|&u| {
                        if u > s && s < hi {
                            u - s
                        } else if u < -s && -s > lo {
                            -u - s
                        } else {
                            0.0
                        }
                    })
                    .sum::<f64>()
            };
            let s = monotone_root(s_min, s_max, deriv);
            v.iter().map(|&u| clip(s, u)).collect()
        }
        ConstraintSet::Simplex => {
            let n = v.len();
            // x_k = clamp(v_k + mu, 0, s); capped coordinates carry multiplier v_k + mu - s
            let capped = |s: f64| solve_sum_one(n, |k, mu| (v[k] + mu).clamp(0.0, s));
            let deriv = |s: f64| {
                let (_, mu) = capped(s);
                c - v.iter().map(|u| (u + mu - s).max(0.0)).sum::<f64>()
            };
            let s = monotone_root(1.0 / n as f64, 1.0, deriv);
            capped(s).0
        }
    }
}

/// Simplex prox of `c * sum x ln x`: `x_k + c ln x_k = v_k - c - tau`.
fn prox_entropy_simplex(v: &[f64], c: f64) -> Vec<f64> {
    if c == 0.0 {
        let mut x = v.to_vec();
        project_simplex(&mut x);
        return x;
    }
    let (mut x, _) = solve_sum_one(v.len(), |k, mu| {
        let u = v[k] - c + mu;
        // y = ln x solves e^y + c y = u, increasing in y
        let lo = (-u.abs() / c - 1.0).min(c.ln() - 1.0);
        let hi = (u.abs() + 1.0).ln().max(u.abs() / c) + 1.0;
        let y = monotone_root(lo, hi, |y| y.exp() + c * y - u);
        y.exp()
    });
    super::mirror::floor_simplex(&mut x, ENTROPY_FLOOR);
    x
}

/// Norm of the Euclidean prox-gradient mapping of
/// `s(x) + w * reg(x)` over the set, with unit step.
pub fn gradient_mapping_residual(reg: &Regularizer, set: &ConstraintSet, x: &[f64], grad_s: &[f64], w: f64) -> f64 {
    let v: Vec<f64> = x.iter().zip(grad_s).map(|(a, g)| a - g).collect();
    let p = reg.prox(set, &v, w);
    crate::vector::dist(x, &p)
}
