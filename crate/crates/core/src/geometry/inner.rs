//! The two inner problems share one form,
//! `argmin_{x in X} <c, x> + phi(x)/a + w * reg(x)`:
//! the composite mirror step uses `c = g - grad phi(y)/alpha`, `a = alpha`, `w = 1`;
//! the dual-averaging projection uses `c = z`, `a = alpha`, `w = t`.

use super::mirror::{floor_simplex, MapKind, MirrorMap, ENTROPY_FLOOR};
use super::regularizer::{gradient_mapping_residual, monotone_root, solve_sum_one, RegKind, Regularizer};
use super::sets::ConstraintSet;
use crate::error::{Error, Result};
use crate::vector::dot;

pub const FALLBACK_MAX_ITERS: usize = 10_000;
pub const FALLBACK_TOL: f64 = 1e-8;
pub const FALLBACK_ACCEPT: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct InnerProblem<'a> {
    pub map: &'a MirrorMap,
    pub set: &'a ConstraintSet,
    pub reg: &'a Regularizer,
    pub c: Vec<f64>,
    pub a: f64,
    pub w: f64,
}

fn xlogx(v: f64) -> f64 {
    if v > 0.0 {
        v * v.ln()
    } else {
        0.0
    }
}

impl InnerProblem<'_> {
    /// Objective value; entropy terms use `0 ln 0 = 0` so boundary points evaluate.
    pub fn objective(&self, x: &[f64]) -> f64 {
        let phi = match self.map.kind {
            MapKind::NegEntropy => x.iter().map(|&v| xlogx(v)).sum(),
            _ => self.map.value(x).unwrap_or(f64::INFINITY),
        };
        dot(&self.c, x) + phi / self.a + self.w * self.reg.value(x)
    }

    fn smooth_value(&self, x: &[f64]) -> f64 {
        dot(&self.c, x) + self.map.value(x).unwrap_or(f64::INFINITY) / self.a
    }

    fn smooth_grad(&self, x: &[f64]) -> Vec<f64> {
        let g = match self.map.kind {
            MapKind::NegEntropy => x.iter().map(|v| v.max(ENTROPY_FLOOR).ln() + 1.0).collect(),
            _ => self.map.grad(x).expect("map gradient on its domain"),
        };
        self.c.iter().zip(&g).map(|(c, g)| c + g / self.a).collect()
    }

    /// Unit-step composite gradient mapping norm; zero exactly at the minimizer.
    pub fn residual(&self, x: &[f64]) -> f64 {
        gradient_mapping_residual(self.reg, self.set, x, &self.smooth_grad(x), self.w)
    }

    pub fn solve(&self) -> Result<Vec<f64>> {
        match self.map.kind {
            MapKind::EuclideanHalfSqNorm => Ok(self.euclidean()),
            MapKind::PNormSq { p } if p == 2.0 => Ok(self.euclidean()),
            MapKind::NegEntropy => Ok(self.entropy()),
            MapKind::PNormSq { .. } => self.fista(),
        }
    }

    fn euclidean(&self) -> Vec<f64> {
        let v: Vec<f64> = self.c.iter().map(|c| -self.a * c).collect();
        self.reg.prox(self.set, &v, self.a * self.w)
    }

    fn entropy(&self) -> Vec<f64> {
        let n = self.c.len();
        let (a, c) = (self.a, &self.c);
        let b = self.w * self.reg.lambda1;
        let mut x = match self.reg.kind {
            // ||x||_1 is constant on the simplex
            RegKind::Zero | RegKind::L1 => softmax(c, a),
            RegKind::Entropy => softmax(c, 1.0 / (1.0 / a + b)),
            RegKind::HalfL2Sq | RegKind::MixedL1L2 if b == 0.0 => softmax(c, a),
            RegKind::HalfL2Sq | RegKind::MixedL1L2 => {
                // c_k + (ln x_k + 1)/a + b x_k = mu; with y = ln x_k, y/a + b e^y = mu - c_k - 1/a
                solve_sum_one(n, |k, mu| {
                    let u = mu - c[k] - 1.0 / a;
                    let hi = a * u;
                    let lo = a * u - a * b * (a * u).min(700.0).exp() - 1.0;
                    monotone_root(lo, hi, |y| y / a + b * y.exp() - u).exp()
                })
                .0
            }
            RegKind::Linf if b == 0.0 => softmax(c, a),
            RegKind::Linf => {
                // cap s on every coordinate; capped coordinates carry
                // multiplier mu - c_k - (ln s + 1)/a
                let capped = |s: f64| solve_sum_one(n, |k, mu| (a * (mu - c[k]) - 1.0).min(s.ln()).exp());
                let deriv = |s: f64| {
                    let (_, mu) = capped(s);
                    b - c.iter().map(|ck| (mu - ck - (s.ln() + 1.0) / a).max(0.0)).sum::<f64>()
                };
                capped(monotone_root(1.0 / n as f64, 1.0, deriv)).0
            }
        };
        floor_simplex(&mut x, ENTROPY_FLOOR);
        x
    }

    /// Accelerated proximal gradient with backtracking and adaptive restart.
    fn fista(&self) -> Result<Vec<f64>> {
        let n = self.c.len();
        let mut x = self.set.center(n);
        let mut y = x.clone();
        let mut theta: f64 = 1.0;
        let mut lip = 1.0 / self.a;
        let mut f_prev = self.objective(&x);
        let mut residual = self.residual(&x);
        for _ in 0..FALLBACK_MAX_ITERS {
            if residual <= FALLBACK_TOL {
                return Ok(x);
            }
            let gy = self.smooth_grad(&y);
            let sy = self.smooth_value(&y);
            let x_new = loop {
                let v: Vec<f64> = y.iter().zip(&gy).map(|(y, g)| y - g / lip).collect();
                let cand = self.reg.prox(self.set, &v, self.w / lip);
                let d: Vec<f64> = cand.iter().zip(&y).map(|(a, b)| a - b).collect();
                let model = sy + dot(&gy, &d) + 0.5 * lip * dot(&d, &d);
                if self.smooth_value(&cand) <= model + 1e-14 * sy.abs().max(1.0) || lip > 1e18 {
                    break cand;
                }
                lip *= 2.0;
            };
            let f_new = self.objective(&x_new);
            if f_new > f_prev {
                // restart momentum from the current iterate
                theta = 1.0;
                y = x.clone();
                continue;
            }
            let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            let beta = (theta - 1.0) / theta_next;
            y = x_new.iter().zip(&x).map(|(xn, xo)| xn + beta * (xn - xo)).collect();
            theta = theta_next;
            x = x_new;
            f_prev = f_new;
            lip *= 0.9;
            residual = self.residual(&x);
        }
        if residual <= FALLBACK_ACCEPT {
            return Ok(x);
        }
        Err(Error::InnerSolverFailure {
            iters: FALLBACK_MAX_ITERS,
            residual,
            tol: FALLBACK_ACCEPT,
        })
    }
}

/// `x proportional to exp(-scale * c)`.
fn softmax(c: &[f64], scale: f64) -> Vec<f64> {
    let m = c.iter().map(|v| -scale * v).fold(f64::NEG_INFINITY, f64::max);
    let mut x: Vec<f64> = c.iter().map(|v| (-scale * v - m).exp()).collect();
    let s: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= s);
    x
}

/// Query point for the mirror step: the entropy map needs positive coordinates,
/// and a noisy mix can leave the simplex.
pub fn mirror_domain(map: &MirrorMap, y: &[f64]) -> Vec<f64> {
    match map.kind {
        MapKind::NegEntropy => y.iter().map(|v| v.max(ENTROPY_FLOOR)).collect(),
        _ => y.to_vec(),
    }
}

/// `argmin_{x in X} <g, x> + D(x, y)/alpha + chi(x)`.
pub fn mirror_step(
    map: &MirrorMap,
    set: &ConstraintSet,
    chi: &Regularizer,
    g: &[f64],
    y: &[f64],
    alpha: f64,
) -> Result<Vec<f64>> {
    if map.kind == MapKind::EuclideanHalfSqNorm {
        let v: Vec<f64> = y.iter().zip(g).map(|(y, g)| y - alpha * g).collect();
        return Ok(chi.prox(set, &v, alpha));
    }
    let y = mirror_domain(map, y);
    let gy = map.grad(&y)?;
    let c = g.iter().zip(&gy).map(|(g, d)| g - d / alpha).collect();
    InnerProblem {
        map,
        set,
        reg: chi,
        c,
        a: alpha,
        w: 1.0,
    }
    .solve()
}

/// `argmin_{x in X} <z, x> + psi(x)/alpha + t * eta(x)`.
pub fn dual_averaging_projection(
    psi: &MirrorMap,
    set: &ConstraintSet,
    eta: &Regularizer,
    z: &[f64],
    t: usize,
    alpha: f64,
) -> Result<Vec<f64>> {
    InnerProblem {
        map: psi,
        set,
        reg: eta,
        c: z.to_vec(),
        a: alpha,
        w: t as f64,
    }
    .solve()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn unconstrained_gradient_step() {
        let set = ConstraintSet::Box { lo: -100.0, hi: 100.0 };
        let x = mirror_step(&MirrorMap::euclidean(), &set, &Regularizer::zero(), &[2.0], &[1.0], 0.25).unwrap();
        assert_eq!(x, vec![0.5]);
    }

    #[test]
    fn soft_threshold_step() {
        let set = ConstraintSet::Box { lo: -10.0, hi: 10.0 };
        let chi = Regularizer::new(RegKind::L1, 1.0, 0.0);
        let x = mirror_step(&MirrorMap::euclidean(), &set, &chi, &[2.0], &[1.0], 0.25).unwrap();
        assert!((x[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn multiplicative_weights_step() {
        let x = mirror_step(
            &MirrorMap::neg_entropy(),
            &ConstraintSet::Simplex,
            &Regularizer::zero(),
            &[1.0, 0.0],
            &[0.5, 0.5],
            1.0,
        )
        .unwrap();
        let e = (-1.0f64).exp();
        assert!((x[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((x[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
        assert!((x[0] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn dual_averaging_examples() {
        let e = MirrorMap::euclidean();
        let ball = ConstraintSet::EuclideanBall { radius: 100.0 };
        let x = dual_averaging_projection(&e, &ball, &Regularizer::zero(), &[4.0], 0, 0.5).unwrap();
        assert_eq!(x, vec![-2.0]);
        let bx = ConstraintSet::Box { lo: -10.0, hi: 10.0 };
        let eta = Regularizer::new(RegKind::L1, 1.0, 0.0);
        let x = dual_averaging_projection(&e, &bx, &eta, &[4.0], 2, 0.5).unwrap();
        assert!((x[0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn euclidean_zero_reg_is_projection() {
        let mut rng = stream(&[41]);
        let e = MirrorMap::euclidean();
        for set in [
            ConstraintSet::Box { lo: -1.0, hi: 1.0 },
            ConstraintSet::EuclideanBall { radius: 1.0 },
            ConstraintSet::Simplex,
        ] {
            for _ in 0..100 {
                let y: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                let g: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                let alpha = rng.random_range(0.01..2.0);
                let x = mirror_step(&e, &set, &Regularizer::zero(), &g, &y, alpha).unwrap();
                let mut p: Vec<f64> = y.iter().zip(&g).map(|(y, g)| y - alpha * g).collect();
                set.project(&mut p);
                assert_eq!(x, p);
            }
        }
    }

    #[test]
    fn fallback_reaches_tolerance() {
        let mut rng = stream(&[42]);
        let psi = MirrorMap::p_norm_sq(1.5).unwrap();
        for set in [
            ConstraintSet::Box { lo: -1.0, hi: 1.0 },
            ConstraintSet::EuclideanBall { radius: 1.0 },
            ConstraintSet::Simplex,
        ] {
            for kind in [RegKind::Zero, RegKind::L1, RegKind::Linf, RegKind::MixedL1L2] {
                let eta = Regularizer::new(kind, 0.3, 0.2);
                for _ in 0..20 {
                    let z: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
                    let p = InnerProblem {
                        map: &psi,
                        set: &set,
                        reg: &eta,
                        c: z,
                        a: 0.7,
                        w: 2.0,
                    };
                    let x = p.solve().unwrap();
                    assert!(set.contains(&x, 1e-12));
                    assert!(p.residual(&x) <= FALLBACK_ACCEPT, "{set:?} {kind:?}");
                }
            }
        }
    }
}
