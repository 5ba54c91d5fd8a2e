//! Centralized reference solve by the central-cut ellipsoid method.
//!
//! The ellipsoid always contains a minimizer, so at every feasible center
//! `c` with subgradient `g` the value `F(c) - sqrt(g' P g)` is a valid lower
//! bound on the optimum. The solve stops once the best such bound is within
//! tolerance of the best feasible value, which certifies the reference.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{CompositeProblem, ObjectiveKind, Variant};
use crate::error::{Error, Result};
use crate::geometry::{ConstraintSet, RegKind};
use crate::rng::{stream, tag};
use crate::vector::norm;

const GAP_TOL: f64 = 1e-9;
const RESTARTS: usize = 10;
const RESTART_AGREEMENT: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub x_star: Vec<f64>,
    pub f_star: f64,
    /// Certified upper bound on `F(x_star) - min F`.
    pub gap: f64,
}

/// Coordinates in which the search runs: full space for box and ball, the
/// first `n - 1` coordinates for the simplex.
struct Chart<'a> {
    problem: &'a CompositeProblem,
}

impl Chart<'_> {
    fn dim(&self) -> usize {
        match self.problem.set {
            ConstraintSet::Simplex => self.problem.dim - 1,
            _ => self.problem.dim,
        }
    }

    fn lift(&self, u: &[f64]) -> Vec<f64> {
        match self.problem.set {
            ConstraintSet::Simplex => {
                let mut x = u.to_vec();
                x.push(1.0 - u.iter().sum::<f64>());
                x
            }
            _ => u.to_vec(),
        }
    }

    /// Normal of a violated constraint, or `None` when `u` is feasible.
    fn feasibility_cut(&self, u: &[f64]) -> Option<Vec<f64>> {
        let n = u.len();
        match self.problem.set {
            ConstraintSet::Box { lo, hi } => {
                let k = (0..n).find(|&k| u[k] < lo || u[k] > hi)?;
                let mut g = vec![0.0; n];
                g[k] = if u[k] > hi { 1.0 } else { -1.0 };
                Some(g)
            }
            ConstraintSet::EuclideanBall { radius } => {
                let r = norm(u);
                (r > radius).then(|| u.iter().map(|v| v / r).collect())
            }
            ConstraintSet::Simplex => {
                if let Some(k) = (0..n).find(|&k| u[k] < 0.0) {
                    let mut g = vec![0.0; n];
                    g[k] = -1.0;
                    return Some(g);
                }
                (u.iter().sum::<f64>() > 1.0).then(|| vec![1.0; n])
            }
        }
    }

    /// Objective value and subgradient in chart coordinates.
    fn oracle(&self, u: &[f64]) -> (f64, Vec<f64>) {
        let x = self.lift(u);
        let f = self.problem.evaluate_F(&x);
        let g = self.problem.subgradient_F(&x);
        let g = match self.problem.set {
            ConstraintSet::Simplex => {
                let last = g[g.len() - 1];
                g[..g.len() - 1].iter().map(|v| v - last).collect()
            }
            _ => g,
        };
        (f, g)
    }

    fn bounding_radius(&self) -> f64 {
        let p = self.problem;
        match p.set {
            ConstraintSet::Simplex => 2.0,
            _ => 2.0 * p.set.max_norm(p.dim).max(p.set.diameter(p.dim)),
        }
    }
}

struct Run {
    best_u: Vec<f64>,
    upper: f64,
    lower: f64,
}

fn ellipsoid(chart: &Chart, center: Vec<f64>, radius: f64, max_iters: usize) -> Run {
    let n = chart.dim();
    let mut c = DVector::from_vec(center);
    let mut p = DMatrix::<f64>::identity(n, n) * (radius * radius);
    let mut run = Run {
        best_u: Vec::new(),
        upper: f64::INFINITY,
        lower: f64::NEG_INFINITY,
    };
    let nf = n as f64;
    for _ in 0..max_iters {
        let u = c.as_slice().to_vec();
        let g = match chart.feasibility_cut(&u) {
            Some(g) => DVector::from_vec(g),
            None => {
                let (f, g) = chart.oracle(&u);
                let g = DVector::from_vec(g);
                let width = (g.dot(&(&p * &g))).max(0.0).sqrt();
                if f < run.upper {
                    run.upper = f;
                    run.best_u = u;
                }
                run.lower = run.lower.max(f - width);
                if width == 0.0 {
                    run.lower = run.lower.max(f.min(run.upper));
                    break;
                }
                g
            }
        };
        if run.upper - run.lower <= GAP_TOL {
            break;
        }
        let pg = &p * &g;
        let gpg = g.dot(&pg);
        if !(gpg > 1e-300) {
            break;
        }
        let pg_n = pg / gpg.sqrt();
        c -= &pg_n * (1.0 / (nf + 1.0));
        p = (&p - (&pg_n * pg_n.transpose()) * (2.0 / (nf + 1.0))) * (nf * nf / (nf * nf - 1.0));
        p = (&p + p.transpose()) * 0.5;
    }
    run
}

/// Interval version for one search dimension.
fn bisection(chart: &Chart, lo: f64, hi: f64, max_iters: usize) -> Run {
    let (mut a, mut b) = (lo, hi);
    let mut run = Run {
        best_u: vec![0.5 * (lo + hi)],
        upper: f64::INFINITY,
        lower: f64::NEG_INFINITY,
    };
    for _ in 0..max_iters {
        let m = 0.5 * (a + b);
        let (f, g) = chart.oracle(&[m]);
        if f < run.upper {
            run.upper = f;
            run.best_u = vec![m];
        }
        run.lower = run.lower.max(f - g[0].abs() * 0.5 * (b - a));
        if b - a < 1e-13 {
            break;
        }
        if g[0] > 0.0 {
            b = m;
        } else if g[0] < 0.0 {
            a = m;
        } else {
            run.lower = run.lower.max(f);
            break;
        }
    }
    // endpoints are feasible and can beat every midpoint by a hair
    for e in [lo, hi] {
        let (f, _) = chart.oracle(&[e]);
        if f < run.upper {
            run.upper = f;
            run.best_u = vec![e];
        }
    }
    run
}

fn one_dimensional_range(problem: &CompositeProblem) -> (f64, f64) {
    match problem.set {
        ConstraintSet::Box { lo, hi } => (lo, hi),
        ConstraintSet::EuclideanBall { radius } => (-radius, radius),
        ConstraintSet::Simplex => (0.0, 1.0),
    }
}

/// Certified centralized minimum of `F` over the set, agreed across restarts.
pub fn solve_reference(problem: &CompositeProblem, seed: u64) -> Result<ReferenceSolution> {
    problem.validate()?;
    let chart = Chart { problem };
    let n = chart.dim();
    if n == 0 {
        let x = chart.lift(&[]);
        return Ok(ReferenceSolution {
            f_star: problem.evaluate_F(&x),
            x_star: x,
            gap: 0.0,
        });
    }
    let max_iters = 2000 + 400 * n * n * 30;
    let mut runs = Vec::with_capacity(RESTARTS);
    let mut rng = stream(&[tag::REFERENCE, seed]);
    for _ in 0..RESTARTS {
        let run = if n == 1 {
            let (lo, hi) = one_dimensional_range(problem);
            bisection(&chart, lo, hi, 400)
        } else {
            let x0 = problem.set.sample(&mut rng, problem.dim);
            let u0 = x0[..n].to_vec();
            ellipsoid(&chart, u0, chart.bounding_radius(), max_iters)
        };
        runs.push(run);
    }
    let best = runs
        .iter()
        .min_by(|a, b| a.upper.total_cmp(&b.upper))
        .expect("at least one restart");
    let worst_upper = runs.iter().map(|r| r.upper).fold(f64::NEG_INFINITY, f64::max);
    if !best.upper.is_finite() {
        return Err(Error::ReferenceSolveUnverified("no feasible center was visited".into()));
    }
    if worst_upper - best.upper > RESTART_AGREEMENT {
        return Err(Error::ReferenceSolveUnverified(format!(
            "restarts disagree: best {} worst {}",
            best.upper, worst_upper
        )));
    }
    let lower = runs.iter().map(|r| r.lower).fold(f64::NEG_INFINITY, f64::max);
    let gap = (best.upper - lower).max(0.0);
    if gap > 1e-6 {
        return Err(Error::ReferenceSolveUnverified(format!("certified gap {gap:e} exceeds 1e-6")));
    }
    let x_star = chart.lift(&best.best_u);
    let solution = ReferenceSolution {
        f_star: best.upper,
        x_star,
        gap,
    };
    if let Some(x_ridge) = ridge_solution(problem) {
        if problem.set.contains(&x_ridge, 0.0) {
            let f_ridge = problem.evaluate_F(&x_ridge);
            if (f_ridge - solution.f_star).abs() > 1e-6 {
                return Err(Error::ReferenceSolveUnverified(format!(
                    "closed-form ridge value {f_ridge} differs from {}",
                    solution.f_star
                )));
            }
        }
    }
    Ok(solution)
}

/// Unconstrained minimizer for quadratic objectives with `half_l2_sq`
/// regularization; `None` for every other instance.
pub(crate) fn ridge_solution(problem: &CompositeProblem) -> Option<Vec<f64>> {
    if problem.objectives.iter().any(|f| f.kind != ObjectiveKind::Quadratic) {
        return None;
    }
    let n = problem.dim;
    let (f_weight, reg_sum) = match problem.variant {
        Variant::Problem1 => {
            if problem.local_regs.iter().any(|r| !matches!(r.kind, RegKind::HalfL2Sq | RegKind::Zero)) {
                return None;
            }
            let s: f64 = problem
                .local_regs
                .iter()
                .map(|r| if r.kind == RegKind::HalfL2Sq { r.lambda1 } else { 0.0 })
                .sum();
            (1.0, s)
        }
        Variant::Problem2 => match problem.global_reg.kind {
            RegKind::HalfL2Sq => (1.0 / problem.n_agents() as f64, problem.global_reg.lambda1),
            RegKind::Zero => (1.0 / problem.n_agents() as f64, 0.0),
            _ => return None,
        },
    };
    let mut h = DMatrix::<f64>::identity(n, n) * reg_sum;
    let mut r = DVector::<f64>::zeros(n);
    for f in &problem.objectives {
        let a = DMatrix::from_row_slice(f.rows.len(), n, &f.rows.concat());
        let b = DVector::from_column_slice(&f.b);
        h += a.transpose() * &a * f_weight;
        r += a.transpose() * b * f_weight;
    }
    h.cholesky().map(|c| c.solve(&r).as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Regularizer;
    use crate::problem::LocalObjective;

    fn box10() -> ConstraintSet {
        ConstraintSet::Box { lo: -10.0, hi: 10.0 }
    }

    #[test]
    fn two_quadratics() {
        // (x-1)^2 + (x-2)^2 written as 1/2 (sqrt2 x - sqrt2 i)^2
        let s2 = std::f64::consts::SQRT_2;
        let objectives = (1..=2)
            .map(|i| LocalObjective::new(ObjectiveKind::Quadratic, vec![vec![s2]], vec![s2 * i as f64]))
            .collect();
        let p = CompositeProblem {
            variant: Variant::Problem1,
            dim: 1,
            objectives,
            local_regs: vec![Regularizer::zero(); 2],
            global_reg: Regularizer::zero(),
            set: box10(),
        };
        let sol = solve_reference(&p, 0).unwrap();
        assert!((sol.x_star[0] - 1.5).abs() < 1e-6);
        assert!((sol.f_star - 0.5).abs() < 1e-9);
    }

    #[test]
    fn abs_plus_quadratic_regularizer() {
        let p = CompositeProblem {
            variant: Variant::Problem2,
            dim: 1,
            objectives: vec![LocalObjective::new(ObjectiveKind::L1Regression, vec![vec![1.0]], vec![1.0])],
            local_regs: Vec::new(),
            global_reg: Regularizer::new(RegKind::HalfL2Sq, 1.0, 0.0),
            set: box10(),
        };
        let sol = solve_reference(&p, 0).unwrap();
        // ternary search oracle at 1e-9 resolution
        let f = |x: f64| (x - 1.0).abs() + 0.5 * x * x;
        let (mut a, mut b) = (-10.0f64, 10.0f64);
        while b - a > 1e-9 {
            let (m1, m2) = (a + (b - a) / 3.0, b - (b - a) / 3.0);
            if f(m1) < f(m2) {
                b = m2;
            } else {
                a = m1;
            }
        }
        assert!((sol.x_star[0] - 0.5 * (a + b)).abs() < 1e-6);
        assert!((sol.x_star[0] - 1.0).abs() < 1e-6);
        assert!((sol.f_star - 0.5).abs() < 1e-9);
    }

    #[test]
    fn linear_simplex_picks_best_vertex() {
        let costs = [vec![0.3, -0.2, 0.5, 0.1], vec![-0.4, 0.6, 0.2, -0.3]];
        let p = CompositeProblem {
            variant: Variant::Problem1,
            dim: 4,
            objectives: costs
                .iter()
                .map(|c| LocalObjective::new(ObjectiveKind::Linear, vec![c.clone()], vec![]))
                .collect(),
            local_regs: vec![Regularizer::zero(); 2],
            global_reg: Regularizer::zero(),
            set: ConstraintSet::Simplex,
        };
        let sol = solve_reference(&p, 1).unwrap();
        let best_vertex = ConstraintSet::Simplex
            .vertices(4)
            .iter()
            .map(|v| p.evaluate_F(v))
            .fold(f64::INFINITY, f64::min);
        assert!((sol.f_star - best_vertex).abs() < 1e-9);
    }
}
