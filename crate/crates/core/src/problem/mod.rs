//! Local objectives, stochastic subgradient oracles, and composite problems.

mod reference;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use reference::{solve_reference, ReferenceSolution};

use crate::error::{Error, Result};
use crate::geometry::{ConstraintSet, Regularizer};
use crate::rng::{stream, tag};
use crate::vector::{axpy, dot, norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// `||A x - b||_1`
    L1Regression,
    /// `(1/m) ||A x - b||_1`
    LeastAbsDev,
    /// `sum_r max(0, 1 - b_r <a_r, x>)` with labels `b_r` in {-1, 1}
    Hinge,
    /// `1/2 ||A x - b||^2`
    Quadratic,
    /// `<a_0, x>`
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalObjective {
    pub kind: ObjectiveKind,
    pub rows: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl LocalObjective {
    pub fn new(kind: ObjectiveKind, rows: Vec<Vec<f64>>, b: Vec<f64>) -> Self {
        assert!(kind == ObjectiveKind::Linear || rows.len() == b.len(), "one target per row");
        LocalObjective { kind, rows, b }
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }

    fn residuals(&self, x: &[f64]) -> impl Iterator<Item = f64> + '_ {
        let x = x.to_vec();
        self.rows.iter().zip(&self.b).map(move |(a, b)| dot(a, &x) - b)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let m = self.rows.len() as f64;
        match self.kind {
            ObjectiveKind::L1Regression => self.residuals(x).map(f64::abs).sum(),
            ObjectiveKind::LeastAbsDev => self.residuals(x).map(f64::abs).sum::<f64>() / m,
            ObjectiveKind::Hinge => self
                .rows
                .iter()
                .zip(&self.b)
                .map(|(a, y)| (1.0 - y * dot(a, x)).max(0.0))
                .sum(),
            ObjectiveKind::Quadratic => 0.5 * self.residuals(x).map(|r| r * r).sum::<f64>(),
            ObjectiveKind::Linear => dot(&self.rows[0], x),
        }
    }

    /// An element of the subdifferential; the gradient where differentiable,
    /// and the zero-sign choice at kinks.
    pub fn subgradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        let sign = |r: f64| if r > 0.0 { 1.0 } else if r < 0.0 { -1.0 } else { 0.0 };
        match self.kind {
            ObjectiveKind::L1Regression | ObjectiveKind::LeastAbsDev => {
                let scale = if self.kind == ObjectiveKind::LeastAbsDev {
                    1.0 / self.rows.len() as f64
                } else {
                    1.0
                };
                for (a, b) in self.rows.iter().zip(&self.b) {
                    axpy(scale * sign(dot(a, x) - b), a, &mut g);
                }
            }
            ObjectiveKind::Hinge => {
                for (a, y) in self.rows.iter().zip(&self.b) {
                    if 1.0 - y * dot(a, x) > 0.0 {
                        axpy(-y, a, &mut g);
                    }
                }
            }
            ObjectiveKind::Quadratic => {
                for (a, b) in self.rows.iter().zip(&self.b) {
                    axpy(dot(a, x) - b, a, &mut g);
                }
            }
            ObjectiveKind::Linear => g.copy_from_slice(&self.rows[0]),
        }
        g
    }

    /// Subgradient norm bound over all points with `||x|| <= radius`.
    pub fn subgradient_bound(&self, radius: f64) -> f64 {
        let row_sum: f64 = self.rows.iter().map(|a| norm(a)).sum();
        match self.kind {
            ObjectiveKind::L1Regression | ObjectiveKind::Hinge => row_sum,
            ObjectiveKind::LeastAbsDev => row_sum / self.rows.len() as f64,
            ObjectiveKind::Linear => norm(&self.rows[0]),
            ObjectiveKind::Quadratic => {
                let (m, n) = (self.rows.len(), self.dim());
                let a = DMatrix::from_row_slice(m, n, &self.rows.concat());
                let ata = a.transpose() * &a;
                let spec = ata.singular_values().max();
                let atb = a.transpose() * nalgebra::DVector::from_column_slice(&self.b);
                spec * radius + atb.norm()
            }
        }
    }
}

/// Zero-mean perturbation added to exact subgradients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StochasticOracle {
    pub sigma: f64,
    pub bounded: bool,
    pub seed: u64,
}

impl StochasticOracle {
    pub fn exact() -> Self {
        StochasticOracle {
            sigma: 0.0,
            bounded: false,
            seed: 0,
        }
    }

    pub fn for_trial(&self, trial: u64) -> Self {
        StochasticOracle {
            seed: crate::rng::mix(&[self.seed, trial]),
            ..*self
        }
    }

    /// Second-moment bound of the perturbed subgradient given a bound on the
    /// exact one. Gaussian mode adds `sigma^2 dim` to the square; bounded mode
    /// draws from a ball of radius `sigma`, so the bound holds surely.
    pub fn g_bound(&self, exact_bound: f64, dim: usize) -> f64 {
        if self.bounded {
            exact_bound + self.sigma
        } else {
            (exact_bound * exact_bound + self.sigma * self.sigma * dim as f64).sqrt()
        }
    }

    pub fn perturbation(&self, agent: usize, t: usize, dim: usize) -> Vec<f64> {
        if self.sigma == 0.0 {
            return vec![0.0; dim];
        }
        let mut rng = stream(&[tag::GRAD_NOISE, self.seed, agent as u64, t as u64]);
        let mut e: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        if self.bounded {
            let n = norm(&e).max(f64::MIN_POSITIVE);
            let r = self.sigma * rng.random::<f64>().powf(1.0 / dim as f64);
            e.iter_mut().for_each(|v| *v *= r / n);
        } else {
            e.iter_mut().for_each(|v| *v *= self.sigma);
        }
        e
    }

    /// Exact subgradient plus the keyed perturbation. Bounded mode also clips
    /// to `g_bound`, which never triggers when the exact bound is valid.
    pub fn stochastic_subgradient(&self, obj: &LocalObjective, agent: usize, x: &[f64], t: usize, g_f: f64) -> Vec<f64> {
        let mut g = obj.subgradient(x);
        let e = self.perturbation(agent, t, x.len());
        axpy(1.0, &e, &mut g);
        if self.bounded {
            let n = norm(&g);
            if n > g_f {
                g.iter_mut().for_each(|v| *v *= g_f / n);
            }
        }
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `sum_i f_i(x) + chi_i(x)`
    Problem1,
    /// `(1/N) sum_i f_i(x) + eta(x)`
    Problem2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeProblem {
    pub variant: Variant,
    pub dim: usize,
    pub objectives: Vec<LocalObjective>,
    /// Local regularizers (problem 1); ignored for problem 2.
    pub local_regs: Vec<Regularizer>,
    /// Global regularizer (problem 2); ignored for problem 1.
    pub global_reg: Regularizer,
    pub set: ConstraintSet,
}

impl CompositeProblem {
    pub fn n_agents(&self) -> usize {
        self.objectives.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.set.validate()?;
        if self.objectives.is_empty() {
            return Err(Error::InvalidAgentCount(0));
        }
        if self.objectives.iter().any(|o| o.dim() != self.dim) {
            return Err(Error::config("dim", "objective data does not match the dimension"));
        }
        match self.variant {
            Variant::Problem1 => {
                if self.local_regs.len() != self.objectives.len() {
                    return Err(Error::config("regularizer_local", "need one local regularizer per agent"));
                }
                for r in &self.local_regs {
                    r.check_set(&self.set)?;
                }
            }
            Variant::Problem2 => self.global_reg.check_set(&self.set)?,
        }
        Ok(())
    }

    #[allow(non_snake_case)]
    pub fn evaluate_F(&self, x: &[f64]) -> f64 {
        match self.variant {
            Variant::Problem1 => self
                .objectives
                .iter()
                .zip(&self.local_regs)
                .map(|(f, chi)| f.value(x) + chi.value(x))
                .sum(),
            Variant::Problem2 => {
                let s: f64 = self.objectives.iter().map(|f| f.value(x)).sum();
                s / self.n_agents() as f64 + self.global_reg.value(x)
            }
        }
    }

    /// A subgradient of the composite objective.
    #[allow(non_snake_case)]
    pub fn subgradient_F(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        match self.variant {
            Variant::Problem1 => {
                for (f, chi) in self.objectives.iter().zip(&self.local_regs) {
                    axpy(1.0, &f.subgradient(x), &mut g);
                    axpy(1.0, &chi.subgradient(x), &mut g);
                }
            }
            Variant::Problem2 => {
                let w = 1.0 / self.n_agents() as f64;
                for f in &self.objectives {
                    axpy(w, &f.subgradient(x), &mut g);
                }
                axpy(1.0, &self.global_reg.subgradient(x), &mut g);
            }
        }
        g
    }

    /// Largest exact subgradient bound among the local objectives over `||x|| <= radius`.
    pub fn exact_g_f(&self, radius: f64) -> f64 {
        self.objectives.iter().map(|f| f.subgradient_bound(radius)).fold(0.0, f64::max)
    }

    pub fn g_chi(&self) -> f64 {
        self.local_regs
            .iter()
            .map(|r| r.subgradient_bound(&self.set, self.dim))
            .fold(0.0, f64::max)
    }

    pub fn g_eta(&self) -> f64 {
        self.global_reg.subgradient_bound(&self.set, self.dim)
    }
}

/// Recipe for a seeded synthetic instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub variant: Variant,
    pub objective_kind: ObjectiveKind,
    pub n_agents: usize,
    pub dim: usize,
    pub rows_per_agent: usize,
    pub data_seed: u64,
    pub set: ConstraintSet,
    pub regularizer: Regularizer,
}

impl ProblemSpec {
    /// Standard-normal data: regression targets `b = A x_true + e`, hinge
    /// labels `sign(<a, x_true> + e/2)`, linear costs drawn directly.
    pub fn build(&self) -> Result<CompositeProblem> {
        if self.dim == 0 {
            return Err(Error::config("dim", "dimension must be at least 1"));
        }
        if self.rows_per_agent == 0 {
            return Err(Error::config("rows_per_agent", "need at least one data row per agent"));
        }
        let mut truth_rng = stream(&[tag::DATA, self.data_seed, u64::MAX]);
        let x_true: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut truth_rng)).collect();
        let objectives = (0..self.n_agents)
            .map(|i| {
                let mut rng = stream(&[tag::DATA, self.data_seed, i as u64]);
                let m = if self.objective_kind == ObjectiveKind::Linear {
                    1
                } else {
                    self.rows_per_agent
                };
                let rows: Vec<Vec<f64>> = (0..m)
                    .map(|_| (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect())
                    .collect();
                let b = rows
                    .iter()
                    .map(|a| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        match self.objective_kind {
                            ObjectiveKind::Hinge => {
                                if dot(a, &x_true) + 0.5 * e >= 0.0 {
                                    1.0
                                } else {
                                    -1.0
                                }
                            }
                            ObjectiveKind::Linear => 0.0,
                            _ => dot(a, &x_true) + e,
                        }
                    })
                    .collect();
                LocalObjective::new(self.objective_kind, rows, b)
            })
            .collect();
        let (local_regs, global_reg) = match self.variant {
            Variant::Problem1 => (vec![self.regularizer; self.n_agents], Regularizer::zero()),
            Variant::Problem2 => (Vec::new(), self.regularizer),
        };
        let p = CompositeProblem {
            variant: self.variant,
            dim: self.dim,
            objectives,
            local_regs,
            global_reg,
            set: self.set,
        };
        p.validate()?;
        Ok(p)
    }
}
