//! The two distributed methods as synchronous step functions, and a seeded
//! trial runner that records checkpoint metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dual_averaging_projection, mirror_step, ConstraintSet, MapKind, MirrorMap};
use crate::network::{TopologySchedule, WeightMatrix};
use crate::noise::{LinkNoiseSampler, NoiseDecay};
use crate::problem::{CompositeProblem, StochasticOracle, Variant};
use crate::rng::mix;
use crate::vector::{axpy, dist};

/// `alpha_t = 1/(t+1)^kappa1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepsizeSchedule {
    pub kappa1: f64,
}

impl StepsizeSchedule {
    #[inline]
    pub fn alpha(&self, t: usize) -> f64 {
        (t as f64 + 1.0).powf(-self.kappa1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DscmdN,
    DscdaN,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub x: Vec<f64>,
    /// Dual accumulator; stays zero for the mirror-descent method.
    pub z: Vec<f64>,
    /// `sum_{s=1}^{t} x^s`
    pub x_hat_sum: Vec<f64>,
    pub t: usize,
}

impl AgentState {
    pub fn new(x0: Vec<f64>) -> Self {
        let d = x0.len();
        AgentState {
            x: x0,
            z: vec![0.0; d],
            x_hat_sum: vec![0.0; d],
            t: 0,
        }
    }

    /// Running average `(1/t) sum_{s=1}^t x^s`; the initial point before any step.
    pub fn x_hat(&self) -> Vec<f64> {
        if self.t == 0 {
            return self.x.clone();
        }
        self.x_hat_sum.iter().map(|v| v / self.t as f64).collect()
    }

    fn advance(&mut self, x_next: Vec<f64>) {
        axpy(1.0, &x_next, &mut self.x_hat_sum);
        self.x = x_next;
        self.t += 1;
    }
}

/// Everything a step needs besides the agent states and the weights.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub problem: &'a CompositeProblem,
    pub map: &'a MirrorMap,
    pub noise: &'a LinkNoiseSampler,
    pub decay: &'a NoiseDecay,
    pub steps: &'a StepsizeSchedule,
    pub oracle: &'a StochasticOracle,
    /// Bound used by the bounded oracle's clip.
    pub g_f: f64,
}

/// `sum_j P_ij (v_j + r_t xi_ij)`, with noise on every active incoming link.
fn noisy_mix(p: &WeightMatrix, values: &[Vec<f64>], i: usize, t: usize, ctx: &StepContext) -> Vec<f64> {
    let dim = values[i].len();
    let r = ctx.decay.r(t);
    let mut out = vec![0.0; dim];
    for (j, &w) in p.row(i).iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        axpy(w, &values[j], &mut out);
        if j != i {
            let xi = ctx.noise.sample_link_noise(i, j, t, dim);
            axpy(w * r, &xi, &mut out);
        }
    }
    out
}

/// Per-step measurements.
#[derive(Debug, Clone, Default)]
pub struct StepRecord {
    /// `||x_i^{t+1} - y_i^t||` (mirror descent only).
    pub step_norms: Vec<f64>,
}

/// One synchronous round of the mirror-descent method: every agent mixes
/// noisy neighbor iterates into `y_i`, queries the oracle at `y_i`, and takes
/// the composite Bregman step.
pub fn dscmd_step(states: &mut [AgentState], t: usize, p: &WeightMatrix, ctx: &StepContext) -> Result<StepRecord> {
    let problem = ctx.problem;
    let xs: Vec<Vec<f64>> = states.iter().map(|s| s.x.clone()).collect();
    let ys: Vec<Vec<f64>> = (0..states.len()).map(|i| noisy_mix(p, &xs, i, t, ctx)).collect();
    let alpha = ctx.steps.alpha(t);
    let mut next = Vec::with_capacity(states.len());
    let mut step_norms = Vec::with_capacity(states.len());
    for (i, y) in ys.iter().enumerate() {
        let g = ctx
            .oracle
            .stochastic_subgradient(&problem.objectives[i], i, y, t, ctx.g_f);
        let x = mirror_step(ctx.map, &problem.set, &problem.local_regs[i], &g, y, alpha)
            .map_err(|e| e.at_step(i, t))?;
        step_norms.push(dist(&x, y));
        next.push(x);
    }
    for (s, x) in states.iter_mut().zip(next) {
        s.advance(x);
    }
    Ok(StepRecord { step_norms })
}

/// One synchronous round of the dual-averaging method: oracle at `x_i^t`,
/// noisy mixing of the duals plus the fresh subgradient, then the composite
/// dual-averaging projection with weight `t` on the global regularizer.
pub fn dscda_step(states: &mut [AgentState], t: usize, p: &WeightMatrix, ctx: &StepContext) -> Result<StepRecord> {
    let problem = ctx.problem;
    let zs: Vec<Vec<f64>> = states.iter().map(|s| s.z.clone()).collect();
    let alpha = ctx.steps.alpha(t);
    let mut next = Vec::with_capacity(states.len());
    for (i, s) in states.iter().enumerate() {
        let g = ctx
            .oracle
            .stochastic_subgradient(&problem.objectives[i], i, &s.x, t, ctx.g_f);
        let mut z = noisy_mix(p, &zs, i, t, ctx);
        axpy(1.0, &g, &mut z);
        let x = dual_averaging_projection(ctx.map, &problem.set, &problem.global_reg, &z, t, alpha)
            .map_err(|e| e.at_step(i, t))?;
        next.push((z, x));
    }
    for (s, (z, x)) in states.iter_mut().zip(next) {
        s.z = z;
        s.advance(x);
    }
    Ok(StepRecord::default())
}

/// Log-spaced checkpoints in `[1, horizon]` plus 0 and the horizon itself.
pub fn checkpoint_grid(horizon: usize, per_decade: usize, cap: usize) -> Vec<usize> {
    let mut grid = vec![0];
    if horizon == 0 {
        return grid;
    }
    let decades = (horizon as f64).log10();
    let count = ((per_decade as f64 * decades).ceil() as usize + 1).min(cap.saturating_sub(1)).max(1);
    for k in 0..count {
        let frac = if count == 1 { 1.0 } else { k as f64 / (count - 1) as f64 };
        let t = 10f64.powf(decades * frac).round() as usize;
        grid.push(t.clamp(1, horizon));
    }
    grid.push(horizon);
    grid.sort_unstable();
    grid.dedup();
    grid
}

/// A fully specified single-trial simulation.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub method: Method,
    pub horizon: usize,
    pub topology: TopologySchedule,
    pub noise: LinkNoiseSampler,
    pub decay: NoiseDecay,
    pub steps: StepsizeSchedule,
    pub problem: CompositeProblem,
    pub map: MirrorMap,
    pub oracle: StochasticOracle,
    pub g_f: f64,
    pub f_star: f64,
    pub init: Vec<Vec<f64>>,
    pub checkpoints: Vec<usize>,
    pub track_running_min: bool,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: usize,
    /// `F(x_hat_l^t) - f_star` per agent.
    pub errors: Vec<f64>,
    /// Largest pairwise `||x_i^t - x_j^t||`.
    pub disagreement: f64,
    /// `||x_i^t - y_i^{t-1}||` of the last step, per agent (mirror descent).
    pub step_norms: Vec<f64>,
    /// `sum_{s=1}^t sum_i ||x_i^s - x_j^s||` per reference agent `j`.
    pub cum_disagreement: Vec<f64>,
    /// `||z_i^t - z_bar^t||` per agent (dual averaging).
    pub dual_disagreement: Vec<f64>,
    /// `min_{1<=s<=t} F(x_i^s) - f_star` per agent, when tracked.
    pub running_min: Vec<f64>,
    pub iterates: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub trial: u64,
    pub checkpoints: Vec<Checkpoint>,
}

/// A failed run: the error plus every checkpoint recorded before it.
#[derive(Debug)]
pub struct RunFailure {
    pub trace: RunTrace,
    pub error: Error,
}

impl Simulation {
    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        self.problem.validate()?;
        self.map.check_set(&self.problem.set)?;
        if self.topology.n != self.problem.n_agents() {
            return Err(Error::config("n_agents", "topology and problem disagree on the agent count"));
        }
        if self.init.len() != self.problem.n_agents() {
            return Err(Error::config("init_override", "need one initial point per agent"));
        }
        for x in &self.init {
            if x.len() != self.problem.dim || !self.problem.set.contains(x, 1e-9) {
                return Err(Error::config("init_override", "initial points must lie in the set"));
            }
        }
        match (self.method, self.problem.variant) {
            (Method::DscmdN, Variant::Problem1) | (Method::DscdaN, Variant::Problem2) => {}
            (Method::DscmdN, _) => return Err(Error::config("method", "dscmd_n solves problem1")),
            (Method::DscdaN, _) => return Err(Error::config("method", "dscda_n solves problem2")),
        }
        if self.method == Method::DscmdN {
            if let MapKind::PNormSq { p } = self.map.kind {
                if p != 2.0 {
                    return Err(Error::config(
                        "mirror_map",
                        "p_norm_sq Bregman divergence is not separately convex; use it as proximal_psi",
                    ));
                }
            }
        }
        if !(self.steps.kappa1 > 0.0 && self.steps.kappa1 < 1.0) {
            return Err(Error::config("kappa1", format!("admissible range is (0,1), got {}", self.steps.kappa1)));
        }
        if !(self.decay.kappa2 > 0.0 && self.decay.kappa2 <= 1.0) {
            return Err(Error::config("kappa2", format!("admissible range is (0,1], got {}", self.decay.kappa2)));
        }
        Ok(())
    }

    pub fn set(&self) -> &ConstraintSet {
        &self.problem.set
    }

    fn trial_seed(&self, trial: u64) -> u64 {
        mix(&[self.master_seed, trial])
    }

    /// Runs one trial; all randomness is keyed by `(master_seed, trial)`.
    pub fn run(&self, trial: u64) -> std::result::Result<RunTrace, RunFailure> {
        let seed = self.trial_seed(trial);
        let noise = self.noise.for_trial(seed);
        let oracle = self.oracle.for_trial(seed);
        let ctx = StepContext {
            problem: &self.problem,
            map: &self.map,
            noise: &noise,
            decay: &self.decay,
            steps: &self.steps,
            oracle: &oracle,
            g_f: self.g_f,
        };
        let n = self.problem.n_agents();
        let mut states: Vec<AgentState> = self.init.iter().cloned().map(AgentState::new).collect();
        let mut trace = RunTrace {
            trial,
            checkpoints: Vec::with_capacity(self.checkpoints.len()),
        };
        let mut cum = vec![0.0; n];
        let mut running_min = vec![f64::INFINITY; n];
        let mut last_steps = vec![0.0; n];
        let mut next_cp = self.checkpoints.iter().peekable();
        while next_cp.peek().is_some_and(|&&c| c == 0) {
            trace.checkpoints.push(self.checkpoint(0, &states, &cum, &running_min, &last_steps));
            next_cp.next();
        }
        for t in 0..self.horizon {
            let p = self.topology.weight_matrix_at(t);
            let step = match self.method {
                Method::DscmdN => dscmd_step(&mut states, t, &p, &ctx),
                Method::DscdaN => dscda_step(&mut states, t, &p, &ctx),
            };
            match step {
                Ok(rec) => {
                    if !rec.step_norms.is_empty() {
                        last_steps = rec.step_norms;
                    }
                }
                Err(error) => return Err(RunFailure { trace, error }),
            }
            for (j, c) in cum.iter_mut().enumerate() {
                *c += states.iter().map(|s| dist(&s.x, &states[j].x)).sum::<f64>();
            }
            if self.track_running_min {
                for (m, s) in running_min.iter_mut().zip(&states) {
                    *m = m.min(self.problem.evaluate_F(&s.x) - self.f_star);
                }
            }
            while next_cp.peek().is_some_and(|&&c| c == t + 1) {
                trace.checkpoints.push(self.checkpoint(t + 1, &states, &cum, &running_min, &last_steps));
                next_cp.next();
            }
        }
        Ok(trace)
    }

    fn checkpoint(&self, t: usize, states: &[AgentState], cum: &[f64], running_min: &[f64], steps: &[f64]) -> Checkpoint {
        let n = states.len();
        let errors = states
            .iter()
            .map(|s| self.problem.evaluate_F(&s.x_hat()) - self.f_star)
            .collect();
        let mut disagreement: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                disagreement = disagreement.max(dist(&states[i].x, &states[j].x));
            }
        }
        let dual_disagreement = if self.method == Method::DscdaN {
            let dim = self.problem.dim;
            let mut z_bar = vec![0.0; dim];
            for s in states {
                axpy(1.0 / n as f64, &s.z, &mut z_bar);
            }
            states.iter().map(|s| dist(&s.z, &z_bar)).collect()
        } else {
            Vec::new()
        };
        Checkpoint {
            t,
            errors,
            disagreement,
            step_norms: if self.method == Method::DscmdN && t > 0 {
                steps.to_vec()
            } else {
                Vec::new()
            },
            cum_disagreement: cum.to_vec(),
            dual_disagreement,
            running_min: if self.track_running_min && t > 0 {
                running_min.to_vec()
            } else {
                Vec::new()
            },
            iterates: states.iter().map(|s| s.x.clone()).collect(),
        }
    }
}
