//! Runs a resolved configuration as a trial ensemble and evaluates every
//! check it asks for.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{Method, Simulation};
use crate::config::{ExperimentConfig, Resolved};
use crate::error::{Error, Result};
use crate::harness::{
    almost_sure_diagnostics, disagreement_report, expected_error_curve, fit_rate, high_prob_check,
    network_error_curve, step_norm_report, theorem1_rhs, theorem2_rhs, theorem3_rhs, theorem4_rhs,
    AlmostSureReport, EnsembleSetup, HighProbReport, RateFit, TrialEnsemble,
};
use crate::network::{generate_schedule, TopologyKind, TopologySchedule, WeightMatrix};
use crate::noise::NoiseDist;

/// Shipped acceptance experiments, by name.
pub const SHIPPED: &[(&str, &str)] = &[
    ("corollary1_rate", include_str!("../experiments/corollary1_rate.json")),
    ("regime_kappa2_025", include_str!("../experiments/regime_kappa2_025.json")),
    ("regime_kappa2_075", include_str!("../experiments/regime_kappa2_075.json")),
    ("lemma1_mixing", include_str!("../experiments/lemma1_mixing.json")),
    ("benchmark_b", include_str!("../experiments/benchmark_b.json")),
    ("simplex_entropy", include_str!("../experiments/simplex_entropy.json")),
    ("high_prob_dscmd", include_str!("../experiments/high_prob_dscmd.json")),
    ("high_prob_dscda", include_str!("../experiments/high_prob_dscda.json")),
];

pub fn shipped(name: &str) -> Option<&'static str> {
    SHIPPED.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

/// Runs trials `0..m` on at most `jobs` threads; results are ordered by trial.
pub fn run_ensemble(sim: &Simulation, m: usize, jobs: usize) -> Result<TrialEnsemble> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::ConfigMismatch(format!("thread pool: {e}")))?;
    let results: Vec<_> = pool.install(|| (0..m as u64).into_par_iter().map(|k| sim.run(k)).collect());
    let mut traces = Vec::with_capacity(m);
    for r in results {
        traces.push(r.map_err(|f| f.error)?);
    }
    TrialEnsemble::new(traces)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub expected: String,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub t: usize,
    pub agent: usize,
    pub mean_err: f64,
    pub stderr: Option<f64>,
    pub bound: f64,
    pub disagreement: f64,
    pub disagreement_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingReport {
    pub schedules: Vec<TopologySchedule>,
    pub t_max: usize,
    pub checked: usize,
    pub violations: usize,
    /// Largest `|[P(t,s)]_ij - 1/N| / (Theta gamma^(t-s))`.
    pub worst_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub method: Method,
    pub trials: usize,
    pub fit: Option<RateFit>,
    pub checks: Vec<Check>,
    pub high_prob: Option<HighProbReport>,
    pub almost_sure: Option<AlmostSureReport>,
    pub mixing: Option<MixingReport>,
    pub pass: bool,
    #[serde(skip)]
    pub rows: Vec<SeriesRow>,
}

/// Five random schedules with `N = 2..=6` and `B` cycling through `1..=3`.
pub fn lemma1_schedules(seed: u64) -> Result<Vec<TopologySchedule>> {
    (0..5)
        .map(|k| {
            let n = 2 + k;
            generate_schedule(n, 1 + k % 3, 0.5 / n as f64, TopologyKind::RandomBConnected, seed + k as u64)
        })
        .collect()
}

/// Checks `|[P(t,s)]_ij - 1/N| <= Theta gamma^(t-s)` for all `1 <= s <= t <= t_max`.
pub fn lemma1_check(schedules: &[TopologySchedule], t_max: usize) -> Result<MixingReport> {
    let mut checked = 0;
    let mut violations = 0;
    let mut worst_ratio: f64 = 0.0;
    for sched in schedules {
        let mc = sched.mixing_constants()?;
        let n = sched.n;
        let mats: Vec<WeightMatrix> = (0..=t_max).map(|t| sched.weight_matrix_at(t)).collect();
        for s in 1..=t_max {
            let mut acc = WeightMatrix::identity(n, s);
            for (t, p) in mats.iter().enumerate().skip(s) {
                acc = p.matmul(&acc);
                let bound = mc.bound(t - s);
                for &v in acc.entries() {
                    let dev = (v - 1.0 / n as f64).abs();
                    checked += 1;
                    worst_ratio = worst_ratio.max(dev / bound);
                    if dev > bound {
                        violations += 1;
                    }
                }
            }
        }
    }
    Ok(MixingReport {
        schedules: schedules.to_vec(),
        t_max,
        checked,
        violations,
        worst_ratio,
    })
}

fn check(name: &str, measured: f64, expected: impl Into<String>, pass: bool) -> Check {
    Check {
        name: name.into(),
        measured,
        expected: expected.into(),
        pass,
    }
}

/// Default fit window: the last two decades of the horizon.
pub fn default_fit_window(horizon: usize) -> (usize, usize) {
    ((horizon / 100).max(1), horizon)
}

/// Expected-error bound of the configured method at each `T` of `grid`.
pub fn expected_bound(r: &Resolved, grid: &[usize]) -> Vec<f64> {
    match r.sim.method {
        Method::DscmdN => theorem1_rhs(&r.constants, &r.sim.steps, &r.sim.decay, grid),
        Method::DscdaN => theorem3_rhs(&r.constants, &r.sim.steps, &r.sim.decay, grid),
    }
}

/// High-probability bound of the configured method at horizon `t`.
pub fn high_prob_bound(r: &Resolved, delta: f64, t: usize) -> f64 {
    match r.sim.method {
        Method::DscmdN => theorem2_rhs(&r.constants, &r.sim.steps, &r.sim.decay, &[t], delta)[0],
        Method::DscdaN => theorem4_rhs(&r.constants, &r.sim.steps, &r.sim.decay, &[t], delta)[0],
    }
}

pub fn evaluate(r: &Resolved, ens: &TrialEnsemble) -> Result<ExperimentReport> {
    let cfg = &r.config;
    let expect = cfg.expect.clone().unwrap_or_default();
    let method = r.sim.method;
    let n = ens.n_agents();
    let offset = ens.grid.iter().take_while(|&&t| t == 0).count();
    let grid: Vec<usize> = ens.grid[offset..].to_vec();
    let bounds = expected_bound(r, &grid);
    let curves: Vec<_> = (0..n).map(|a| expected_error_curve(ens, a)).collect();
    let m = ens.m() as f64;
    let agent_disagreement = |k: usize, a: usize| -> f64 {
        ens.traces
            .iter()
            .map(|tr| {
                let cp = &tr.checkpoints[k];
                match method {
                    Method::DscmdN => cp.cum_disagreement[a],
                    Method::DscdaN => cp.dual_disagreement[a],
                }
            })
            .sum::<f64>()
            / m
    };
    let dis = disagreement_report(ens, method, &r.constants, &r.sim.steps, &r.sim.decay);
    let mut rows = Vec::with_capacity(grid.len() * n);
    let mut bound_violations = 0usize;
    for (k, (&t, &bound)) in grid.iter().zip(&bounds).enumerate() {
        for (a, curve) in curves.iter().enumerate() {
            let p = curve[k + offset];
            if !(p.mean <= bound) {
                bound_violations += 1;
            }
            rows.push(SeriesRow {
                t,
                agent: a,
                mean_err: p.mean,
                stderr: p.stderr,
                bound,
                disagreement: agent_disagreement(k + offset, a),
                disagreement_bound: dis[k].bound,
            });
        }
    }

    let mut checks = Vec::new();
    let want_bound = expect.bound_dominates.unwrap_or(true);
    checks.push(check(
        "bound_dominates",
        bound_violations as f64,
        if want_bound { "0 violations" } else { "at least 1 violation" },
        (bound_violations == 0) == want_bound,
    ));

    let want_lemmas = expect.lemma_invariants.unwrap_or(true);
    let dis_viol = dis.iter().filter(|p| !p.holds()).count();
    let (lemma_name, lemma_viol) = match method {
        Method::DscmdN => {
            let steps = step_norm_report(ens, &r.constants, &r.sim.steps);
            let step_viol = steps.iter().filter(|p| !p.holds()).count();
            checks.push(check(
                "step_norm_bound",
                step_viol as f64,
                if want_lemmas { "0 violations" } else { "at least 1 violation" },
                (step_viol == 0) == want_lemmas,
            ));
            ("primal_disagreement_bound", dis_viol)
        }
        Method::DscdaN => ("dual_disagreement_bound", dis_viol),
    };
    checks.push(check(
        lemma_name,
        lemma_viol as f64,
        if want_lemmas { "0 violations" } else { "at least 1 violation" },
        (lemma_viol == 0) == want_lemmas,
    ));

    let network = network_error_curve(ens);
    let window = cfg.fit_window.unwrap_or_else(|| default_fit_window(cfg.horizon_t));
    let fit = fit_rate(&network, window);
    if expect.slope_min.is_some() || expect.slope_max.is_some() {
        let lo = expect.slope_min.unwrap_or(f64::NEG_INFINITY);
        let hi = expect.slope_max.unwrap_or(f64::INFINITY);
        let (measured, pass) = match &fit {
            Ok(f) => (f.slope, f.slope >= lo && f.slope <= hi),
            Err(_) => (f64::NAN, false),
        };
        checks.push(check("rate_slope", measured, format!("in [{lo}, {hi}]"), pass));
    }
    if let Some(max) = expect.final_ratio_max {
        let first = network.iter().find(|p| p.t > 0).map(|p| p.mean).unwrap_or(f64::NAN);
        let last = network.last().map(|p| p.mean).unwrap_or(f64::NAN);
        let ratio = last / first;
        checks.push(check("final_over_initial", ratio, format!("<= {max}"), ratio <= max));
    }

    let high_prob = match cfg.delta {
        Some(delta) => {
            let setup = EnsembleSetup {
                method,
                bounded_gradients: cfg.grad_bounded,
                noise_bounded: true,
                noise_zero_mean: cfg.noise_zero_mean || r.sim.noise.dist == NoiseDist::Zero,
            };
            let rep = high_prob_check(ens, setup, delta, |d, t| high_prob_bound(r, d, t))?;
            let min_cov = expect.min_coverage.unwrap_or(1.0 - delta);
            checks.push(check(
                "high_prob_coverage",
                rep.fraction,
                format!(">= {min_cov}"),
                rep.fraction >= min_cov,
            ));
            Some(rep)
        }
        None => None,
    };

    let almost_sure = if cfg.track_running_min {
        let final_mean = network.last().map(|p| p.mean).unwrap_or(f64::NAN);
        let rep = almost_sure_diagnostics(&ens.traces[0], 10.0 * final_mean.max(0.0), f64::INFINITY)?;
        checks.push(check(
            "running_min_nonincreasing",
            rep.min_nonincreasing as u8 as f64,
            "1",
            rep.min_nonincreasing,
        ));
        checks.push(check(
            "running_min_below_10x_final_mean",
            rep.min_error.last().map(|p| p.1).unwrap_or(f64::NAN),
            format!("<= {}", 10.0 * final_mean),
            rep.final_min_below,
        ));
        Some(rep)
    } else {
        None
    };

    let mixing = match expect.mixing_violations_max {
        Some(max) => {
            let rep = lemma1_check(&lemma1_schedules(cfg.topology_seed)?, 200)?;
            checks.push(check(
                "mixing_violations",
                rep.violations as f64,
                format!("<= {max}"),
                rep.violations <= max,
            ));
            Some(rep)
        }
        None => None,
    };

    let pass = checks.iter().all(|c| c.pass);
    Ok(ExperimentReport {
        name: cfg.name().to_string(),
        method,
        trials: ens.m(),
        fit: fit.ok(),
        checks,
        high_prob,
        almost_sure,
        mixing,
        pass,
        rows,
    })
}

/// Resolve, run and evaluate in one call.
pub fn run_experiment(r: &Resolved, jobs: usize) -> Result<(TrialEnsemble, ExperimentReport)> {
    let ens = run_ensemble(&r.sim, r.config.trials_m, jobs)?;
    let report = evaluate(r, &ens)?;
    Ok((ens, report))
}

/// Overwrite one of the sweepable axes.
pub fn apply_axis(cfg: &mut ExperimentConfig, axis: &str, value: f64) -> Result<()> {
    match axis {
        "kappa1" => cfg.kappa1 = value,
        "kappa2" => cfg.noise_kappa2 = value,
        "nu" => cfg.noise_nu = value,
        "N" => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(Error::InvalidConfig {
                    key: "N".into(),
                    message: format!("agent count must be a positive integer, got {value}"),
                });
            }
            cfg.n_agents = value as usize;
            cfg.init_override = None;
            if let Some(th) = cfg.theta {
                if th > 1.0 / cfg.n_agents as f64 {
                    cfg.theta = None;
                }
            }
        }
        other => {
            return Err(Error::InvalidConfig {
                key: "axis".into(),
                message: format!("`{other}` is not sweepable; use kappa1, kappa2, nu or N"),
            })
        }
    }
    Ok(())
}
