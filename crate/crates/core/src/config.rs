//! Flat JSON experiment configuration and its resolution into a runnable
//! simulation plus the derived constants.

use serde::{Deserialize, Serialize};

use crate::algorithms::{checkpoint_grid, Method, Simulation, StepsizeSchedule};
use crate::error::{Error, Result};
use crate::geometry::{ConstraintSet, MirrorMap, RegKind, Regularizer};
use crate::harness::{BoundConstants, BoundInputs};
use crate::network::{generate_schedule, TopologyKind};
use crate::noise::{LinkNoiseSampler, NoiseDecay, NoiseDist};
use crate::problem::{solve_reference, ObjectiveKind, ProblemSpec, ReferenceSolution, StochasticOracle, Variant};
use crate::vector::norm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapName {
    EuclideanHalfSqNorm,
    NegEntropy,
    PNormSq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    Box,
    EuclideanBall,
    Simplex,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointSpec {
    #[serde(default = "default_cp_count")]
    pub count: usize,
    #[serde(default = "default_per_decade")]
    pub per_decade: usize,
    #[serde(default = "default_spacing")]
    pub spacing: String,
}

impl Default for CheckpointSpec {
    fn default() -> Self {
        CheckpointSpec {
            count: default_cp_count(),
            per_decade: default_per_decade(),
            spacing: default_spacing(),
        }
    }
}

/// Expected outcomes checked by `verify`. Every field is optional; absent
/// fields add no check.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectations {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_dominates: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lemma_invariants: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_coverage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixing_violations_max: Option<usize>,
    /// Upper limit on final mean error divided by the first post-start mean error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_ratio_max: Option<f64>,
}

fn default_window() -> usize {
    1
}
fn default_kind() -> TopologyKind {
    TopologyKind::RandomBConnected
}
fn default_kappa2() -> f64 {
    1.0
}
fn default_dist() -> NoiseDist {
    NoiseDist::UniformBall
}
fn default_true() -> bool {
    true
}
fn default_reg() -> RegKind {
    RegKind::Zero
}
fn default_lambda() -> f64 {
    0.0
}
fn default_set() -> SetKind {
    SetKind::Box
}
fn default_rows() -> usize {
    3
}
fn default_kappa1() -> f64 {
    0.5
}
fn default_cp_count() -> usize {
    200
}
fn default_per_decade() -> usize {
    40
}
fn default_spacing() -> String {
    "log".into()
}
fn default_trials() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<String>,

    pub n_agents: usize,
    #[serde(rename = "window_B", default = "default_window")]
    pub window_b: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default = "default_kind")]
    pub topology_kind: TopologyKind,
    #[serde(default)]
    pub topology_seed: u64,

    #[serde(default = "default_kappa2")]
    pub noise_kappa2: f64,
    #[serde(default)]
    pub noise_nu: f64,
    #[serde(default = "default_dist")]
    pub noise_dist: NoiseDist,
    #[serde(default = "default_true")]
    pub noise_zero_mean: bool,
    #[serde(default)]
    pub noise_seed: u64,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mirror_map: Option<MapName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proximal_psi: Option<MapName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_norm: Option<f64>,
    #[serde(default = "default_reg")]
    pub regularizer_local: RegKind,
    #[serde(default = "default_reg")]
    pub regularizer_global: RegKind,
    #[serde(default = "default_lambda")]
    pub lambda1: f64,
    #[serde(default = "default_lambda")]
    pub lambda2: f64,
    #[serde(default = "default_set")]
    pub set_kind: SetKind,
    #[serde(default)]
    pub set_params: SetParams,

    pub problem_variant: Variant,
    pub objective_kind: ObjectiveKind,
    pub dim: usize,
    #[serde(default = "default_rows")]
    pub rows_per_agent: usize,
    #[serde(default)]
    pub data_seed: u64,
    #[serde(default)]
    pub grad_noise_sigma: f64,
    #[serde(default)]
    pub grad_bounded: bool,

    pub method: Method,
    #[serde(rename = "horizon_T")]
    pub horizon_t: usize,
    #[serde(default = "default_kappa1")]
    pub kappa1: f64,
    #[serde(default)]
    pub checkpoints: CheckpointSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_override: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub master_seed: u64,

    #[serde(rename = "trials_M", default = "default_trials")]
    pub trials_m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_window: Option<(usize, usize)>,
    #[serde(default)]
    pub track_running_min: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<Expectations>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub plot: bool,
}

/// Derived quantities recorded next to the resolved config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Derived {
    pub theta: f64,
    pub g_f_exact: f64,
    pub g_f: f64,
    pub query_radius: f64,
    pub f_star: f64,
    pub x_star: Vec<f64>,
    pub reference_gap: f64,
    pub checkpoints: Vec<usize>,
    pub constants: BoundConstants,
}

/// A validated configuration with everything needed to run and judge it.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub sim: Simulation,
    pub reference: ReferenceSolution,
    pub constants: BoundConstants,
    pub derived: Derived,
}

fn in_range(key: &str, v: f64, ok: bool, range: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(key, format!("admissible range is {range}, got {v}")))
    }
}

fn map_from(name: MapName, p: Option<f64>) -> Result<MirrorMap> {
    match name {
        MapName::EuclideanHalfSqNorm => Ok(MirrorMap::euclidean()),
        MapName::NegEntropy => Ok(MirrorMap::neg_entropy()),
        MapName::PNormSq => MirrorMap::p_norm_sq(p.ok_or_else(|| Error::config("p_norm", "p_norm_sq needs p_norm"))?),
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(json_key(&e), e.to_string()))
    }

    pub fn name(&self) -> &str {
        self.experiment.as_deref().unwrap_or("experiment")
    }

    pub fn theta(&self) -> f64 {
        self.theta.unwrap_or(0.5 / self.n_agents.max(1) as f64)
    }

    fn set(&self) -> Result<ConstraintSet> {
        let p = self.set_params;
        let set = match self.set_kind {
            SetKind::Box => ConstraintSet::Box {
                lo: p.lo.ok_or_else(|| Error::config("set_params", "box needs lo"))?,
                hi: p.hi.ok_or_else(|| Error::config("set_params", "box needs hi"))?,
            },
            SetKind::EuclideanBall => ConstraintSet::EuclideanBall {
                radius: p.radius.ok_or_else(|| Error::config("set_params", "euclidean_ball needs radius"))?,
            },
            SetKind::Simplex => ConstraintSet::Simplex,
        };
        let stray = match self.set_kind {
            SetKind::Box => p.radius.is_some(),
            SetKind::EuclideanBall => p.lo.is_some() || p.hi.is_some(),
            SetKind::Simplex => p.lo.is_some() || p.hi.is_some() || p.radius.is_some(),
        };
        if stray {
            return Err(Error::config("set_params", "parameter does not apply to this set_kind"));
        }
        set.validate()?;
        Ok(set)
    }

    fn map(&self) -> Result<MirrorMap> {
        match self.method {
            Method::DscmdN => {
                if self.proximal_psi.is_some() {
                    return Err(Error::config("proximal_psi", "applies to dscda_n; dscmd_n uses mirror_map"));
                }
                map_from(self.mirror_map.unwrap_or(MapName::EuclideanHalfSqNorm), self.p_norm)
            }
            Method::DscdaN => {
                if self.mirror_map.is_some() {
                    return Err(Error::config("mirror_map", "applies to dscmd_n; dscda_n uses proximal_psi"));
                }
                map_from(self.proximal_psi.unwrap_or(MapName::EuclideanHalfSqNorm), self.p_norm)
            }
        }
    }

    /// Range checks that name the offending key.
    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 2 {
            return Err(Error::config("n_agents", format!("need at least 2 agents, got {}", self.n_agents)));
        }
        if self.window_b < 1 {
            return Err(Error::config("window_B", "admissible range is B >= 1, got 0"));
        }
        let th = self.theta();
        in_range("theta", th, th > 0.0 && th <= 1.0 / self.n_agents as f64, "(0, 1/n_agents]")?;
        in_range("noise_kappa2", self.noise_kappa2, self.noise_kappa2 > 0.0 && self.noise_kappa2 <= 1.0, "(0,1]")?;
        in_range("kappa1", self.kappa1, self.kappa1 > 0.0 && self.kappa1 < 1.0, "(0,1)")?;
        in_range("noise_nu", self.noise_nu, self.noise_nu >= 0.0 && self.noise_nu.is_finite(), "[0, inf)")?;
        in_range(
            "grad_noise_sigma",
            self.grad_noise_sigma,
            self.grad_noise_sigma >= 0.0 && self.grad_noise_sigma.is_finite(),
            "[0, inf)",
        )?;
        in_range("lambda1", self.lambda1, self.lambda1 >= 0.0 && self.lambda1.is_finite(), "[0, inf)")?;
        in_range("lambda2", self.lambda2, self.lambda2 >= 0.0 && self.lambda2.is_finite(), "[0, inf)")?;
        if let Some(d) = self.delta {
            in_range("delta", d, d > 0.0 && d <= 1.0, "(0,1]")?;
        }
        if let Some(p) = self.p_norm {
            in_range("p_norm", p, p > 1.0 && p <= 2.0, "(1,2]")?;
        }
        if self.dim == 0 {
            return Err(Error::config("dim", "admissible range is dim >= 1, got 0"));
        }
        if self.trials_m == 0 {
            return Err(Error::config("trials_M", "admissible range is M >= 1, got 0"));
        }
        if self.checkpoints.spacing != "log" {
            return Err(Error::config("checkpoints", format!("only log spacing is supported, got {}", self.checkpoints.spacing)));
        }
        if self.checkpoints.count < 2 || self.checkpoints.per_decade == 0 {
            return Err(Error::config("checkpoints", "need count >= 2 and per_decade >= 1"));
        }
        if let Some((lo, hi)) = self.fit_window {
            if !(lo >= 1 && lo < hi) {
                return Err(Error::config("fit_window", format!("need 1 <= lo < hi, got ({lo}, {hi})")));
            }
        }
        match (self.problem_variant, self.regularizer_local, self.regularizer_global) {
            (Variant::Problem1, _, g) if g != RegKind::Zero => {
                return Err(Error::config("regularizer_global", "problem1 carries local regularizers only"))
            }
            (Variant::Problem2, l, _) if l != RegKind::Zero => {
                return Err(Error::config("regularizer_local", "problem2 carries a global regularizer only"))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn resolve(&self) -> Result<Resolved> {
        self.validate()?;
        let set = self.set()?;
        let map = self.map()?;
        map.check_set(&set)
            .map_err(|e| Error::config(if self.method == Method::DscmdN { "mirror_map" } else { "proximal_psi" }, e.to_string()))?;
        let reg_kind = match self.problem_variant {
            Variant::Problem1 => self.regularizer_local,
            Variant::Problem2 => self.regularizer_global,
        };
        let regularizer = Regularizer::new(reg_kind, self.lambda1, self.lambda2);
        let problem = ProblemSpec {
            variant: self.problem_variant,
            objective_kind: self.objective_kind,
            n_agents: self.n_agents,
            dim: self.dim,
            rows_per_agent: self.rows_per_agent,
            data_seed: self.data_seed,
            set,
            regularizer,
        }
        .build()?;
        problem.validate()?;
        let topology = generate_schedule(self.n_agents, self.window_b, self.theta(), self.topology_kind, self.topology_seed)?;
        let noise = LinkNoiseSampler {
            nu: self.noise_nu,
            dist: if self.noise_nu == 0.0 { NoiseDist::Zero } else { self.noise_dist },
            zero_mean: self.noise_zero_mean,
            seed: self.noise_seed,
        };
        let oracle = StochasticOracle {
            sigma: self.grad_noise_sigma,
            bounded: self.grad_bounded,
            seed: self.master_seed,
        };
        let query_radius = set.max_norm(self.dim)
            + match self.method {
                Method::DscmdN => noise.radius(),
                Method::DscdaN => 0.0,
            };
        let g_f_exact = problem.exact_g_f(query_radius);
        let g_f = oracle.g_bound(g_f_exact, self.dim);
        let init = match &self.init_override {
            Some(x) => x.clone(),
            None => vec![set.center(self.dim); self.n_agents],
        };
        let reference = solve_reference(&problem, self.data_seed)?;
        let checkpoints = {
            let g = checkpoint_grid(self.horizon_t, self.checkpoints.per_decade, self.checkpoints.count);
            g.into_iter().collect::<Vec<_>>()
        };
        let sim = Simulation {
            method: self.method,
            horizon: self.horizon_t,
            topology,
            noise,
            decay: NoiseDecay { kappa2: self.noise_kappa2 },
            steps: StepsizeSchedule { kappa1: self.kappa1 },
            problem,
            map,
            oracle,
            g_f,
            f_star: reference.f_star,
            init,
            checkpoints: checkpoints.clone(),
            track_running_min: self.track_running_min,
            master_seed: self.master_seed,
        };
        sim.validate()?;
        let psi_x_star = match self.method {
            Method::DscdaN => map.prox_value(&reference.x_star)?,
            Method::DscmdN => 0.0,
        };
        let constants = BoundConstants::new(BoundInputs {
            n: self.n_agents,
            b: self.window_b,
            theta: self.theta(),
            g_f,
            g_chi: sim.problem.g_chi(),
            g_eta: sim.problem.g_eta(),
            sigma_phi: map.sigma,
            sigma_psi: map.sigma,
            l_phi: map.lipschitz,
            nu: self.noise_nu,
            d_x: set.diameter(self.dim),
            d2_phi_x: map.bregman_diameter_sq(&set, self.dim),
            psi_x_star,
            x0_norm: sim.init.iter().map(|x| norm(x)).fold(0.0, f64::max),
        })?;
        let mut config = self.clone();
        config.theta = Some(self.theta());
        let derived = Derived {
            theta: self.theta(),
            g_f_exact,
            g_f,
            query_radius,
            f_star: reference.f_star,
            x_star: reference.x_star.clone(),
            reference_gap: reference.gap,
            checkpoints,
            constants,
        };
        Ok(Resolved {
            config,
            sim,
            reference,
            constants,
            derived,
        })
    }
}

/// Best-effort key name from a serde error message.
fn json_key(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    for marker in ["unknown field `", "missing field `"] {
        if let Some(rest) = msg.split(marker).nth(1) {
            if let Some(k) = rest.split('`').next() {
                return k.to_string();
            }
        }
    }
    "<config>".into()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "n_agents": 3, "problem_variant": "problem1", "objective_kind": "l1_regression",
        "dim": 2, "method": "dscmd_n", "horizon_T": 10,
        "set_kind": "box", "set_params": {"lo": -1, "hi": 1}
    }"#;

    #[test]
    fn minimal_config_resolves() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        let r = c.resolve().unwrap();
        assert_eq!(r.sim.init, vec![vec![0.0, 0.0]; 3]);
        assert_eq!(r.derived.theta, 0.5 / 3.0);
        assert_eq!(*r.derived.checkpoints.last().unwrap(), 10);
        assert!(r.derived.g_f > 0.0);
    }

    fn with(key: &str, value: serde_json::Value) -> Result<Resolved> {
        let mut v: serde_json::Value = serde_json::from_str(MINIMAL).unwrap();
        v[key] = value;
        ExperimentConfig::from_json(&v.to_string())?.resolve()
    }

    fn key_of(r: Result<Resolved>) -> String {
        match r {
            Err(Error::InvalidConfig { key, .. }) => key,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_names_key_and_range() {
        let err = with("noise_kappa2", 1.5.into()).unwrap_err().to_string();
        assert!(err.contains("noise_kappa2") && err.contains("(0,1]"), "{err}");
        assert_eq!(key_of(with("kappa1", 1.0.into())), "kappa1");
        assert_eq!(key_of(with("theta", 0.9.into())), "theta");
        assert_eq!(key_of(with("bogus", 1.into())), "bogus");
        assert_eq!(key_of(with("mirror_map", "neg_entropy".into())), "mirror_map");
        assert_eq!(key_of(with("regularizer_global", "l1".into())), "regularizer_global");
        assert_eq!(key_of(with("set_params", serde_json::json!({"radius": 1}))), "set_params");
    }

    #[test]
    fn round_trips_through_json() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        let back = ExperimentConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(c, back);
    }
}
