//! Turns trial ensembles into verdicts: Monte-Carlo expectation curves,
//! closed-form bounds for both methods, log-log rate fits, and coverage checks.

use serde::{Deserialize, Serialize};

use crate::algorithms::{Method, RunTrace, StepsizeSchedule};
use crate::error::{Error, Result};
use crate::network::mixing_constants;
use crate::noise::NoiseDecay;

/// Problem, geometry and network quantities the bounds are built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub n: usize,
    pub b: usize,
    pub theta: f64,
    pub g_f: f64,
    pub g_chi: f64,
    pub g_eta: f64,
    pub sigma_phi: f64,
    pub sigma_psi: f64,
    pub l_phi: f64,
    pub nu: f64,
    pub d_x: f64,
    pub d2_phi_x: f64,
    pub psi_x_star: f64,
    /// `max_j ||x_j^0||`
    pub x0_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    #[serde(rename = "C3")]
    pub c3: f64,
    #[serde(rename = "C4")]
    pub c4: f64,
    #[serde(rename = "C5")]
    pub c5: f64,
    #[serde(rename = "C6")]
    pub c6: f64,
    #[serde(rename = "Theta")]
    pub theta_big: f64,
    pub gamma: f64,
    #[serde(rename = "G_f")]
    pub g_f: f64,
    #[serde(rename = "G_chi")]
    pub g_chi: f64,
    #[serde(rename = "G_eta")]
    pub g_eta: f64,
    #[serde(rename = "sigma_Phi")]
    pub sigma_phi: f64,
    #[serde(rename = "sigma_Psi")]
    pub sigma_psi: f64,
    #[serde(rename = "L_Phi")]
    pub l_phi: f64,
    pub nu: f64,
    #[serde(rename = "D_X")]
    pub d_x: f64,
    #[serde(rename = "D2_Phi_X")]
    pub d2_phi_x: f64,
    #[serde(rename = "Psi_x_star")]
    pub psi_x_star: f64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "B")]
    pub b: usize,
    pub theta: f64,
    pub x0_norm: f64,
}

impl BoundConstants {
    pub fn new(inp: BoundInputs) -> Result<Self> {
        let mc = mixing_constants(inp.n, inp.theta, inp.b)?;
        let n = inp.n as f64;
        let k = 2.0 * n * mc.theta_big / (1.0 - mc.gamma);
        let a = (n + 1.0) * inp.g_f + n * inp.g_chi;
        let sig = inp.sigma_phi;
        let sq_nu = inp.nu.sqrt();
        Ok(BoundConstants {
            c1: k * a * inp.x0_norm,
            c2: n * inp.d2_phi_x,
            c3: ((4.0 * n + n * k) * a + n * inp.g_chi) * (inp.g_f + inp.g_chi) / sig + n * inp.g_f * inp.g_f / (2.0 * sig),
            c4: (4.0 * n + n * k) * a * n * sq_nu + (inp.g_f + inp.g_chi) * n * n * sq_nu,
            c5: (2.0 / sig).sqrt() * inp.d2_phi_x.sqrt() * inp.l_phi * n * sq_nu,
            c6: n * inp.l_phi * inp.nu,
            theta_big: mc.theta_big,
            gamma: mc.gamma,
            g_f: inp.g_f,
            g_chi: inp.g_chi,
            g_eta: inp.g_eta,
            sigma_phi: inp.sigma_phi,
            sigma_psi: inp.sigma_psi,
            l_phi: inp.l_phi,
            nu: inp.nu,
            d_x: inp.d_x,
            d2_phi_x: inp.d2_phi_x,
            psi_x_star: inp.psi_x_star,
            n: inp.n,
            b: inp.b,
            theta: inp.theta,
            x0_norm: inp.x0_norm,
        })
    }

    fn nf(&self) -> f64 {
        self.n as f64
    }

    /// `2 N Theta / (1 - gamma)`
    fn k_primal(&self) -> f64 {
        2.0 * self.nf() * self.theta_big / (1.0 - self.gamma)
    }

    /// `(3 G_f + G_eta) / sigma_Psi`
    fn a_dual(&self) -> f64 {
        (3.0 * self.g_f + self.g_eta) / self.sigma_psi
    }

    /// `(N Theta/(1-gamma) + 2) G_f`
    fn dual_lead(&self) -> f64 {
        (self.nf() * self.theta_big / (1.0 - self.gamma) + 2.0) * self.g_f
    }

    /// `Theta N^2 sqrt(nu) / (1 - gamma)`
    fn dual_noise(&self) -> f64 {
        self.theta_big * self.nf() * self.nf() * self.nu.sqrt() / (1.0 - self.gamma)
    }
}

fn check_kappas(kappa1: f64, kappa2: f64) -> Result<()> {
    if !(kappa1 > 0.0 && kappa1 < 1.0) || !(kappa2 > 0.0 && kappa2 <= 1.0) {
        return Err(Error::ExcludedExponent(format!(
            "need kappa1 in (0,1) and kappa2 in (0,1], got ({kappa1}, {kappa2})"
        )));
    }
    Ok(())
}

const EXPONENT_EPS: f64 = 1e-12;

fn excluded(lhs: f64, what: &str) -> Result<()> {
    if (lhs - 1.0).abs() < EXPONENT_EPS {
        return Err(Error::ExcludedExponent(format!("{what} = 1")));
    }
    Ok(())
}

/// Closed-form expected-error bound for the mirror-descent method under
/// `alpha_t = (t+1)^-kappa1`, `r_t = (t+1)^-kappa2`.
pub fn theorem1_bound(c: &BoundConstants, kappa1: f64, kappa2: f64, t: usize) -> Result<f64> {
    check_kappas(kappa1, kappa2)?;
    let tf = t as f64;
    let (k1, k2) = (kappa1, kappa2);
    if k2 < 1.0 {
        let e = 2.0 * k2 - k1;
        excluded(e, "2 kappa2 - kappa1")?;
        let d = k2 - k1;
        Ok((c.c1 + ((1.0 - 2.0 * e) / (1.0 - e)).abs() * c.c6) / tf
            + 2f64.powf(k1) * c.c2 / tf.powf(1.0 - k1)
            + 2f64.powf(1.0 - k1) * c.c3 / (1.0 - k1) / tf.powf(k1)
            + 2f64.powf(1.0 - k2) * c.c4 / (1.0 - k2) / tf.powf(k2)
            + 2f64.powf(1.0 - d) * c.c5 / (1.0 - d) / tf.powf(d)
            + c.c6 / (1.0 - e).abs() / tf.powf(e))
    } else {
        Ok((c.c1 + (2.0 - k1) / (1.0 - k1) * c.c6) / tf
            + (2f64.powf(k1) * c.c2 + 2f64.powf(k1) * c.c5 / k1) / tf.powf(1.0 - k1)
            + 2f64.powf(1.0 - k1) * c.c3 / (1.0 - k1) / tf.powf(k1)
            + 4.0 * c.c4 * tf.ln() / tf)
    }
}

/// Combined constant `C` of the `3C/sqrt(T)` rate at `kappa = (1/2, 1)`.
pub fn corollary1_constant(c: &BoundConstants) -> f64 {
    let s2 = 2f64.sqrt();
    (c.c1 + 3.0 * c.c6)
        .max(4.0 * c.c4)
        .max(s2 * c.c2 + 2.0 * s2 * c.c3 + 2.0 * s2 * c.c5)
}

/// High-probability constant `C_delta` of the `3 C_delta / sqrt(T)` rate.
pub fn corollary2_constant(c: &BoundConstants, delta: f64) -> f64 {
    let s2 = 2f64.sqrt();
    (c.c1 + 3.0 * c.c6).max(4.0 * c.c4).max(
        s2 * c.c2 + 2.0 * s2 * c.c3 + 2.0 * s2 * c.c5 + 2.0 * s2 * c.g_f * c.d_x * c.nf() * (1.0 / delta).ln().sqrt(),
    )
}

/// High-probability bound for the mirror-descent method: the closed-form
/// expected bound plus the martingale deviation term.
pub fn theorem2_bound(c: &BoundConstants, kappa1: f64, kappa2: f64, t: usize, delta: f64) -> Result<f64> {
    let base = theorem1_bound(c, kappa1, kappa2, t)?;
    Ok(base + 2.0 * 2f64.sqrt() * c.g_f * c.d_x * c.nf() * ((1.0 / delta).ln() / t as f64).sqrt())
}

/// Closed-form expected-error bound for the dual-averaging method.
pub fn theorem3_bound(c: &BoundConstants, kappa1: f64, kappa2: f64, t: usize) -> Result<f64> {
    check_kappas(kappa1, kappa2)?;
    let tf = t as f64;
    let (k1, k2) = (kappa1, kappa2);
    let a = c.a_dual();
    let n = c.nf();
    let sq_nu = c.nu.sqrt();
    let g2 = c.g_f * c.g_f;
    if k2 < 1.0 {
        excluded(k1 + k2, "kappa1 + kappa2")?;
        excluded(k1 + 2.0 * k2, "kappa1 + 2 kappa2")?;
        let km = k1.min(k2);
        let s1 = (1.0 - (k1 + k2)).abs();
        let s2 = (1.0 - (k1 + 2.0 * k2)).abs();
        Ok((a * c.dual_lead() + g2) * 2f64.powf(1.0 - k1) / (1.0 - k1) / tf.powf(k1)
            + a * c.dual_noise() * 2f64.powf(1.0 - km) / (1.0 - km) / tf.powf(km)
            + a * 2.0 * n * sq_nu / s1 / tf.powf(k1 + k2)
            + c.psi_x_star * 2f64.powf(k1) / tf.powf(1.0 - k1)
            + n * c.nu / s2 / tf.powf(k1 + 2.0 * k2)
            + sq_nu * c.d_x * 2f64.powf(1.0 - k2) / (1.0 - k2) / tf.powf(k2)
            + (a * 2.0 * n * sq_nu * (k1 + k2) / s1 + n * c.nu * (k1 + 2.0 * k2) / s2) / tf)
    } else {
        Ok((a * (c.dual_lead() + c.dual_noise()) + g2) * 2f64.powf(1.0 - k1) / (1.0 - k1) / tf.powf(k1)
            + a * 2.0 * n * sq_nu / k1 / tf.powf(k1 + 1.0)
            + c.psi_x_star * 2f64.powf(k1) / tf.powf(1.0 - k1)
            + n * c.nu / (k1 + 1.0) / tf.powf(k1 + 2.0)
            + 2.0 * sq_nu * c.d_x * tf.ln() / tf
            + (a * 2.0 * n * sq_nu * (k1 + 1.0) / k1 + n * c.nu * (k1 + 2.0) / (k1 + 1.0)) / tf)
    }
}

/// Constant `C_bar'` of the `6 C_bar' / sqrt(T)` rate at `kappa1 = 1/2`,
/// `kappa2 in (1/2, 1]`.
pub fn corollary3_constant(c: &BoundConstants, kappa2: f64) -> Result<f64> {
    if !(kappa2 > 0.5 && kappa2 <= 1.0) {
        return Err(Error::ExcludedExponent(format!("need kappa2 in (1/2,1], got {kappa2}")));
    }
    let a = c.a_dual();
    let n = c.nf();
    let sq_nu = c.nu.sqrt();
    let s2 = 2f64.sqrt();
    let c_k2 = if kappa2 < 1.0 {
        sq_nu * c.d_x * 2f64.powf(1.0 - kappa2) / (1.0 - kappa2)
    } else {
        2.0 * sq_nu * c.d_x
    };
    Ok([
        (a * (c.dual_lead() + c.dual_noise()) + c.g_f * c.g_f) * 2.0 * s2,
        a * 2.0 * n * sq_nu / (kappa2 - 0.5),
        c.psi_x_star * s2,
        n * c.nu / (2.0 * kappa2 - 0.5),
        c_k2,
        a * 2.0 * n * sq_nu * (kappa2 + 0.5) / (kappa2 - 0.5) + n * c.nu * (2.0 * kappa2 + 0.5) / (2.0 * kappa2 - 0.5),
    ]
    .into_iter()
    .fold(0.0, f64::max))
}

/// High-probability regime bound for the dual-averaging method at
/// `kappa1 = 1/2`: `3 C1/T^kappa2`, `4 C2 sqrt(ln T)/sqrt(T)` or `2 C3/sqrt(T)`.
pub fn corollary4_bound(c: &BoundConstants, kappa2: f64, t: usize, delta: f64) -> Result<f64> {
    check_kappas(0.5, kappa2)?;
    let tf = t as f64;
    let a = c.a_dual();
    let n = c.nf();
    let sq_nu = c.nu.sqrt();
    let s2 = 2f64.sqrt();
    let lg = (2.0 / delta).ln().sqrt();
    let g2 = c.g_f * c.g_f;
    let tail = c.psi_x_star * s2 + 2.0 * s2 * c.g_f * c.d_x * lg;
    if kappa2 < 0.5 {
        if (2.0 * kappa2 - 0.5).abs() < EXPONENT_EPS {
            return Err(Error::ExcludedExponent("kappa1 + 2 kappa2 = 1".into()));
        }
        let c1 = ((a * c.dual_lead() + g2) * 2.0 * s2 + tail)
            .max(
                a * c.dual_noise() * 2f64.powf(1.0 - kappa2) / (1.0 - kappa2)
                    + n * sq_nu * c.d_x * 2f64.powf(1.0 - kappa2) * lg,
            )
            .max(a * 2.0 * n * sq_nu / (0.5 - kappa2) + n * c.nu / (0.5 - 2.0 * kappa2).abs());
        Ok(3.0 * c1 / tf.powf(kappa2))
    } else if kappa2 == 0.5 {
        let c2 = ((a * (c.dual_lead() + c.dual_noise()) + g2) * 2.0 * s2 + tail)
            .max(3.0 * n * c.nu)
            .max(a * 4.0 * n * sq_nu)
            .max(2.0 * n * sq_nu * c.d_x * lg);
        Ok(4.0 * c2 * tf.ln().sqrt() / tf.sqrt())
    } else {
        let c3 = ((a * (c.dual_lead() + c.dual_noise()) + g2) * 2.0 * s2
            + tail
            + s2 * n * sq_nu * c.d_x / (2.0 * kappa2 - 1.0).sqrt() * lg)
            .max(
                a * 2.0 * n * sq_nu * (kappa2 + 0.5) / (kappa2 - 0.5)
                    + n * c.nu * (2.0 * kappa2 + 0.5) / (2.0 * kappa2 - 0.5),
            );
        Ok(2.0 * c3 / tf.sqrt())
    }
}

/// Running sums over `t = 0..=T`, emitted at each requested horizon.
struct Sweep<'a> {
    steps: &'a StepsizeSchedule,
    decay: &'a NoiseDecay,
}

impl Sweep<'_> {
    /// Calls `emit(T, state)` for each `T` in the sorted `grid`, where
    /// `state` has accumulated terms `t = 0..=T` via `step(t, state)`.
    fn run<S: Default, F: FnMut(usize, f64, f64, &mut S), E: FnMut(usize, &S) -> f64>(
        &self,
        grid: &[usize],
        mut step: F,
        mut emit: E,
    ) -> Vec<f64> {
        let mut s = S::default();
        let mut out = Vec::with_capacity(grid.len());
        let mut next = 0;
        let last = grid.iter().copied().max().unwrap_or(0);
        for t in 0..=last {
            step(t, self.steps.alpha(t), self.decay.r(t), &mut s);
            while next < grid.len() && grid[next] == t {
                out.push(emit(t, &s));
                next += 1;
            }
        }
        out
    }
}

#[derive(Default)]
struct PrimalSums {
    alpha: f64,
    r: f64,
    r_over_alpha: f64,
    r2_over_alpha: f64,
}

/// Right-hand side of the mirror-descent expected bound with the sums over
/// `t = 0..=T` evaluated exactly, at each `T` of a sorted grid (`T >= 1`).
pub fn theorem1_rhs(c: &BoundConstants, steps: &StepsizeSchedule, decay: &NoiseDecay, grid: &[usize]) -> Vec<f64> {
    Sweep { steps, decay }.run(
        grid,
        |_, a, r, s: &mut PrimalSums| {
            s.alpha += a;
            s.r += r;
            s.r_over_alpha += r / a;
            s.r2_over_alpha += r * r / a;
        },
        |t, s| {
            let tf = t as f64;
            (c.c1 + c.c2 / steps.alpha(t) + c.c3 * s.alpha + c.c4 * s.r + c.c5 * s.r_over_alpha + c.c6 * s.r2_over_alpha) / tf
        },
    )
}

/// High-probability version of [`theorem1_rhs`].
pub fn theorem2_rhs(c: &BoundConstants, steps: &StepsizeSchedule, decay: &NoiseDecay, grid: &[usize], delta: f64) -> Vec<f64> {
    theorem1_rhs(c, steps, decay, grid)
        .into_iter()
        .zip(grid)
        .map(|(b, &t)| b + 2.0 * 2f64.sqrt() * c.g_f * c.d_x * c.nf() * ((1.0 / delta).ln() / t as f64).sqrt())
        .collect()
}

#[derive(Default)]
struct DualSums {
    /// `sum_{t=0}^T alpha_t`
    alpha: f64,
    /// `S_t = sum_{s=1}^{t-1} r_{s-1} gamma^{t-s-1}` at the current `t`
    geo: f64,
    /// `sum_{t=1}^T alpha_t S_t`
    alpha_geo: f64,
    /// `sum_{t=1}^T alpha_t r_{t-1}`
    alpha_rprev: f64,
    /// `sum_{t=0}^T alpha_t r_t^2`
    alpha_r2: f64,
    /// `sum_{t=1}^T r_t`
    r: f64,
    /// `sum_{t=1}^T r_t^2`
    r2: f64,
    r_prev: f64,
}

fn dual_sweep(c: &BoundConstants, steps: &StepsizeSchedule, decay: &NoiseDecay, grid: &[usize]) -> Vec<(usize, DualSums)> {
    let mut out = Vec::new();
    let mut s = DualSums::default();
    let last = grid.iter().copied().max().unwrap_or(0);
    let mut next = 0;
    for t in 0..=last {
        let a = steps.alpha(t);
        let r = decay.r(t);
        s.alpha += a;
        s.alpha_r2 += a * r * r;
        if t >= 1 {
            if t >= 2 {
                s.geo = c.gamma * s.geo + decay.r(t - 2);
            }
            s.alpha_geo += a * s.geo;
            s.alpha_rprev += a * s.r_prev;
            s.r += r;
            s.r2 += r * r;
        }
        s.r_prev = r;
        while next < grid.len() && grid[next] == t {
            out.push((
                t,
                DualSums {
                    alpha: s.alpha,
                    geo: s.geo,
                    alpha_geo: s.alpha_geo,
                    alpha_rprev: s.alpha_rprev,
                    alpha_r2: s.alpha_r2,
                    r: s.r,
                    r2: s.r2,
                    r_prev: s.r_prev,
                },
            ));
            next += 1;
        }
    }
    out
}

fn dual_common(c: &BoundConstants, steps: &StepsizeSchedule, t: usize, s: &DualSums) -> f64 {
    let a = c.a_dual();
    let n = c.nf();
    let sq_nu = c.nu.sqrt();
    let tf = t as f64;
    ((a * c.dual_lead() + c.g_f * c.g_f) * s.alpha
        + a * c.theta_big * n * n * sq_nu * s.alpha_geo
        + a * 2.0 * n * sq_nu * s.alpha_rprev
        + c.psi_x_star / steps.alpha(t)
        + n * c.nu * s.alpha_r2)
        / tf
}

/// Right-hand side of the dual-averaging expected bound with exact sums.
pub fn theorem3_rhs(c: &BoundConstants, steps: &StepsizeSchedule, decay: &NoiseDecay, grid: &[usize]) -> Vec<f64> {
    dual_sweep(c, steps, decay, grid)
        .into_iter()
        .map(|(t, s)| dual_common(c, steps, t, &s) + c.nu.sqrt() * c.d_x * s.r / t as f64)
        .collect()
}

/// Right-hand side of the dual-averaging high-probability bound with exact sums.
pub fn theorem4_rhs(c: &BoundConstants, steps: &StepsizeSchedule, decay: &NoiseDecay, grid: &[usize], delta: f64) -> Vec<f64> {
    let lg = (2.0 / delta).ln().sqrt();
    dual_sweep(c, steps, decay, grid)
        .into_iter()
        .map(|(t, s)| {
            let rt = (t as f64).sqrt();
            dual_common(c, steps, t, &s)
                + 2.0 * 2f64.sqrt() * c.g_f * c.d_x * lg / rt
                + 2f64.sqrt() * c.nf() * c.nu.sqrt() * c.d_x * s.r2.sqrt() * lg / rt
        })
        .collect()
}

/// Bound on `E ||x_i^{t+1} - y_i^t||`.
pub fn lemma4_bound(c: &BoundConstants, alpha: f64) -> f64 {
    (c.g_f + c.g_chi) / c.sigma_phi * alpha
}

/// Bound on `sum_{t=1}^T sum_i E ||x_i^t - x_j^t||` at each `T` of a sorted grid.
pub fn lemma5_rhs(c: &BoundConstants, steps: &StepsizeSchedule, decay: &NoiseDecay, grid: &[usize]) -> Vec<f64> {
    let n = c.nf();
    let k = c.k_primal();
    let coef = (c.g_f + c.g_chi) / c.sigma_phi;
    let sq_nu = c.nu.sqrt();
    Sweep { steps, decay }.run(
        grid,
        |_, a, r, s: &mut f64| *s += coef * a + n * sq_nu * r,
        |_, s| k * c.x0_norm + (4.0 * n + n * k) * s,
    )
}

/// Bound on `E ||z_i^t - z_bar^t||` for `t >= 1`, with the geometric noise
/// sum taken over `s = 0..=t-2`.
pub fn lemma10_rhs(c: &BoundConstants, decay: &NoiseDecay, grid: &[usize]) -> Vec<f64> {
    let n = c.nf();
    let sq_nu = c.nu.sqrt();
    let last = grid.iter().copied().max().unwrap_or(0);
    let mut out = Vec::with_capacity(grid.len());
    let mut geo = 0.0;
    let mut next = 0;
    for t in 0..=last {
        if t >= 2 {
            geo = c.gamma * geo + decay.r(t - 2);
        }
        while next < grid.len() && grid[next] == t {
            out.push(if t == 0 {
                0.0
            } else {
                (n * c.theta_big / (1.0 - c.gamma) + 2.0) * c.g_f
                    + c.theta_big * n * n * sq_nu * geo
                    + 2.0 * n * sq_nu * decay.r(t - 1)
            });
            next += 1;
        }
    }
    out
}

/// `M` traces of one configuration.
#[derive(Debug, Clone)]
pub struct TrialEnsemble {
    pub traces: Vec<RunTrace>,
    pub grid: Vec<usize>,
}

impl TrialEnsemble {
    pub fn new(traces: Vec<RunTrace>) -> Result<Self> {
        let first = traces
            .first()
            .ok_or_else(|| Error::ConfigMismatch("an ensemble needs at least one trace".into()))?;
        let grid: Vec<usize> = first.checkpoints.iter().map(|c| c.t).collect();
        for tr in &traces {
            if tr.checkpoints.len() != grid.len() || tr.checkpoints.iter().zip(&grid).any(|(c, &t)| c.t != t) {
                return Err(Error::ConfigMismatch("traces have different checkpoint grids".into()));
            }
        }
        Ok(TrialEnsemble { traces, grid })
    }

    pub fn m(&self) -> usize {
        self.traces.len()
    }

    pub fn n_agents(&self) -> usize {
        self.traces[0].checkpoints[0].errors.len()
    }

    fn stat<F: Fn(&RunTrace, usize) -> f64>(&self, f: F) -> Vec<CurvePoint> {
        let m = self.m() as f64;
        self.grid
            .iter()
            .enumerate()
            .map(|(k, &t)| {
                let vals: Vec<f64> = self.traces.iter().map(|tr| f(tr, k)).collect();
                let mean = vals.iter().sum::<f64>() / m;
                let stderr = (self.m() >= 2).then(|| {
                    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
                    (var / m).sqrt()
                });
                CurvePoint { t, mean, stderr }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: usize,
    pub mean: f64,
    /// `None` when a single trial leaves it undefined.
    pub stderr: Option<f64>,
}

/// Per-checkpoint trial mean and standard error of `F(x_hat_agent^T) - f_star`.
pub fn expected_error_curve(ens: &TrialEnsemble, agent: usize) -> Vec<CurvePoint> {
    ens.stat(|tr, k| tr.checkpoints[k].errors[agent])
}

/// Trial mean of the agent-averaged error.
pub fn network_error_curve(ens: &TrialEnsemble) -> Vec<CurvePoint> {
    ens.stat(|tr, k| {
        let e = &tr.checkpoints[k].errors;
        e.iter().sum::<f64>() / e.len() as f64
    })
}

/// Trial mean of the largest agent error.
pub fn worst_agent_error_curve(ens: &TrialEnsemble) -> Vec<CurvePoint> {
    ens.stat(|tr, k| tr.checkpoints[k].errors.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub fit_window: (usize, usize),
    pub r_squared: f64,
    pub points: usize,
}

/// Least-squares line through `(ln T, ln mean)` for checkpoints with
/// `lo <= T <= hi`.
pub fn fit_rate(curve: &[CurvePoint], window: (usize, usize)) -> Result<RateFit> {
    let pts: Vec<&CurvePoint> = curve.iter().filter(|p| p.t >= window.0 && p.t <= window.1 && p.t > 0).collect();
    if pts.len() < 4 {
        return Err(Error::DegenerateFit(format!("{} checkpoints in window, need at least 4", pts.len())));
    }
    if let Some(p) = pts.iter().find(|p| !(p.mean > 0.0)) {
        return Err(Error::DegenerateFit(format!("non-positive mean {} at T={}", p.mean, p.t)));
    }
    let xs: Vec<f64> = pts.iter().map(|p| (p.t as f64).ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.mean.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    Ok(RateFit {
        slope,
        intercept,
        fit_window: window,
        r_squared,
        points: pts.len(),
    })
}

/// What the ensemble was built with, for the high-probability prerequisites.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleSetup {
    pub method: Method,
    pub bounded_gradients: bool,
    pub noise_bounded: bool,
    pub noise_zero_mean: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighProbReport {
    pub delta: f64,
    pub horizon: usize,
    pub bound: f64,
    pub trials: usize,
    pub below: usize,
    pub fraction: f64,
    pub pass: bool,
}

pub const HIGH_PROB_MIN_TRIALS: usize = 50;

/// Fraction of trials whose final worst-agent error lies below
/// `bound_fn(delta, T)`; passes when the fraction reaches `1 - delta`.
pub fn high_prob_check(
    ens: &TrialEnsemble,
    setup: EnsembleSetup,
    delta: f64,
    bound_fn: impl Fn(f64, usize) -> f64,
) -> Result<HighProbReport> {
    if !setup.bounded_gradients {
        return Err(Error::ConfigMismatch("high-probability bounds need grad_bounded = true".into()));
    }
    if !setup.noise_bounded {
        return Err(Error::ConfigMismatch("high-probability bounds need bounded link noise".into()));
    }
    if setup.method == Method::DscdaN && !setup.noise_zero_mean {
        return Err(Error::ConfigMismatch(
            "dual-averaging high-probability bound needs zero-mean link noise".into(),
        ));
    }
    if ens.m() < HIGH_PROB_MIN_TRIALS {
        return Err(Error::ConfigMismatch(format!(
            "need at least {HIGH_PROB_MIN_TRIALS} trials, got {}",
            ens.m()
        )));
    }
    let k = ens.grid.len() - 1;
    let horizon = ens.grid[k];
    let bound = bound_fn(delta, horizon);
    let below = ens
        .traces
        .iter()
        .filter(|tr| tr.checkpoints[k].errors.iter().all(|&e| e <= bound))
        .count();
    let fraction = below as f64 / ens.m() as f64;
    Ok(HighProbReport {
        delta,
        horizon,
        bound,
        trials: ens.m(),
        below,
        fraction,
        pass: fraction >= 1.0 - delta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundedPoint {
    pub t: usize,
    pub measured: f64,
    pub bound: f64,
}

impl BoundedPoint {
    pub fn holds(&self) -> bool {
        self.measured <= self.bound
    }
}

fn agentwise_max_mean(ens: &TrialEnsemble, k: usize, field: impl Fn(&crate::algorithms::Checkpoint) -> &Vec<f64>) -> f64 {
    let m = ens.m() as f64;
    let first = field(&ens.traces[0].checkpoints[k]);
    (0..first.len())
        .map(|j| ens.traces.iter().map(|tr| field(&tr.checkpoints[k])[j]).sum::<f64>() / m)
        .fold(0.0, f64::max)
}

/// Trial-mean disagreement paired with its closed-form bound: summed primal
/// disagreement for mirror descent, dual deviation for dual averaging.
/// Each point reports the worst reference agent.
pub fn disagreement_report(
    ens: &TrialEnsemble,
    method: Method,
    c: &BoundConstants,
    steps: &StepsizeSchedule,
    decay: &NoiseDecay,
) -> Vec<BoundedPoint> {
    let grid: Vec<usize> = ens.grid.iter().copied().filter(|&t| t > 0).collect();
    let bounds = match method {
        Method::DscmdN => lemma5_rhs(c, steps, decay, &grid),
        Method::DscdaN => lemma10_rhs(c, decay, &grid),
    };
    let offset = ens.grid.len() - grid.len();
    grid.iter()
        .zip(bounds)
        .enumerate()
        .map(|(k, (&t, bound))| {
            let measured = match method {
                Method::DscmdN => agentwise_max_mean(ens, k + offset, |cp| &cp.cum_disagreement),
                Method::DscdaN => agentwise_max_mean(ens, k + offset, |cp| &cp.dual_disagreement),
            };
            BoundedPoint { t, measured, bound }
        })
        .collect()
}

/// Trial-mean step norms of the last step before each checkpoint against
/// the step-norm bound (mirror descent only).
pub fn step_norm_report(ens: &TrialEnsemble, c: &BoundConstants, steps: &StepsizeSchedule) -> Vec<BoundedPoint> {
    ens.grid
        .iter()
        .enumerate()
        .filter(|&(_, &t)| t > 0 && !ens.traces[0].checkpoints.is_empty())
        .filter(|&(k, _)| !ens.traces[0].checkpoints[k].step_norms.is_empty())
        .map(|(k, &t)| BoundedPoint {
            t,
            measured: agentwise_max_mean(ens, k, |cp| &cp.step_norms),
            bound: lemma4_bound(c, steps.alpha(t - 1)),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlmostSureReport {
    /// Per checkpoint, the worst agent's `min_{s<=t} F(x^s) - f_star`.
    pub min_error: Vec<(usize, f64)>,
    /// Per checkpoint, the worst agent's `F(x_hat^t) - f_star`.
    pub avg_error: Vec<(usize, f64)>,
    pub min_nonincreasing: bool,
    /// Whether `min_s F(x^s) <= F(x_hat^t)` held at every checkpoint.
    /// Convexity alone does not force this, so it is reported, not assumed.
    pub min_below_average_point: bool,
    pub final_min_below: bool,
    pub final_avg_below: bool,
    pub pass: bool,
}

/// Running-minimum diagnostics of one trace recorded with running-min tracking.
pub fn almost_sure_diagnostics(trace: &RunTrace, min_threshold: f64, avg_threshold: f64) -> Result<AlmostSureReport> {
    let cps: Vec<_> = trace.checkpoints.iter().filter(|c| c.t > 0).collect();
    if cps.is_empty() || cps.iter().any(|c| c.running_min.is_empty()) {
        return Err(Error::ConfigMismatch("trace was recorded without track_running_min".into()));
    }
    let worst = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_error: Vec<(usize, f64)> = cps.iter().map(|c| (c.t, worst(&c.running_min))).collect();
    let avg_error: Vec<(usize, f64)> = cps.iter().map(|c| (c.t, worst(&c.errors))).collect();
    let n = cps[0].running_min.len();
    let min_nonincreasing = (0..n).all(|i| cps.windows(2).all(|w| w[1].running_min[i] <= w[0].running_min[i]));
    let min_below_average_point = cps
        .iter()
        .all(|c| c.running_min.iter().zip(&c.errors).all(|(m, e)| m <= e));
    let final_min_below = min_error.last().unwrap().1 <= min_threshold;
    let final_avg_below = avg_error.last().unwrap().1 <= avg_threshold;
    Ok(AlmostSureReport {
        pass: min_nonincreasing && final_min_below && final_avg_below,
        min_error,
        avg_error,
        min_nonincreasing,
        min_below_average_point,
        final_min_below,
        final_avg_below,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_consts() -> BoundConstants {
        BoundConstants {
            c1: 0.0,
            c2: 0.0,
            c3: 0.0,
            c4: 0.0,
            c5: 0.0,
            c6: 0.0,
            theta_big: 1.0,
            gamma: 0.5,
            g_f: 0.0,
            g_chi: 0.0,
            g_eta: 0.0,
            sigma_phi: 1.0,
            sigma_psi: 1.0,
            l_phi: 1.0,
            nu: 0.0,
            d_x: 0.0,
            d2_phi_x: 0.0,
            psi_x_star: 0.0,
            n: 2,
            b: 1,
            theta: 0.5,
            x0_norm: 0.0,
        }
    }

    fn sample_consts() -> BoundConstants {
        BoundConstants::new(BoundInputs {
            n: 3,
            b: 2,
            theta: 0.2,
            g_f: 2.0,
            g_chi: 0.5,
            g_eta: 0.3,
            sigma_phi: 1.0,
            sigma_psi: 1.0,
            l_phi: 1.0,
            nu: 0.25,
            d_x: 4.0,
            d2_phi_x: 8.0,
            psi_x_star: 1.5,
            x0_norm: 0.7,
        })
        .unwrap()
    }

    #[test]
    fn corollary1_instance_at_t3() {
        let c = BoundConstants {
            c1: 1.0,
            c2: 2.0,
            c3: 3.0,
            c4: 4.0,
            c5: 5.0,
            c6: 6.0,
            ..zero_consts()
        };
        let s2 = 2f64.sqrt();
        let expect = (c.c1 + 3.0 * c.c6) / 3.0
            + 4.0 * c.c4 * 3f64.ln() / 3.0
            + (s2 * c.c2 + 2.0 * s2 * c.c3 + 2.0 * s2 * c.c5) / 3f64.sqrt();
        let got = theorem1_bound(&c, 0.5, 1.0, 3).unwrap();
        assert!((got - expect).abs() <= 1e-12 * expect);
    }

    #[test]
    fn zero_constants_give_zero() {
        let c = zero_consts();
        for t in [1, 10, 1000] {
            assert_eq!(theorem1_bound(&c, 0.5, 1.0, t).unwrap(), 0.0);
            assert_eq!(theorem1_bound(&c, 0.3, 0.8, t).unwrap(), 0.0);
            assert_eq!(theorem3_bound(&c, 0.5, 0.75, t).unwrap(), 0.0);
            assert_eq!(theorem3_bound(&c, 0.5, 1.0, t).unwrap(), 0.0);
        }
    }

    #[test]
    fn corollary_constants_dominate() {
        let c = sample_consts();
        let cc = corollary1_constant(&c);
        for t in 3..2000 {
            assert!(theorem1_bound(&c, 0.5, 1.0, t).unwrap() <= 3.0 * cc / (t as f64).sqrt() * (1.0 + 1e-12));
        }
        for k2 in [0.6, 0.75, 0.9, 1.0] {
            let cb = corollary3_constant(&c, k2).unwrap();
            for t in 2..2000 {
                assert!(theorem3_bound(&c, 0.5, k2, t).unwrap() <= 6.0 * cb / (t as f64).sqrt() * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn excluded_exponents_refused() {
        let c = sample_consts();
        assert!(matches!(theorem1_bound(&c, 0.5, 0.75, 10), Err(Error::ExcludedExponent(_))));
        assert!(theorem1_bound(&c, 0.5, 1.0, 10).is_ok());
        assert!(matches!(theorem3_bound(&c, 0.5, 0.25, 10), Err(Error::ExcludedExponent(_))));
        assert!(matches!(theorem3_bound(&c, 0.3, 0.7, 10), Err(Error::ExcludedExponent(_))));
        assert!(matches!(corollary4_bound(&c, 0.25, 10, 0.1), Err(Error::ExcludedExponent(_))));
        assert!(theorem1_bound(&c, 0.0, 1.0, 10).is_err());
        assert!(theorem3_bound(&c, 0.5, 1.5, 10).is_err());
    }

    #[test]
    fn slow_noise_regime_dominated_by_noise_exponent() {
        let c = sample_consts();
        let k2 = 0.2;
        let a = theorem3_bound(&c, 0.5, k2, 1_000_000).unwrap();
        let b = theorem3_bound(&c, 0.5, k2, 10_000_000).unwrap();
        let slope = (b / a).ln() / 10f64.ln();
        assert!((slope + k2).abs() < 0.05, "slope {slope}");
    }

    #[test]
    fn constants_match_hand_formulas() {
        let c = sample_consts();
        let mc = mixing_constants(3, 0.2, 2).unwrap();
        let k = 6.0 * mc.theta_big / (1.0 - mc.gamma);
        let a = 4.0 * 2.0 + 3.0 * 0.5;
        let near = |x: f64, y: f64| (x - y).abs() <= 1e-12 * y.abs().max(1.0);
        assert!(near(c.c1, k * a * 0.7));
        assert!(near(c.c2, 24.0));
        assert!(near(c.c3, ((12.0 + 3.0 * k) * a + 1.5) * 2.5 + 6.0));
        assert!(near(c.c4, (12.0 + 3.0 * k) * a * 1.5 + 2.5 * 4.5));
        assert!(near(c.c5, 2f64.sqrt() * 8f64.sqrt() * 1.5));
        assert!(near(c.c6, 0.75));
    }

    #[test]
    fn rhs_sums_match_direct_evaluation() {
        let c = sample_consts();
        let steps = StepsizeSchedule { kappa1: 0.5 };
        let decay = NoiseDecay { kappa2: 0.7 };
        let grid = [1, 2, 5, 17];
        let got = theorem1_rhs(&c, &steps, &decay, &grid);
        for (&t, g) in grid.iter().zip(&got) {
            let sum = |f: &dyn Fn(usize) -> f64| (0..=t).map(f).sum::<f64>();
            let a = |s| steps.alpha(s);
            let r = |s| decay.r(s);
            let expect = (c.c1
                + c.c2 / a(t)
                + c.c3 * sum(&|s| a(s))
                + c.c4 * sum(&|s| r(s))
                + c.c5 * sum(&|s| r(s) / a(s))
                + c.c6 * sum(&|s| r(s) * r(s) / a(s)))
                / t as f64;
            assert!((g - expect).abs() <= 1e-12 * expect);
        }
        let got = theorem3_rhs(&c, &steps, &decay, &grid);
        for (&t, g) in grid.iter().zip(&got) {
            let tf = t as f64;
            let a = c.a_dual();
            let n = 3.0;
            let sq = c.nu.sqrt();
            let mut double = 0.0;
            for tt in 1..=t {
                let inner: f64 = (1..tt).map(|s| decay.r(s - 1) * c.gamma.powi((tt - s - 1) as i32)).sum();
                double += steps.alpha(tt) * inner;
            }
            let expect = (a * (n * c.theta_big / (1.0 - c.gamma) + 2.0) * c.g_f + c.g_f * c.g_f)
                * (0..=t).map(|s| steps.alpha(s)).sum::<f64>()
                / tf
                + a * c.theta_big * n * n * sq * double / tf
                + a * 2.0 * n * sq * (1..=t).map(|s| steps.alpha(s) * decay.r(s - 1)).sum::<f64>() / tf
                + c.psi_x_star / (tf * steps.alpha(t))
                + n * c.nu * (0..=t).map(|s| steps.alpha(s) * decay.r(s).powi(2)).sum::<f64>() / tf
                + sq * c.d_x * (1..=t).map(|s| decay.r(s)).sum::<f64>() / tf;
            assert!((g - expect).abs() <= 1e-12 * expect, "{g} vs {expect}");
        }
    }

    #[test]
    fn lemma5_collapses_without_steps_noise_or_offset() {
        let c = BoundConstants {
            g_f: 0.0,
            g_chi: 0.0,
            nu: 0.0,
            x0_norm: 0.0,
            ..sample_consts()
        };
        let v = lemma5_rhs(&c, &StepsizeSchedule { kappa1: 0.5 }, &NoiseDecay { kappa2: 1.0 }, &[1, 10, 100]);
        assert!(v.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn lemma10_small_cases() {
        let c = sample_consts();
        let decay = NoiseDecay { kappa2: 1.0 };
        let v = lemma10_rhs(&c, &decay, &[0, 1, 2, 3]);
        let n = 3.0;
        let sq = 0.5;
        let base = (n * c.theta_big / (1.0 - c.gamma) + 2.0) * c.g_f;
        assert_eq!(v[0], 0.0);
        assert!((v[1] - (base + 2.0 * n * sq * 1.0)).abs() < 1e-9);
        assert!((v[2] - (base + c.theta_big * n * n * sq * 1.0 + 2.0 * n * sq * 0.5)).abs() < 1e-9);
        let geo3 = c.gamma * 1.0 + 0.5;
        assert!((v[3] - (base + c.theta_big * n * n * sq * geo3 + 2.0 * n * sq / 3.0)).abs() < 1e-9);
    }

    fn synthetic(curve: impl Fn(f64) -> f64) -> Vec<CurvePoint> {
        crate::algorithms::checkpoint_grid(100_000, 40, 200)
            .into_iter()
            .filter(|&t| t > 0)
            .map(|t| CurvePoint {
                t,
                mean: curve(t as f64),
                stderr: None,
            })
            .collect()
    }

    #[test]
    fn fit_exact_power_laws() {
        let f = fit_rate(&synthetic(|t| 3.0 / t.sqrt()), (1000, 100_000)).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        let f = fit_rate(&synthetic(|t| 2.0 / t), (1000, 100_000)).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-12);
        assert!((f.intercept - 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn fit_rejects_degenerate_inputs() {
        let mut c = synthetic(|t| 1.0 / t);
        assert!(matches!(fit_rate(&c, (10, 12)), Err(Error::DegenerateFit(_))));
        c[150].mean = 0.0;
        assert!(matches!(fit_rate(&c, (1, 100_000)), Err(Error::DegenerateFit(_))));
    }

    fn trace_with(errors: &[f64], trial: u64) -> RunTrace {
        RunTrace {
            trial,
            checkpoints: errors
                .iter()
                .enumerate()
                .map(|(k, &e)| crate::algorithms::Checkpoint {
                    t: k + 1,
                    errors: vec![e, e],
                    disagreement: 0.0,
                    step_norms: vec![],
                    cum_disagreement: vec![0.0, 0.0],
                    dual_disagreement: vec![],
                    running_min: vec![],
                    iterates: vec![],
                })
                .collect(),
        }
    }

    #[test]
    fn single_trial_stderr_undefined_and_deterministic_zero() {
        let ens = TrialEnsemble::new(vec![trace_with(&[3.0, 2.0], 0)]).unwrap();
        let c = expected_error_curve(&ens, 0);
        assert_eq!(c[1].mean, 2.0);
        assert!(c.iter().all(|p| p.stderr.is_none()));
        let ens = TrialEnsemble::new(vec![trace_with(&[3.0, 2.0], 0), trace_with(&[3.0, 2.0], 1)]).unwrap();
        assert!(expected_error_curve(&ens, 1).iter().all(|p| p.stderr == Some(0.0)));
        let ens = TrialEnsemble::new(vec![trace_with(&[1.0, 2.0], 0), trace_with(&[3.0, 4.0], 1)]).unwrap();
        let c = expected_error_curve(&ens, 0);
        assert_eq!(c[0].mean, 2.0);
        assert!((c[0].stderr.unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ensemble_rejects_mismatched_grids() {
        assert!(TrialEnsemble::new(vec![]).is_err());
        assert!(TrialEnsemble::new(vec![trace_with(&[1.0], 0), trace_with(&[1.0, 2.0], 1)]).is_err());
    }

    #[test]
    fn high_prob_check_cases() {
        let traces: Vec<RunTrace> = (0..60).map(|k| trace_with(&[1.0, 0.01 * k as f64], k)).collect();
        let ens = TrialEnsemble::new(traces).unwrap();
        let setup = EnsembleSetup {
            method: Method::DscmdN,
            bounded_gradients: true,
            noise_bounded: true,
            noise_zero_mean: false,
        };
        let r = high_prob_check(&ens, setup, 0.1, |_, _| 10.0).unwrap();
        assert_eq!(r.fraction, 1.0);
        assert!(r.pass);
        let r = high_prob_check(&ens, setup, 0.1, |_, _| -1.0).unwrap();
        assert_eq!(r.fraction, 0.0);
        assert!(!r.pass);
        assert!(high_prob_check(&ens, setup, 1.0, |_, _| -1.0).unwrap().pass);
        let bad = EnsembleSetup {
            bounded_gradients: false,
            ..setup
        };
        assert!(matches!(high_prob_check(&ens, bad, 0.1, |_, _| 1.0), Err(Error::ConfigMismatch(_))));
        let bad = EnsembleSetup {
            method: Method::DscdaN,
            ..setup
        };
        assert!(matches!(high_prob_check(&ens, bad, 0.1, |_, _| 1.0), Err(Error::ConfigMismatch(_))));
        let small = TrialEnsemble::new(ens.traces[..10].to_vec()).unwrap();
        assert!(high_prob_check(&small, setup, 0.1, |_, _| 1.0).is_err());
    }

    #[test]
    fn running_min_below_average_is_not_automatic() {
        // F(x) = |x|, iterates -1 then 1: the average point is optimal while
        // every iterate has error 1.
        let mut tr = trace_with(&[1.0, 0.0], 0);
        tr.checkpoints[0].running_min = vec![1.0, 1.0];
        tr.checkpoints[1].running_min = vec![1.0, 1.0];
        let r = almost_sure_diagnostics(&tr, 2.0, 2.0).unwrap();
        assert!(r.min_nonincreasing);
        assert!(!r.min_below_average_point);
        assert!(r.pass);
        assert!(almost_sure_diagnostics(&trace_with(&[1.0], 0), 1.0, 1.0).is_err());
    }
}
