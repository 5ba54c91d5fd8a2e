//! Per-link communication noise `r_t * xi_ij^t`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::{stream, tag};
use crate::vector::norm;

/// Power-law decay `r_t = 1/(t+1)^kappa2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseDecay {
    pub kappa2: f64,
}

impl NoiseDecay {
    #[inline]
    pub fn r(&self, t: usize) -> f64 {
        (t as f64 + 1.0).powf(-self.kappa2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDist {
    UniformBall,
    TruncatedGaussian,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkNoiseSampler {
    pub nu: f64,
    pub dist: NoiseDist,
    pub zero_mean: bool,
    pub seed: u64,
}

const MAX_RESAMPLES: usize = 100;

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn uniform_ball(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> Vec<f64> {
    let mut v = gaussian(rng, dim);
    let n = norm(&v);
    let u: f64 = rng.random();
    let scale = if n > 0.0 { radius * u.powf(1.0 / dim as f64) / n } else { 0.0 };
    v.iter_mut().for_each(|c| *c *= scale);
    v
}

fn truncated_gaussian(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> Vec<f64> {
    let mut v = gaussian(rng, dim);
    for _ in 0..MAX_RESAMPLES {
        if norm(&v) <= radius {
            return v;
        }
        v = gaussian(rng, dim);
    }
    let n = norm(&v);
    if n > radius {
        v.iter_mut().for_each(|c| *c *= radius / n);
    }
    v
}

impl LinkNoiseSampler {
    pub fn zero() -> Self {
        LinkNoiseSampler {
            nu: 0.0,
            dist: NoiseDist::Zero,
            zero_mean: true,
            seed: 0,
        }
    }

    pub fn radius(&self) -> f64 {
        match self.dist {
            NoiseDist::Zero => 0.0,
            _ => self.nu.sqrt(),
        }
    }

    /// Same sampler re-keyed for one Monte-Carlo trial.
    pub fn for_trial(&self, trial: u64) -> Self {
        LinkNoiseSampler {
            seed: crate::rng::mix(&[self.seed, trial]),
            ..*self
        }
    }

    /// Noise on the message agent `i` receives from agent `j` at step `t`.
    ///
    /// Every draw lies in the ball of radius `sqrt(nu)`, so the second moment is at
    /// most `nu`. Without `zero_mean` half the radius is a fixed bias along the
    /// all-ones direction.
    pub fn sample_link_noise(&self, i: usize, j: usize, t: usize, dim: usize) -> Vec<f64> {
        if self.dist == NoiseDist::Zero || self.nu == 0.0 {
            return vec![0.0; dim];
        }
        let mut rng = stream(&[tag::LINK_NOISE, self.seed, i as u64, j as u64, t as u64]);
        let radius = self.nu.sqrt();
        let base_radius = if self.zero_mean { radius } else { radius / 2.0 };
        let mut v = match self.dist {
            NoiseDist::UniformBall => uniform_ball(&mut rng, dim, base_radius),
            NoiseDist::TruncatedGaussian => truncated_gaussian(&mut rng, dim, base_radius),
            NoiseDist::Zero => unreachable!(),
        };
        if !self.zero_mean {
            let b = radius / 2.0 / (dim as f64).sqrt();
            v.iter_mut().for_each(|c| *c += b);
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sampler(dist: NoiseDist, nu: f64, zero_mean: bool) -> LinkNoiseSampler {
        LinkNoiseSampler {
            nu,
            dist,
            zero_mean,
            seed: 11,
        }
    }

    #[test]
    fn decay_values() {
        assert_eq!(NoiseDecay { kappa2: 1.0 }.r(0), 1.0);
        assert!((NoiseDecay { kappa2: 1.0 }.r(9) - 0.1).abs() < 1e-15);
        assert!((NoiseDecay { kappa2: 0.5 }.r(3) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_dist_is_zero() {
        let s = sampler(NoiseDist::Zero, 3.0, true);
        assert_eq!(s.sample_link_noise(0, 1, 5, 3), vec![0.0; 3]);
    }

    #[test]
    fn bounded_draws_and_replay() {
        for dist in [NoiseDist::UniformBall, NoiseDist::TruncatedGaussian] {
            for zm in [true, false] {
                let s = sampler(dist, 4.0, zm);
                for t in 0..500 {
                    let v = s.sample_link_noise(1, 2, t, 2);
                    assert!(norm(&v) <= 2.0 + 1e-12);
                }
                assert_eq!(s.sample_link_noise(0, 1, 3, 4), s.sample_link_noise(0, 1, 3, 4));
                assert_ne!(s.sample_link_noise(0, 1, 3, 4), s.sample_link_noise(0, 2, 3, 4));
            }
        }
    }

    #[test]
    fn second_moment_and_mean() {
        let draws = 100_000;
        for dist in [NoiseDist::UniformBall, NoiseDist::TruncatedGaussian] {
            let nu = 2.0;
            let s = sampler(dist, nu, true);
            let dim = 3;
            let mut sq = 0.0;
            let mut mean = vec![0.0; dim];
            let mut var = vec![0.0; dim];
            for k in 0..draws {
                let v = s.sample_link_noise(k % 7, k % 5, k, dim);
                sq += crate::vector::dot(&v, &v);
                for c in 0..dim {
                    mean[c] += v[c];
                    var[c] += v[c] * v[c];
                }
            }
            assert!(sq / draws as f64 <= nu * 1.02);
            for c in 0..dim {
                let m = mean[c] / draws as f64;
                let sd = (var[c] / draws as f64 - m * m).sqrt();
                assert!(m.abs() <= 4.0 * sd / (draws as f64).sqrt(), "{dist:?} component {c} mean {m}");
            }
        }
    }

    #[test]
    fn biased_noise_has_nonzero_mean() {
        let s = sampler(NoiseDist::UniformBall, 1.0, false);
        let m: f64 = (0..20_000).map(|t| s.sample_link_noise(0, 1, t, 1)[0]).sum::<f64>() / 20_000.0;
        assert!((m - 0.5).abs() < 0.02);
    }
}
