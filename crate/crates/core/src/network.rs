//! Time-varying communication graphs and their doubly stochastic weights.
//!
//! A [`TopologySchedule`] is a pure description (agent count, window, weight
//! floor, generator kind, seed). Matrices are generated on demand by
//! [`TopologySchedule::weight_matrix_at`], so a schedule is cheap to clone and
//! safe to share between trial workers.
//!
//! Every generator emits undirected edge sets and uses Metropolis weights,
//! which are symmetric and therefore doubly stochastic without any repair
//! step. With `theta <= 1/N` every active weight is `1/(1 + max degree) >=
//! 1/N >= theta`, and every self weight is at least `1/(1 + deg) >= theta`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TopologyKind {
    #[serde(rename = "static_ring")]
    StaticRing,
    #[serde(rename = "periodic_partition")]
    PeriodicPartition,
    #[serde(rename = "random_B_connected")]
    RandomBConnected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySchedule {
    #[serde(rename = "n_agents")]
    pub n: usize,
    #[serde(rename = "window_B")]
    pub window: usize,
    pub theta: f64,
    #[serde(rename = "topology_kind")]
    pub kind: TopologyKind,
    #[serde(rename = "topology_seed")]
    pub seed: u64,
}

/// Dense row-major `N x N` weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub n: usize,
    pub t: usize,
    entries: Vec<f64>,
}

/// Constants of the geometric mixing bound `|[P(t,s)]_ij - 1/N| <= Theta * gamma^(t-s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingConstants {
    #[serde(rename = "Theta")]
    pub theta_big: f64,
    pub gamma: f64,
}

impl MixingConstants {
    pub fn bound(&self, gap: usize) -> f64 {
        self.theta_big * self.gamma.powi(gap as i32)
    }
}

fn check_theta(n: usize, theta: f64) -> Result<()> {
    if !(theta > 0.0 && theta <= 1.0 / n as f64) {
        return Err(Error::InfeasibleTheta { theta, n });
    }
    Ok(())
}

pub fn mixing_constants(n: usize, theta: f64, window: usize) -> Result<MixingConstants> {
    if n < 2 {
        return Err(Error::InvalidAgentCount(n));
    }
    if window < 1 {
        return Err(Error::InvalidWindow(window));
    }
    check_theta(n, theta)?;
    let base = 1.0 - theta / (4.0 * (n * n) as f64);
    Ok(MixingConstants {
        theta_big: base.powi(-2),
        gamma: base.powf(1.0 / window as f64),
    })
}

pub fn generate_schedule(
    n: usize,
    window: usize,
    theta: f64,
    kind: TopologyKind,
    seed: u64,
) -> Result<TopologySchedule> {
    let schedule = TopologySchedule {
        n,
        window,
        theta,
        kind,
        seed,
    };
    schedule.validate()?;
    Ok(schedule)
}

fn ring_edges(n: usize) -> Vec<(usize, usize)> {
    match n {
        0 | 1 => Vec::new(),
        2 => vec![(0, 1)],
        _ => (0..n).map(|k| (k.min((k + 1) % n), k.max((k + 1) % n))).collect(),
    }
}

impl TopologySchedule {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidAgentCount(self.n));
        }
        if self.window < 1 {
            return Err(Error::InvalidWindow(self.window));
        }
        check_theta(self.n, self.theta)
    }

    pub fn mixing_constants(&self) -> Result<MixingConstants> {
        mixing_constants(self.n, self.theta, self.window)
    }

    /// Undirected edges active at step `t`.
    pub fn edges_at(&self, t: usize) -> Vec<(usize, usize)> {
        match self.kind {
            TopologyKind::StaticRing => ring_edges(self.n),
            TopologyKind::PeriodicPartition => {
                let slot = t % self.window;
                ring_edges(self.n)
                    .into_iter()
                    .enumerate()
                    .filter(|(k, _)| k % self.window == slot)
                    .map(|(_, e)| e)
                    .collect()
            }
            TopologyKind::RandomBConnected => {
                // Window w >= 1 covers steps (w-1)B+1 ..= wB; step 0 is its own window.
                let (w, len, pos) = if t == 0 {
                    (0, 1, 0)
                } else {
                    let w = (t + self.window - 1) / self.window;
                    (w, self.window, t - ((w - 1) * self.window + 1))
                };
                self.random_window(w as u64, len)
                    .into_iter()
                    .filter(|&(_, slot)| slot == pos)
                    .map(|(e, _)| e)
                    .collect()
            }
        }
    }

    /// Random spanning tree plus sparse extra edges, each assigned to one slot
    /// of the window, so the union over the window is connected.
    fn random_window(&self, w: u64, len: usize) -> Vec<((usize, usize), usize)> {
        let n = self.n;
        let mut rng = stream(&[tag::TOPOLOGY, self.seed, n as u64, self.window as u64, w]);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut present = vec![false; n * n];
        let mut out = Vec::new();
        for k in 1..n {
            let parent = perm[rng.random_range(0..k)];
            let (a, b) = (perm[k].min(parent), perm[k].max(parent));
            present[a * n + b] = true;
            out.push(((a, b), rng.random_range(0..len)));
        }
        for a in 0..n {
            for b in (a + 1)..n {
                let extra = rng.random_bool(0.2);
                let slot = rng.random_range(0..len);
                if extra && !present[a * n + b] {
                    out.push(((a, b), slot));
                }
            }
        }
        out
    }

    pub fn weight_matrix_at(&self, t: usize) -> WeightMatrix {
        metropolis(self.n, self.theta, &self.edges_at(t), t)
    }

    /// Ordered product `P^t P^(t-1) ... P^s`; `t = s - 1` gives the identity.
    pub fn transition_product(&self, t: usize, s: usize) -> Result<WeightMatrix> {
        if t + 1 < s {
            return Err(Error::IndexOrder { t, s });
        }
        if t + 1 == s {
            return Ok(WeightMatrix::identity(self.n, t));
        }
        let mut acc = self.weight_matrix_at(s);
        for k in (s + 1)..=t {
            acc = self.weight_matrix_at(k).matmul(&acc);
        }
        acc.t = t;
        debug_assert!(acc.doubly_stochastic_residual() <= 1e-10 * (t - s + 1) as f64);
        Ok(acc)
    }

    /// Adjacency (including self loops) of the union graph over steps `from..=to`.
    pub fn union_adjacency(&self, from: usize, to: usize) -> Vec<bool> {
        let n = self.n;
        let mut adj = vec![false; n * n];
        for i in 0..n {
            adj[i * n + i] = true;
        }
        for t in from..=to {
            for (a, b) in self.edges_at(t) {
                adj[a * n + b] = true;
                adj[b * n + a] = true;
            }
        }
        adj
    }
}

fn metropolis(n: usize, theta: f64, edges: &[(usize, usize)], t: usize) -> WeightMatrix {
    let mut deg = vec![0usize; n];
    for &(a, b) in edges {
        deg[a] += 1;
        deg[b] += 1;
    }
    let mut m = WeightMatrix {
        n,
        t,
        entries: vec![0.0; n * n],
    };
    for &(a, b) in edges {
        let w = theta.max(1.0 / (1 + deg[a].max(deg[b])) as f64);
        m.entries[a * n + b] = w;
        m.entries[b * n + a] = w;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| m.entries[i * n + j]).sum();
        m.entries[i * n + i] = 1.0 - off;
    }
    m
}

/// Strong connectivity of a directed adjacency via forward and backward search from node 0.
pub fn is_strongly_connected(adj: &[bool], n: usize) -> bool {
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                let edge = if forward { adj[u * n + v] } else { adj[v * n + u] };
                if edge && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    n > 0 && reach(true) && reach(false)
}

impl WeightMatrix {
    pub fn identity(n: usize, t: usize) -> Self {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
        }
        WeightMatrix { n, t, entries }
    }

    pub fn from_rows(rows: &[Vec<f64>], t: usize) -> Self {
        let n = rows.len();
        let entries = rows.iter().flat_map(|r| r.iter().copied()).collect::<Vec<_>>();
        assert_eq!(entries.len(), n * n, "weight matrix must be square");
        WeightMatrix { n, t, entries }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn matmul(&self, rhs: &WeightMatrix) -> WeightMatrix {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.entries[i * n + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += a * rhs.entries[k * n + j];
                }
            }
        }
        WeightMatrix {
            n,
            t: self.t,
            entries: out,
        }
    }

    /// Largest deviation of any row or column sum from 1.
    pub fn doubly_stochastic_residual(&self) -> f64 {
        let n = self.n;
        let mut worst = 0.0f64;
        for i in 0..n {
            let row: f64 = (0..n).map(|j| self.get(i, j)).sum();
            let col: f64 = (0..n).map(|j| self.get(j, i)).sum();
            worst = worst.max((row - 1.0).abs()).max((col - 1.0).abs());
        }
        worst
    }

    pub fn max_deviation_from_uniform(&self) -> f64 {
        let u = 1.0 / self.n as f64;
        self.entries.iter().fold(0.0, |m, v| m.max((v - u).abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_agent_ring_is_uniform_averaging() {
        let s = generate_schedule(2, 1, 0.5, TopologyKind::StaticRing, 0).unwrap();
        for t in [0, 1, 7, 100] {
            assert_eq!(s.weight_matrix_at(t).entries(), &[0.5, 0.5, 0.5, 0.5]);
        }
        let p = s.transition_product(5, 1).unwrap();
        for v in p.entries() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn infeasible_theta_rejected() {
        for kind in [
            TopologyKind::StaticRing,
            TopologyKind::PeriodicPartition,
            TopologyKind::RandomBConnected,
        ] {
            assert!(matches!(
                generate_schedule(2, 1, 0.6, kind, 0),
                Err(Error::InfeasibleTheta { .. })
            ));
        }
        assert!(matches!(
            generate_schedule(3, 1, 0.0, TopologyKind::StaticRing, 0),
            Err(Error::InfeasibleTheta { .. })
        ));
    }

    #[test]
    fn zero_window_rejected() {
        assert!(matches!(
            generate_schedule(4, 0, 0.1, TopologyKind::StaticRing, 0),
            Err(Error::InvalidWindow(0))
        ));
    }

    #[test]
    fn periodic_partition_windows_strongly_connected() {
        let s = generate_schedule(4, 2, 0.1, TopologyKind::PeriodicPartition, 1).unwrap();
        for start in 1..40 {
            let adj = s.union_adjacency(start, start + 1);
            assert!(is_strongly_connected(&adj, 4), "window starting at {start}");
        }
        // a single step is not enough on its own
        assert!(!is_strongly_connected(&s.union_adjacency(1, 1), 4));
        for t in 0..10 {
            assert_eq!(s.weight_matrix_at(t), {
                let mut m = s.weight_matrix_at(t + 2);
                m.t = t;
                m
            });
        }
    }

    #[test]
    fn random_windows_strongly_connected() {
        for seed in 0..5 {
            for &(n, b) in &[(3, 1), (5, 2), (6, 3)] {
                let s = generate_schedule(n, b, 0.5 / n as f64, TopologyKind::RandomBConnected, seed).unwrap();
                assert!(is_strongly_connected(&s.union_adjacency(0, 0), n));
                for w in 0..30 {
                    let adj = s.union_adjacency(w * b + 1, (w + 1) * b);
                    assert!(is_strongly_connected(&adj, n), "seed {seed} n {n} window {w}");
                }
            }
        }
    }

    #[test]
    fn matrices_respect_floor_and_sums() {
        for kind in [
            TopologyKind::StaticRing,
            TopologyKind::PeriodicPartition,
            TopologyKind::RandomBConnected,
        ] {
            let s = generate_schedule(6, 3, 0.1, kind, 9).unwrap();
            for t in 0..50 {
                let p = s.weight_matrix_at(t);
                assert!(p.doubly_stochastic_residual() <= 1e-12);
                let active = s.edges_at(t);
                for i in 0..6 {
                    assert!(p.get(i, i) >= s.theta);
                    for j in 0..6 {
                        let v = p.get(i, j);
                        assert!((0.0..=1.0).contains(&v));
                        let linked = active.contains(&(i.min(j), i.max(j)));
                        if i != j {
                            if linked {
                                assert!(v >= s.theta);
                            } else {
                                assert_eq!(v, 0.0);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn repeated_calls_bitwise_equal() {
        let s = generate_schedule(5, 2, 0.1, TopologyKind::RandomBConnected, 3).unwrap();
        assert_eq!(s.weight_matrix_at(0), s.weight_matrix_at(0));
        assert_eq!(s.weight_matrix_at(17), s.weight_matrix_at(17));
    }

    #[test]
    fn transition_product_identity_and_order() {
        let s = generate_schedule(4, 2, 0.1, TopologyKind::RandomBConnected, 2).unwrap();
        assert_eq!(s.transition_product(4, 5).unwrap().entries(), WeightMatrix::identity(4, 0).entries());
        assert!(matches!(s.transition_product(2, 5), Err(Error::IndexOrder { t: 2, s: 5 })));
        let p = s.transition_product(3, 2).unwrap();
        let direct = s.weight_matrix_at(3).matmul(&s.weight_matrix_at(2));
        assert_eq!(p.entries(), direct.entries());
    }

    #[test]
    fn transition_product_mixes_within_lemma_bound() {
        let s = generate_schedule(4, 2, 0.1, TopologyKind::RandomBConnected, 0).unwrap();
        let mc = s.mixing_constants().unwrap();
        let p = s.transition_product(40, 1).unwrap();
        assert!(p.max_deviation_from_uniform() <= mc.bound(39));
        assert!(p.doubly_stochastic_residual() <= 1e-10 * 40.0);
    }

    #[test]
    fn mixing_constant_values() {
        // direct evaluation: base = 1 - 0.5/16 = 0.96875
        let mc = mixing_constants(2, 0.5, 1).unwrap();
        assert!((mc.gamma - 0.96875).abs() < 1e-15);
        assert!((mc.theta_big - 1.0 / (0.96875f64 * 0.96875)).abs() < 1e-15);
        assert!((mc.theta_big - 1.065_556_7).abs() < 1e-6);
        let mc = mixing_constants(4, 0.1, 2).unwrap();
        assert!((mc.gamma - (1.0f64 - 0.1 / 64.0).sqrt()).abs() < 1e-15);
        assert!((mc.gamma - 0.999_218).abs() < 1e-6);
        assert!(matches!(mixing_constants(2, 0.6, 1), Err(Error::InfeasibleTheta { .. })));
    }

    #[test]
    fn schedule_json_keys() {
        let s = generate_schedule(4, 2, 0.1, TopologyKind::RandomBConnected, 7).unwrap();
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(v["n_agents"], 4);
        assert_eq!(v["window_B"], 2);
        assert_eq!(v["topology_kind"], "random_B_connected");
        assert_eq!(v["topology_seed"], 7);
        let back: TopologySchedule = serde_json::from_value(v).unwrap();
        assert_eq!(back, s);
    }
}
