//! Two-stage completely randomized design.
//!
//! Clusters are first assigned one of two treatment-saturation mechanisms
//! (a fixed number `J1` of clusters get the high-saturation mechanism), then
//! within each cluster an exact number `K_j(a)` of units is assigned
//! treatment, uniformly at random over subsets.

use rand::seq::index::sample as index_sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cluster-level assignment mechanism: the within-cluster treated proportion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mechanism {
    #[serde(rename = "a0")]
    A0,
    #[serde(rename = "a1")]
    A1,
}

impl Mechanism {
    pub const ALL: [Mechanism; 2] = [Mechanism::A0, Mechanism::A1];

    pub fn index(self) -> usize {
        match self {
            Mechanism::A0 => 0,
            Mechanism::A1 => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Mechanism::A0 => "a0",
            Mechanism::A1 => "a1",
        }
    }

    pub fn parse(s: &str) -> Option<Mechanism> {
        match s {
            "a0" => Some(Mechanism::A0),
            "a1" => Some(Mechanism::A1),
            _ => None,
        }
    }
}

impl std::fmt::Display for Mechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Configuration of a two-stage completely randomized design.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignConfig {
    /// Number of clusters assigned the high-saturation mechanism.
    pub j1: usize,
    /// Units per cluster.
    pub cluster_sizes: Vec<usize>,
    /// Treated proportion under the low-saturation mechanism.
    pub q0: f64,
    /// Treated proportion under the high-saturation mechanism.
    pub q1: f64,
}

impl DesignConfig {
    /// Equal cluster sizes, the layout used throughout the simulation studies.
    pub fn equal_clusters(j: usize, n_per_cluster: usize, j1: usize, q0: f64, q1: f64) -> Self {
        DesignConfig {
            j1,
            cluster_sizes: vec![n_per_cluster; j],
            q0,
            q1,
        }
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_sizes.len()
    }

    pub fn n_units(&self) -> usize {
        self.cluster_sizes.iter().sum()
    }

    pub fn proportion(&self, a: Mechanism) -> f64 {
        match a {
            Mechanism::A0 => self.q0,
            Mechanism::A1 => self.q1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.n_clusters();
        if j < 2 {
            return Err(Error::InvalidDesign(format!("need at least 2 clusters, got {j}")));
        }
        if self.j1 == 0 || self.j1 >= j {
            return Err(Error::InvalidDesign(format!(
                "J1 must satisfy 0 < J1 < J, got J1={} with J={j}",
                self.j1
            )));
        }
        for (j, &n) in self.cluster_sizes.iter().enumerate() {
            if n < 2 {
                return Err(Error::InvalidDesign(format!(
                    "cluster {j} has size {n}, need at least 2"
                )));
            }
        }
        for q in [self.q0, self.q1] {
            if !(q > 0.0 && q < 1.0) {
                return Err(Error::InvalidDesign(format!("proportions must lie in (0,1), got {q}")));
            }
        }
        if self.q0 >= self.q1 {
            return Err(Error::InvalidDesign(format!(
                "q0 must be strictly below q1, got q0={} q1={}",
                self.q0, self.q1
            )));
        }
        Ok(())
    }
}

/// One realized two-stage assignment.
#[derive(Debug, Clone)]
pub struct AssignmentRealization {
    /// Per-cluster mechanism labels.
    pub mechanisms: Vec<Mechanism>,
    /// Per-cluster binary assignment vectors.
    pub assignments: Vec<Vec<u8>>,
}

/// Number of treated units in a cluster of size `n` at proportion `q`:
/// round-half-up, clamped so both arms are nonempty.
pub fn treated_count(n: usize, q: f64) -> usize {
    let k = (n as f64 * q + 0.5).floor() as usize;
    k.clamp(1, n - 1)
}

/// First stage: a uniformly random size-`J1` subset of clusters gets the
/// high-saturation mechanism.
pub fn sample_first_stage<R: Rng>(cfg: &DesignConfig, rng: &mut R) -> Vec<Mechanism> {
    let j = cfg.n_clusters();
    let mut mechanisms = vec![Mechanism::A0; j];
    for idx in index_sample(rng, j, cfg.j1) {
        mechanisms[idx] = Mechanism::A1;
    }
    mechanisms
}

/// Second stage: exactly `treated_count(n, q)` ones placed uniformly at random.
pub fn sample_second_stage<R: Rng>(n: usize, q: f64, rng: &mut R) -> Vec<u8> {
    let k = treated_count(n, q);
    let mut z = vec![0u8; n];
    for idx in index_sample(rng, n, k) {
        z[idx] = 1;
    }
    z
}

/// Draw a full two-stage assignment from the design.
pub fn sample_assignment<R: Rng>(cfg: &DesignConfig, rng: &mut R) -> AssignmentRealization {
    let mechanisms = sample_first_stage(cfg, rng);
    let assignments = cfg
        .cluster_sizes
        .iter()
        .zip(&mechanisms)
        .map(|(&n, &a)| sample_second_stage(n, cfg.proportion(a), rng))
        .collect();
    AssignmentRealization {
        mechanisms,
        assignments,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    #[test]
    fn treated_count_exact_products() {
        assert_eq!(treated_count(100, 0.4), 40);
        assert_eq!(treated_count(100, 0.8), 80);
    }

    #[test]
    fn treated_count_round_half_up() {
        // 23 * 0.4 = 9.2 rounds down
        assert_eq!(treated_count(23, 0.4), 9);
        // 5 * 0.5 = 2.5 rounds up
        assert_eq!(treated_count(5, 0.5), 3);
    }

    #[test]
    fn treated_count_clamps_to_both_arms() {
        assert_eq!(treated_count(5, 0.99), 4);
        assert_eq!(treated_count(5, 0.01), 1);
    }

    #[test]
    fn treated_count_monotone_in_q() {
        for n in [2usize, 3, 10, 23, 100] {
            let mut last = 0;
            for i in 1..100 {
                let k = treated_count(n, i as f64 / 100.0);
                assert!(k >= last, "n={n} not monotone at q={}", i as f64 / 100.0);
                last = k;
            }
        }
    }

    #[test]
    fn rejects_j1_equal_j() {
        let cfg = DesignConfig::equal_clusters(4, 10, 4, 0.4, 0.8);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_equal_proportions() {
        let cfg = DesignConfig::equal_clusters(4, 10, 2, 0.4, 0.4);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn second_stage_exact_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let z = sample_second_stage(10, 0.4, &mut rng);
            assert_eq!(z.iter().map(|&v| v as usize).sum::<usize>(), 4);
        }
    }

    #[test]
    fn realization_satisfies_count_constraints() {
        let cfg = DesignConfig::equal_clusters(6, 11, 3, 0.4, 0.8);
        cfg.validate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let r = sample_assignment(&cfg, &mut rng);
            let n1 = r.mechanisms.iter().filter(|&&a| a == Mechanism::A1).count();
            assert_eq!(n1, 3);
            for (z, &a) in r.assignments.iter().zip(&r.mechanisms) {
                let k = z.iter().map(|&v| v as usize).sum::<usize>();
                assert_eq!(k, treated_count(11, cfg.proportion(a)));
            }
        }
    }

    #[test]
    fn first_stage_uniform_over_subsets() {
        // J=4, J1=2: each of the 6 subsets should appear with prob 1/6.
        let cfg = DesignConfig::equal_clusters(4, 10, 2, 0.4, 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 100_000usize;
        let mut counts: HashMap<Vec<bool>, usize> = HashMap::new();
        for _ in 0..draws {
            let m = sample_first_stage(&cfg, &mut rng);
            let key: Vec<bool> = m.iter().map(|&a| a == Mechanism::A1).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 6);
        let expected = draws as f64 / 6.0;
        let chi2: f64 = counts
            .values()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // chi-square(5) 0.99 quantile
        assert!(chi2 < 15.086, "chi2={chi2}");
    }
}
