//! Finite-population causal estimands computed from completed potential
//! tables, and posterior summaries over retained draws.
//!
//! Intention-to-treat quantities (DED/DEY, SED/SEY, OEY) average unit-level
//! contrasts within cluster first, then weight cluster means by n_j / N.
//! Complier quantities (CADE/CASE/CAOE) are flat averages over the units
//! complying under the base mechanism a*: G in {cc, ca} for a* = a0 and
//! G in {cc, nc} for a* = a1. The overall effect decomposes per unit as
//!
//!   OEY_ij(a1, a0) = (K_j(a1)/n_j) DEY_ij(a1)
//!                  - (K_j(a0)/n_j) DEY_ij(a0) + SEY_ij(0),
//!
//! and the same decomposition ties CAOE to CADE and CASE exactly.

use serde::{Deserialize, Serialize};

use crate::design::{treated_count, Mechanism};
use crate::error::{Error, Result};
use crate::gibbs::slot;
use crate::stats::{mean, quantile_sorted};
use crate::strata::{potential_receipt, ComplianceType};

/// Output rows, in reporting order.
pub const ESTIMAND_NAMES: [&str; 19] = [
    "DED(a0)",
    "DED(a1)",
    "DEY(a0)",
    "DEY(a1)",
    "SED(0)",
    "SED(1)",
    "SEY(0)",
    "SEY(1)",
    "OEY(a1,a0)",
    "CADE(a0;a0)",
    "CADE(a1;a1)",
    "CADE(a1;a0)",
    "CADE(a0;a1)",
    "CASE(0;a0)",
    "CASE(1;a0)",
    "CASE(0;a1)",
    "CASE(1;a1)",
    "CAOE(a1,a0;a0)",
    "CAOE(a1,a0;a1)",
];

pub const N_ESTIMANDS: usize = 19;

pub fn estimand_index(name: &str) -> Option<usize> {
    ESTIMAND_NAMES.iter().position(|&n| n == name)
}

/// Per-cluster sizes and treated counts K_j(a) for both mechanisms.
#[derive(Debug, Clone)]
pub struct DesignWeights {
    pub n: Vec<usize>,
    /// K_j(a0), K_j(a1) per cluster.
    pub k: Vec<[usize; 2]>,
}

impl DesignWeights {
    /// Design-value counts: K_j(a) = round-half-up(n_j q_a), clamped to
    /// [1, n_j - 1].
    pub fn from_design(cluster_sizes: &[usize], q0: f64, q1: f64) -> Self {
        let k = cluster_sizes
            .iter()
            .map(|&n| [treated_count(n, q0), treated_count(n, q1)])
            .collect();
        DesignWeights {
            n: cluster_sizes.to_vec(),
            k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n.is_empty() || self.n.len() != self.k.len() {
            return Err(Error::Estimand("empty or inconsistent design weights".into()));
        }
        for (j, (&n, k)) in self.n.iter().zip(&self.k).enumerate() {
            for &kj in k {
                if kj == 0 || kj >= n {
                    return Err(Error::Estimand(format!(
                        "cluster {j}: treated count {kj} outside (0, {n})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn total_units(&self) -> usize {
        self.n.iter().sum()
    }
}

/// All 19 estimands evaluated on one completed draw. `None` marks complier
/// estimands whose complier set is empty in this draw.
pub fn evaluate_all(
    tables: &[[f64; 4]],
    g: &[ComplianceType],
    cluster_of: &[usize],
    weights: &DesignWeights,
) -> Result<[Option<f64>; N_ESTIMANDS]> {
    let n_units = tables.len();
    if g.len() != n_units || cluster_of.len() != n_units {
        return Err(Error::Estimand("mismatched draw lengths".into()));
    }
    if weights.total_units() != n_units {
        return Err(Error::Estimand(format!(
            "design weights cover {} units, draw has {}",
            weights.total_units(),
            n_units
        )));
    }
    let n_clusters = weights.n.len();
    // Cluster sums of the nine ITT unit-level contrasts, in the order of
    // ESTIMAND_NAMES[0..9].
    let mut cluster_sums = vec![[0.0f64; 9]; n_clusters];
    // Flat complier accumulators per base mechanism: DEY(a0), DEY(a1),
    // SEY(0), SEY(1), OEY.
    let mut complier_sums = [[0.0f64; 5]; 2];
    let mut complier_n = [0usize; 2];

    let s00 = slot(0, Mechanism::A0);
    let s10 = slot(1, Mechanism::A0);
    let s01 = slot(0, Mechanism::A1);
    let s11 = slot(1, Mechanism::A1);

    for i in 0..n_units {
        let j = cluster_of[i];
        if j >= n_clusters {
            return Err(Error::Estimand(format!("unit {i} references cluster {j}")));
        }
        let t = &tables[i];
        let gi = g[i];
        let d = |z: u8, a: Mechanism| potential_receipt(gi, z, a) as f64;

        let ded0 = d(1, Mechanism::A0) - d(0, Mechanism::A0);
        let ded1 = d(1, Mechanism::A1) - d(0, Mechanism::A1);
        let dey0 = t[s10] - t[s00];
        let dey1 = t[s11] - t[s01];
        let sed0 = d(0, Mechanism::A1) - d(0, Mechanism::A0);
        let sed1 = d(1, Mechanism::A1) - d(1, Mechanism::A0);
        let sey0 = t[s01] - t[s00];
        let sey1 = t[s11] - t[s10];
        let nj = weights.n[j] as f64;
        let oey = weights.k[j][1] as f64 / nj * dey1 - weights.k[j][0] as f64 / nj * dey0 + sey0;

        let row = &mut cluster_sums[j];
        row[0] += ded0;
        row[1] += ded1;
        row[2] += dey0;
        row[3] += dey1;
        row[4] += sed0;
        row[5] += sed1;
        row[6] += sey0;
        row[7] += sey1;
        row[8] += oey;

        for (b, a_star) in Mechanism::ALL.into_iter().enumerate() {
            if gi.is_complier(a_star) {
                complier_n[b] += 1;
                let acc = &mut complier_sums[b];
                acc[0] += dey0;
                acc[1] += dey1;
                acc[2] += sey0;
                acc[3] += sey1;
                acc[4] += oey;
            }
        }
    }

    let total = weights.total_units() as f64;
    let mut out = [None; N_ESTIMANDS];
    for k in 0..9 {
        // cluster mean, then n_j / N weights
        let mut acc = 0.0;
        for (j, row) in cluster_sums.iter().enumerate() {
            let nj = weights.n[j] as f64;
            acc += nj * (row[k] / nj);
        }
        out[k] = Some(acc / total);
    }
    let complier = |b: usize, k: usize| -> Option<f64> {
        if complier_n[b] == 0 {
            None
        } else {
            Some(complier_sums[b][k] / complier_n[b] as f64)
        }
    };
    out[9] = complier(0, 0); // CADE(a0;a0)
    out[10] = complier(1, 1); // CADE(a1;a1)
    out[11] = complier(0, 1); // CADE(a1;a0)
    out[12] = complier(1, 0); // CADE(a0;a1)
    out[13] = complier(0, 2); // CASE(0;a0)
    out[14] = complier(0, 3); // CASE(1;a0)
    out[15] = complier(1, 2); // CASE(0;a1)
    out[16] = complier(1, 3); // CASE(1;a1)
    out[17] = complier(0, 4); // CAOE(a1,a0;a0)
    out[18] = complier(1, 4); // CAOE(a1,a0;a1)
    Ok(out)
}

/// Largest per-unit residual of the overall-effect decomposition against a
/// direct evaluation of Ybar_ij(a1) - Ybar_ij(a0) from the defining sums.
pub fn caoe_identity_residual(
    tables: &[[f64; 4]],
    cluster_of: &[usize],
    weights: &DesignWeights,
) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, t) in tables.iter().enumerate() {
        let j = cluster_of[i];
        let nj = weights.n[j] as f64;
        let ybar = |a: Mechanism| {
            let kj = weights.k[j][a.index()] as f64;
            kj / nj * t[slot(1, a)] + (1.0 - kj / nj) * t[slot(0, a)]
        };
        let direct = ybar(Mechanism::A1) - ybar(Mechanism::A0);
        let dey0 = t[slot(1, Mechanism::A0)] - t[slot(0, Mechanism::A0)];
        let dey1 = t[slot(1, Mechanism::A1)] - t[slot(0, Mechanism::A1)];
        let sey0 = t[slot(0, Mechanism::A1)] - t[slot(0, Mechanism::A0)];
        let decomposed =
            weights.k[j][1] as f64 / nj * dey1 - weights.k[j][0] as f64 / nj * dey0 + sey0;
        worst = worst.max((direct - decomposed).abs());
    }
    worst
}

/// Posterior summary of one estimand across retained draws.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimandSummary {
    pub name: String,
    pub mean: f64,
    pub median: f64,
    pub q025: f64,
    pub q975: f64,
    pub n_draws: usize,
    /// Draws skipped because the complier set was empty.
    pub skipped: usize,
}

pub fn summarize(name: &str, draws: &[Option<f64>]) -> Result<EstimandSummary> {
    let mut values: Vec<f64> = draws.iter().filter_map(|&v| v).collect();
    let skipped = draws.len() - values.len();
    if values.len() < 2 {
        return Err(Error::Estimand(format!(
            "{name}: need at least 2 usable draws, have {}",
            values.len()
        )));
    }
    let m = mean(&values);
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(EstimandSummary {
        name: name.to_string(),
        mean: m,
        median: quantile_sorted(&values, 0.5),
        q025: quantile_sorted(&values, 0.025),
        q975: quantile_sorted(&values, 0.975),
        n_draws: values.len(),
        skipped,
    })
}
