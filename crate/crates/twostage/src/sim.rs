//! Simulation harness: synthetic two-stage experiments, super-population
//! truths, and frequentist scoring of the posterior sampler.
//!
//! The data-generating process draws each unit's stratum from a categorical
//! distribution and a full potential-outcome table from the zero-inflated
//! outcome model, honoring the exclusion restrictions (collapsed cells share
//! one draw). The design module then assigns mechanisms and treatments, and
//! observed receipt/outcome are read off the truth.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, UnitRecord};
use crate::design::{sample_first_stage, sample_second_stage, DesignConfig, Mechanism};
use crate::error::{Error, Result};
use crate::estimands::{
    estimand_index, evaluate_all, DesignWeights, ESTIMAND_NAMES, N_ESTIMANDS,
};
use crate::gibbs::{run_chain, slot, ChainConfig, Family, FitData, SLOTS};
use crate::outcome::{GammaCell, LogNormalCell, OutcomeCell, Priors};
use crate::stats::quantile_sorted;
use crate::strata::{cell_index, potential_receipt, ComplianceType};

/// A complete data-generating process on the 16 canonical outcome cells.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpConfig {
    pub family: Family,
    pub pi: [f64; 6],
    /// Parameters for the 16 canonical cells, in `cell_index` order.
    pub cells: Vec<OutcomeCell>,
    pub q0: f64,
    pub q1: f64,
    /// First-stage probability of the low-saturation mechanism.
    pub pr_a0: f64,
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        crate::outcome::ModelParams {
            pi: self.pi,
            cells: self.cells.clone(),
        }
        .validate()?;
        if !(self.q0 > 0.0 && self.q0 < 1.0 && self.q1 > 0.0 && self.q1 < 1.0) {
            return Err(Error::InvalidConfig("q0, q1 must lie in (0,1)".into()));
        }
        if !(self.pr_a0 > 0.0 && self.pr_a0 < 1.0) {
            return Err(Error::InvalidConfig("pr_a0 must lie in (0,1)".into()));
        }
        Ok(())
    }

    /// The zero-inflated log-normal benchmark process. Cell parameters in
    /// `cell_index` order: (p, mu, sigma2).
    pub fn benchmark_lognormal() -> Self {
        let raw: [(f64, f64, f64); 16] = [
            (0.10, 5.0, 1.5),  // cc, z=0, a0
            (0.20, 7.5, 2.5),  // cc, z=1, a0
            (0.10, 5.0, 1.5),  // cc, z=0, a1
            (0.20, 7.5, 2.5),  // cc, z=1, a1
            (0.05, 10.0, 2.0), // aa, a0
            (0.05, 10.0, 2.5), // aa, a1
            (0.03, 3.0, 2.0),  // nn, a0
            (0.03, 3.0, 2.5),  // nn, a1
            (0.10, 5.0, 1.5),  // ca, z=0, a0
            (0.20, 8.0, 1.5),  // ca, z=1, a0
            (0.10, 10.0, 2.5), // ca, a1
            (0.02, 2.0, 2.0),  // nc, a0
            (0.08, 4.0, 2.5),  // nc, z=0, a1
            (0.18, 8.0, 2.5),  // nc, z=1, a1
            (0.04, 2.0, 1.5),  // na, a0
            (0.06, 10.0, 1.5), // na, a1
        ];
        DgpConfig {
            family: Family::LogNormal,
            pi: [0.4, 0.2, 0.2, 0.1, 0.05, 0.05],
            cells: raw
                .into_iter()
                .map(|(p, mu, sigma2)| OutcomeCell::LogNormal(LogNormalCell { p, mu, sigma2 }))
                .collect(),
            q0: 0.4,
            q1: 0.8,
            pr_a0: 0.5,
        }
    }

    /// The zero-inflated Gamma process used for the misspecification study.
    /// Cell parameters in `cell_index` order: (p, alpha, theta).
    pub fn benchmark_gamma() -> Self {
        let raw: [(f64, f64, f64); 16] = [
            (0.10, 10.0, 100.0),  // cc, z=0, a0
            (0.20, 12.0, 125.0),  // cc, z=1, a0
            (0.10, 10.0, 100.0),  // cc, z=0, a1
            (0.20, 12.0, 125.0),  // cc, z=1, a1
            (0.05, 13.0, 100.0),  // aa, a0
            (0.05, 13.0, 100.0),  // aa, a1
            (0.05, 8.0, 90.0),    // nn, a0
            (0.05, 8.0, 90.0),    // nn, a1
            (0.10, 10.0, 100.0),  // ca, z=0, a0
            (0.20, 11.0, 100.0),  // ca, z=1, a0
            (0.10, 12.0, 83.0),   // ca, a1
            (0.03, 9.0, 90.0),    // nc, a0
            (0.10, 10.0, 100.0),  // nc, z=0, a1
            (0.15, 13.0, 125.0),  // nc, z=1, a1
            (0.04, 8.5, 100.0),   // na, a0
            (0.06, 13.0, 125.0),  // na, a1
        ];
        DgpConfig {
            family: Family::Gamma,
            pi: [0.3, 0.2, 0.17, 0.13, 0.1, 0.1],
            cells: raw
                .into_iter()
                .map(|(p, alpha, theta)| OutcomeCell::Gamma(GammaCell { p, alpha, theta }))
                .collect(),
            q0: 0.4,
            q1: 0.8,
            pr_a0: 0.5,
        }
    }

    fn sample_stratum<R: Rng>(&self, rng: &mut R) -> ComplianceType {
        let mut u = rng.random::<f64>();
        for g in ComplianceType::ALL {
            let p = self.pi[g.index()];
            if u < p {
                return g;
            }
            u -= p;
        }
        ComplianceType::Na
    }

    /// Draw a full potential table for stratum `g`, collapsed cells sharing
    /// one draw.
    fn sample_table<R: Rng>(&self, g: ComplianceType, rng: &mut R) -> [f64; 4] {
        let mut table = [f64::NAN; 4];
        for (s, &(z, a)) in SLOTS.iter().enumerate() {
            let cell = cell_index(g, z, a);
            let mut mirrored = false;
            for (prev, &(zp, ap)) in SLOTS.iter().enumerate().take(s) {
                if cell_index(g, zp, ap) == cell {
                    table[s] = table[prev];
                    mirrored = true;
                    break;
                }
            }
            if !mirrored {
                table[s] = self.cells[cell].sample(rng);
            }
        }
        table
    }
}

/// A generated experiment: the observable dataset plus its hidden truth.
#[derive(Debug, Clone)]
pub struct SimulatedExperiment {
    pub dataset: Dataset,
    pub tables: Vec<[f64; 4]>,
    pub g: Vec<ComplianceType>,
    pub weights: DesignWeights,
}

/// Generate with equal cluster sizes. `n_units` must be divisible by
/// `n_clusters`; half the clusters (rounded) get the low mechanism.
pub fn generate(
    cfg: &DgpConfig,
    n_units: usize,
    n_clusters: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SimulatedExperiment> {
    if n_clusters == 0 || n_units % n_clusters != 0 {
        return Err(Error::InvalidConfig(format!(
            "{n_units} units do not split evenly over {n_clusters} clusters"
        )));
    }
    let sizes = vec![n_units / n_clusters; n_clusters];
    let j1 = ((1.0 - cfg.pr_a0) * n_clusters as f64).round() as usize;
    generate_with_sizes(cfg, &sizes, j1, rng)
}

/// Generate with explicit cluster sizes; `j1` clusters get the
/// high-saturation mechanism.
pub fn generate_with_sizes(
    cfg: &DgpConfig,
    sizes: &[usize],
    j1: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SimulatedExperiment> {
    cfg.validate()?;
    let design = DesignConfig {
        j1,
        cluster_sizes: sizes.to_vec(),
        q0: cfg.q0,
        q1: cfg.q1,
    };
    design.validate()?;
    let mechanisms = sample_first_stage(&design, rng);

    let mut records = Vec::new();
    let mut tables = Vec::new();
    let mut g_all = Vec::new();
    for (j, (&n, &a)) in sizes.iter().zip(&mechanisms).enumerate() {
        let z = sample_second_stage(n, design.proportion(a), rng);
        for (i, &zi) in z.iter().enumerate() {
            let g = cfg.sample_stratum(rng);
            let table = cfg.sample_table(g, rng);
            let d = potential_receipt(g, zi, a);
            let y = table[slot(zi, a)];
            records.push(UnitRecord {
                cluster: format!("c{j}"),
                unit: format!("u{i}"),
                mechanism: a,
                z: zi,
                d,
                y,
            });
            tables.push(table);
            g_all.push(g);
        }
    }
    let dataset = Dataset::from_records(records)?;
    let weights = DesignWeights::from_design(sizes, cfg.q0, cfg.q1);
    Ok(SimulatedExperiment {
        dataset,
        tables,
        g: g_all,
        weights,
    })
}

/// Super-population truths for the six benchmark estimands.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SuperpopTruths {
    pub cade_a0: f64,
    pub cade_a1: f64,
    pub dey_a0: f64,
    pub dey_a1: f64,
    pub ded_a0: f64,
    pub ded_a1: f64,
}

impl SuperpopTruths {
    pub fn by_name(&self, name: &str) -> Option<f64> {
        match name {
            "CADE(a0;a0)" => Some(self.cade_a0),
            "CADE(a1;a1)" => Some(self.cade_a1),
            "DEY(a0)" => Some(self.dey_a0),
            "DEY(a1)" => Some(self.dey_a1),
            "DED(a0)" => Some(self.ded_a0),
            "DED(a1)" => Some(self.ded_a1),
            _ => None,
        }
    }
}

/// Names of the six estimands scored in the frequentist study.
pub const STUDY_TARGETS: [&str; 6] = [
    "CADE(a0;a0)",
    "CADE(a1;a1)",
    "DEY(a0)",
    "DEY(a1)",
    "DED(a0)",
    "DED(a1)",
];

/// Closed-form truths under the log-normal process.
///
/// The complier contrasts use the factored mixture form: the product of the
/// complier-weighted nonzero probability and the complier-weighted positive
/// mean, differenced across assignment arms. The unconditional outcome
/// contrasts average each stratum's exact mixture mean.
pub fn superpop_truth_analytic(cfg: &DgpConfig) -> Result<SuperpopTruths> {
    cfg.validate()?;
    if cfg.family != Family::LogNormal {
        return Err(Error::InvalidConfig(
            "closed-form truths are derived for the log-normal family only".into(),
        ));
    }
    let cell = |g: ComplianceType, z: u8, a: Mechanism| &cfg.cells[cell_index(g, z, a)];

    let cade = |a: Mechanism, compliers: [ComplianceType; 2]| -> f64 {
        let total: f64 = compliers.iter().map(|g| cfg.pi[g.index()]).sum();
        let term = |z: u8| -> f64 {
            let mut nonzero = 0.0;
            let mut pos_mean = 0.0;
            for &g in &compliers {
                let w = cfg.pi[g.index()] / total;
                let c = cell(g, z, a);
                nonzero += w * (1.0 - c.zero_prob());
                pos_mean += w * c.positive_mean();
            }
            nonzero * pos_mean
        };
        term(1) - term(0)
    };
    let dey = |a: Mechanism| -> f64 {
        ComplianceType::ALL
            .iter()
            .map(|&g| {
                cfg.pi[g.index()] * (cell(g, 1, a).mixture_mean() - cell(g, 0, a).mixture_mean())
            })
            .sum()
    };
    let ded = |a: Mechanism| -> f64 {
        ComplianceType::ALL
            .iter()
            .filter(|g| g.is_complier(a))
            .map(|g| cfg.pi[g.index()])
            .sum()
    };
    use ComplianceType::{Ca, Cc, Nc};
    Ok(SuperpopTruths {
        cade_a0: cade(Mechanism::A0, [Cc, Ca]),
        cade_a1: cade(Mechanism::A1, [Cc, Nc]),
        dey_a0: dey(Mechanism::A0),
        dey_a1: dey(Mechanism::A1),
        ded_a0: ded(Mechanism::A0),
        ded_a1: ded(Mechanism::A1),
    })
}

/// Monte-Carlo truths with standard errors, from `m` independent draws of
/// (stratum, potential table). Works for either family.
pub fn superpop_truth_bruteforce(cfg: &DgpConfig, m: usize, seed: u64) -> Result<(SuperpopTruths, SuperpopTruths)> {
    cfg.validate()?;
    const CHUNKS: usize = 64;
    #[derive(Default, Clone, Copy)]
    struct Acc {
        // sum, sum of squares, count for each target
        s: [f64; 6],
        s2: [f64; 6],
        n: [f64; 6],
    }
    impl Acc {
        fn push(&mut self, k: usize, v: f64) {
            self.s[k] += v;
            self.s2[k] += v * v;
            self.n[k] += 1.0;
        }
        fn merge(mut self, o: Acc) -> Acc {
            for k in 0..6 {
                self.s[k] += o.s[k];
                self.s2[k] += o.s2[k];
                self.n[k] += o.n[k];
            }
            self
        }
    }

    let per_chunk = m.div_ceil(CHUNKS);
    let acc = (0..CHUNKS)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64);
            let mut acc = Acc::default();
            let draws = per_chunk.min(m.saturating_sub(chunk * per_chunk));
            for _ in 0..draws {
                let g = cfg.sample_stratum(&mut rng);
                let table = cfg.sample_table(g, &mut rng);
                let dey0 = table[slot(1, Mechanism::A0)] - table[slot(0, Mechanism::A0)];
                let dey1 = table[slot(1, Mechanism::A1)] - table[slot(0, Mechanism::A1)];
                if g.is_complier(Mechanism::A0) {
                    acc.push(0, dey0);
                }
                if g.is_complier(Mechanism::A1) {
                    acc.push(1, dey1);
                }
                acc.push(2, dey0);
                acc.push(3, dey1);
                let d = |z: u8, a: Mechanism| potential_receipt(g, z, a) as f64;
                acc.push(4, d(1, Mechanism::A0) - d(0, Mechanism::A0));
                acc.push(5, d(1, Mechanism::A1) - d(0, Mechanism::A1));
            }
            acc
        })
        .reduce(Acc::default, Acc::merge);

    let mut mean = [0.0; 6];
    let mut se = [0.0; 6];
    for k in 0..6 {
        if acc.n[k] < 2.0 {
            return Err(Error::InvalidConfig("too few draws for brute-force truths".into()));
        }
        mean[k] = acc.s[k] / acc.n[k];
        let var = (acc.s2[k] - acc.s[k] * acc.s[k] / acc.n[k]) / (acc.n[k] - 1.0);
        se[k] = (var / acc.n[k]).sqrt();
    }
    let pack = |v: [f64; 6]| SuperpopTruths {
        cade_a0: v[0],
        cade_a1: v[1],
        dey_a0: v[2],
        dey_a1: v[3],
        ded_a0: v[4],
        ded_a1: v[5],
    };
    Ok((pack(mean), pack(se)))
}

/// Settings for one frequentist replication study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    pub n_units: usize,
    pub n_clusters: usize,
    pub n_sim: usize,
    pub chain: ChainConfig,
    pub seed: u64,
    #[serde(default)]
    pub priors: Priors,
}

/// Frequentist properties of one estimand across replications.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRow {
    pub name: String,
    pub truth: f64,
    pub coverage: f64,
    pub bias: f64,
    pub mse: f64,
    pub n_sim: usize,
}

/// Posterior medians and interval endpoints for the six study targets in
/// one replication.
#[derive(Debug, Clone)]
pub struct ReplicationResult {
    pub median: [f64; 6],
    pub q025: [f64; 6],
    pub q975: [f64; 6],
}

/// One replication: generate, fit with a single chain, summarize targets.
/// Deterministic given (study seed, replication index).
pub fn run_replication(
    dgp: &DgpConfig,
    fit_family: Family,
    study: &StudyConfig,
    rep: usize,
) -> Result<ReplicationResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(study.seed);
    // Streams are partitioned: even for data generation, odd for the chain.
    rng.set_stream(2 * rep as u64);
    let exp = generate(dgp, study.n_units, study.n_clusters, &mut rng)?;
    let data = FitData::from_dataset(&exp.dataset)?;
    let priors = study.priors.clone();
    let chain_cfg = ChainConfig {
        seed: study.seed.wrapping_add(0x9e3779b97f4a7c15).wrapping_mul(2 * rep as u64 + 1),
        ..study.chain.clone()
    };
    let targets: Vec<usize> = STUDY_TARGETS
        .iter()
        .map(|n| estimand_index(n).unwrap())
        .collect();
    let mut draws: Vec<Vec<f64>> = vec![Vec::with_capacity(chain_cfg.retained()); 6];
    let cluster_of = &exp.dataset.cluster_of;
    let weights = &exp.weights;
    let mut eval_err = None;
    run_chain(&data, &priors, fit_family, &chain_cfg, 0, |draw| {
        if eval_err.is_some() {
            return;
        }
        match evaluate_all(draw.tables, draw.g, cluster_of, weights) {
            Ok(vals) => {
                for (k, &idx) in targets.iter().enumerate() {
                    if let Some(v) = vals[idx] {
                        draws[k].push(v);
                    }
                }
            }
            Err(e) => eval_err = Some(e),
        }
    })?;
    if let Some(e) = eval_err {
        return Err(e);
    }
    let mut median = [0.0; 6];
    let mut q025 = [0.0; 6];
    let mut q975 = [0.0; 6];
    for k in 0..6 {
        if draws[k].len() < 2 {
            return Err(Error::Replication {
                replication: rep,
                source: Box::new(Error::Estimand(format!(
                    "{}: too few usable draws",
                    STUDY_TARGETS[k]
                ))),
            });
        }
        draws[k].sort_by(|a, b| a.partial_cmp(b).unwrap());
        median[k] = quantile_sorted(&draws[k], 0.5);
        q025[k] = quantile_sorted(&draws[k], 0.025);
        q975[k] = quantile_sorted(&draws[k], 0.975);
    }
    Ok(ReplicationResult { median, q025, q975 })
}

/// Run the full study in parallel and score coverage, bias (of the mean
/// posterior median), and MSE of the posterior medians against `truths`.
pub fn run_study(
    dgp: &DgpConfig,
    fit_family: Family,
    study: &StudyConfig,
    truths: &SuperpopTruths,
) -> Result<Vec<MetricRow>> {
    if study.n_sim == 0 {
        return Err(Error::InvalidConfig("n_sim must be positive".into()));
    }
    let reps: Result<Vec<ReplicationResult>> = (0..study.n_sim)
        .into_par_iter()
        .map(|rep| {
            run_replication(dgp, fit_family, study, rep).map_err(|e| Error::Replication {
                replication: rep,
                source: Box::new(e),
            })
        })
        .collect();
    let reps = reps?;
    let mut rows = Vec::with_capacity(6);
    for (k, name) in STUDY_TARGETS.iter().enumerate() {
        let truth = truths.by_name(name).expect("study target has a truth");
        let n = reps.len() as f64;
        let coverage = reps
            .iter()
            .filter(|r| r.q025[k] <= truth && truth <= r.q975[k])
            .count() as f64
            / n;
        let bias = reps.iter().map(|r| r.median[k] - truth).sum::<f64>() / n;
        let mse = reps
            .iter()
            .map(|r| (r.median[k] - truth) * (r.median[k] - truth))
            .sum::<f64>()
            / n;
        rows.push(MetricRow {
            name: name.to_string(),
            truth,
            coverage,
            bias,
            mse,
            n_sim: reps.len(),
        });
    }
    Ok(rows)
}

/// Write study metrics as a small CSV table.
pub fn write_metrics_csv<W: std::io::Write>(rows: &[MetricRow], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["estimand", "truth", "coverage", "bias", "mse", "n_sim"])?;
    for r in rows {
        wtr.write_record([
            r.name.as_str(),
            &format!("{}", r.truth),
            &format!("{}", r.coverage),
            &format!("{}", r.bias),
            &format!("{}", r.mse),
            &format!("{}", r.n_sim),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Sanity check used by tests: all estimand names are distinct and the study
/// targets are a subset of the reporting rows.
pub fn targets_are_reported() -> bool {
    STUDY_TARGETS.iter().all(|n| estimand_index(n).is_some()) && ESTIMAND_NAMES.len() == N_ESTIMANDS
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strata::{Nn, Na};

    #[test]
    fn analytic_truths_match_published_values() {
        let cfg = DgpConfig::benchmark_lognormal();
        let t = superpop_truth_analytic(&cfg).unwrap();
        let sig4 = |x: f64| {
            let mag = 10f64.powf(x.abs().log10().floor() - 3.0);
            (x / mag).round() * mag
        };
        assert_eq!(sig4(t.cade_a0), 4766.0);
        assert_eq!(sig4(t.cade_a1), 5156.0);
        assert_eq!(sig4(t.dey_a0), 2383.0);
        assert_eq!(sig4(t.dey_a1), 2324.0);
        assert!((t.ded_a0 - 0.5).abs() < 1e-12);
        assert!((t.ded_a1 - 0.45).abs() < 1e-12);
    }

    #[test]
    fn analytic_truths_reject_gamma() {
        assert!(superpop_truth_analytic(&DgpConfig::benchmark_gamma()).is_err());
    }

    #[test]
    fn z_invariant_cells_zero_dey() {
        let mut cfg = DgpConfig::benchmark_lognormal();
        // Make every cell identical: all contrasts vanish.
        cfg.cells = vec![cfg.cells[0].clone(); 16];
        let t = superpop_truth_analytic(&cfg).unwrap();
        assert_eq!(t.dey_a0, 0.0);
        assert_eq!(t.dey_a1, 0.0);
        assert_eq!(t.cade_a0, 0.0);
    }

    #[test]
    fn generate_respects_design() {
        let cfg = DgpConfig::benchmark_lognormal();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let exp = generate(&cfg, 5_000, 100, &mut rng).unwrap();
        assert_eq!(exp.dataset.n_units(), 5_000);
        assert_eq!(exp.dataset.n_clusters(), 100);
        let counts = exp.dataset.observed_treated_counts();
        for (j, c) in exp.dataset.clusters.iter().enumerate() {
            assert_eq!(c.size(), 50);
            let expect = match c.mechanism {
                Mechanism::A0 => 20,
                Mechanism::A1 => 40,
            };
            assert_eq!(counts[j], expect, "cluster {j}");
        }
        let n_a0 = exp
            .dataset
            .clusters
            .iter()
            .filter(|c| c.mechanism == Mechanism::A0)
            .count();
        assert_eq!(n_a0, 50);
    }

    #[test]
    fn observed_rows_match_truth() {
        let cfg = DgpConfig::benchmark_lognormal();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let exp = generate(&cfg, 600, 12, &mut rng).unwrap();
        for (i, r) in exp.dataset.records.iter().enumerate() {
            assert_eq!(r.d, potential_receipt(exp.g[i], r.z, r.mechanism));
            assert_eq!(r.y, exp.tables[i][slot(r.z, r.mechanism)]);
        }
    }

    #[test]
    fn tables_honor_exclusion_restrictions() {
        let cfg = DgpConfig::benchmark_lognormal();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let exp = generate(&cfg, 600, 12, &mut rng).unwrap();
        for (i, t) in exp.tables.iter().enumerate() {
            for (s, &(z, a)) in SLOTS.iter().enumerate() {
                for (s2, &(z2, a2)) in SLOTS.iter().enumerate() {
                    if cell_index(exp.g[i], z, a) == cell_index(exp.g[i], z2, a2) {
                        assert_eq!(t[s], t[s2]);
                    } else if s != s2 && t[s] > 0.0 && t[s2] > 0.0 {
                        // Distinct cells draw independently; positive draws
                        // are almost surely distinct (zeros can coincide).
                        assert_ne!(t[s], t[s2]);
                    }
                }
            }
        }
    }

    #[test]
    fn point_mass_on_nevertakers_kills_receipt() {
        let mut cfg = DgpConfig::benchmark_lognormal();
        cfg.pi = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        // validate() rejects degenerate simplexes only if outside tolerance;
        // point mass is legal.
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let exp = generate(&cfg, 100, 4, &mut rng).unwrap();
        assert!(exp.g.iter().all(|&g| g == Nn));
        assert!(exp.dataset.records.iter().all(|r| r.d == 0));
    }

    #[test]
    fn stratum_frequencies_converge() {
        let cfg = DgpConfig::benchmark_lognormal();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let n = 50_000;
        let exp = generate(&cfg, n, 100, &mut rng).unwrap();
        for g in ComplianceType::ALL {
            let freq = exp.g.iter().filter(|&&x| x == g).count() as f64 / n as f64;
            let p = cfg.pi[g.index()];
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (freq - p).abs() < 3.0 * se + 1e-9,
                "{g}: freq {freq} vs pi {p}"
            );
        }
    }

    #[test]
    fn bruteforce_matches_analytic_small() {
        // Small M smoke test; the acceptance suite runs M=1e7.
        let cfg = DgpConfig::benchmark_lognormal();
        let analytic = superpop_truth_analytic(&cfg).unwrap();
        let (mc, se) = superpop_truth_bruteforce(&cfg, 200_000, 21).unwrap();
        assert!((mc.ded_a0 - analytic.ded_a0).abs() < 4.0 * se.ded_a0.max(1e-6));
        assert!((mc.dey_a0 - analytic.dey_a0).abs() < 4.0 * se.dey_a0);
        assert!((mc.cade_a1 - analytic.cade_a1).abs() < 4.0 * se.cade_a1);
    }

    #[test]
    fn bruteforce_deterministic() {
        let cfg = DgpConfig::benchmark_lognormal();
        let (a, _) = superpop_truth_bruteforce(&cfg, 50_000, 7).unwrap();
        let (b, _) = superpop_truth_bruteforce(&cfg, 50_000, 7).unwrap();
        assert_eq!(a.dey_a0, b.dey_a0);
        assert_eq!(a.cade_a0, b.cade_a0);
    }

    #[test]
    fn generation_deterministic_given_seed() {
        let cfg = DgpConfig::benchmark_lognormal();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(31);
            generate(&cfg, 200, 10, &mut rng).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.dataset.records, b.dataset.records);
        assert_eq!(a.tables, b.tables);
    }

    #[test]
    fn uneven_split_rejected() {
        let cfg = DgpConfig::benchmark_lognormal();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        assert!(generate(&cfg, 101, 10, &mut rng).is_err());
    }

    #[test]
    fn study_targets_resolve() {
        assert!(targets_are_reported());
        let _ = Na; // silence unused import in cfg(test)
    }
}
