//! End-to-end fitting: dataset -> chains -> per-draw estimands ->
//! posterior summaries and convergence diagnostics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::design::treated_count;
use crate::error::{Error, Result};
use crate::estimands::{
    evaluate_all, summarize, DesignWeights, EstimandSummary, ESTIMAND_NAMES, N_ESTIMANDS,
};
use crate::gibbs::{run_chain, ChainConfig, Family, FitData};
use crate::outcome::Priors;
use crate::stats::{ess, mean, split_rhat, variance};
use crate::strata::ComplianceType;

/// How K_j(a) enters the overall-effect weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    /// Observed treated count for the realized mechanism; design value
    /// (round-half-up of n_j q) for the counterfactual one. For field data.
    Observed,
    /// Design values for both mechanisms. For simulated data.
    Design,
}

/// Derive per-cluster treated counts from a dataset under `rule`.
pub fn weights_for(dataset: &Dataset, q0: f64, q1: f64, rule: WeightRule) -> DesignWeights {
    let observed = dataset.observed_treated_counts();
    let n: Vec<usize> = dataset.clusters.iter().map(|c| c.size()).collect();
    let k = dataset
        .clusters
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let design = [treated_count(n[j], q0), treated_count(n[j], q1)];
            match rule {
                WeightRule::Design => design,
                WeightRule::Observed => {
                    let mut k = design;
                    k[c.mechanism.index()] = observed[j].clamp(1, n[j] - 1);
                    k
                }
            }
        })
        .collect();
    DesignWeights { n, k }
}

/// Convergence diagnostics for one monitored scalar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalarDiagnostic {
    pub name: String,
    pub mean: f64,
    pub ess: f64,
    pub rhat: f64,
    pub mcse: f64,
}

/// One retained draw's reporting payload, as spooled to disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DrawRecord {
    pub chain: usize,
    pub iteration: usize,
    pub pi: [f64; 6],
    /// Estimand values keyed positionally by `ESTIMAND_NAMES`; null when the
    /// complier set is empty.
    pub estimands: Vec<Option<f64>>,
}

/// Full fit output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOutput {
    pub summaries: Vec<EstimandSummary>,
    pub diagnostics: Vec<ScalarDiagnostic>,
    pub n_chains: usize,
    pub retained_per_chain: usize,
}

struct ChainOutput {
    est: Vec<Vec<Option<f64>>>,
    pi: Vec<[f64; 6]>,
    records: Vec<DrawRecord>,
}

/// Fit `dataset` and evaluate all reporting estimands on every retained
/// draw. Chains run in parallel on seed streams; results are merged in
/// chain order, so output is deterministic. When `keep_records` is set the
/// per-draw payloads are returned for spooling.
pub fn fit_dataset(
    dataset: &Dataset,
    priors: &Priors,
    family: Family,
    chain_cfg: &ChainConfig,
    weights: &DesignWeights,
    keep_records: bool,
) -> Result<(FitOutput, Vec<DrawRecord>)> {
    chain_cfg.validate()?;
    let data = FitData::from_dataset(dataset)?;
    let cluster_of = &dataset.cluster_of;

    let chains: Result<Vec<ChainOutput>> = (0..chain_cfg.chains)
        .into_par_iter()
        .map(|chain_idx| {
            let mut out = ChainOutput {
                est: vec![Vec::with_capacity(chain_cfg.retained()); N_ESTIMANDS],
                pi: Vec::with_capacity(chain_cfg.retained()),
                records: Vec::new(),
            };
            let mut eval_err: Option<Error> = None;
            let progress_every = (chain_cfg.iterations / 10).max(1);
            run_chain(&data, priors, family, chain_cfg, chain_idx, |draw| {
                if eval_err.is_some() {
                    return;
                }
                match evaluate_all(draw.tables, draw.g, cluster_of, weights) {
                    Ok(vals) => {
                        for (k, v) in vals.iter().enumerate() {
                            out.est[k].push(*v);
                        }
                        out.pi.push(draw.theta.pi);
                        if keep_records {
                            out.records.push(DrawRecord {
                                chain: chain_idx,
                                iteration: draw.iteration,
                                pi: draw.theta.pi,
                                estimands: vals.to_vec(),
                            });
                        }
                        if (draw.iteration + 1) % progress_every == 0 {
                            eprintln!(
                                "chain {chain_idx}: iteration {}/{}",
                                draw.iteration + 1,
                                chain_cfg.iterations
                            );
                        }
                    }
                    Err(e) => eval_err = Some(e),
                }
            })?;
            match eval_err {
                Some(e) => Err(e),
                None => Ok(out),
            }
        })
        .collect();
    let chains = chains?;

    // Pooled estimand summaries.
    let mut summaries = Vec::with_capacity(N_ESTIMANDS);
    for (k, name) in ESTIMAND_NAMES.iter().enumerate() {
        let pooled: Vec<Option<f64>> = chains.iter().flat_map(|c| c.est[k].iter().copied()).collect();
        summaries.push(summarize(name, &pooled)?);
    }

    // Per-component diagnostics for the stratum simplex.
    let mut diagnostics = Vec::with_capacity(6);
    for g in ComplianceType::ALL {
        let per_chain: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| c.pi.iter().map(|pi| pi[g.index()]).collect())
            .collect();
        let pooled: Vec<f64> = per_chain.iter().flatten().copied().collect();
        let total_ess: f64 = per_chain.iter().map(|c| ess(c)).sum();
        let rhat = if chains.len() >= 2 {
            split_rhat(&per_chain)
        } else {
            split_rhat(&per_chain[..1])
        };
        let sd = variance(&pooled).sqrt();
        diagnostics.push(ScalarDiagnostic {
            name: format!("pi_{}", g.label()),
            mean: mean(&pooled),
            ess: total_ess,
            rhat,
            mcse: sd / total_ess.sqrt(),
        });
    }

    let records = chains.into_iter().flat_map(|c| c.records).collect();
    Ok((
        FitOutput {
            summaries,
            diagnostics,
            n_chains: chain_cfg.chains,
            retained_per_chain: chain_cfg.retained(),
        },
        records,
    ))
}

/// Rebuild estimand summaries from spooled draw records.
pub fn summarize_records(records: &[DrawRecord]) -> Result<Vec<EstimandSummary>> {
    if records.is_empty() {
        return Err(Error::Estimand("no draw records to summarize".into()));
    }
    let mut summaries = Vec::with_capacity(N_ESTIMANDS);
    for (k, name) in ESTIMAND_NAMES.iter().enumerate() {
        let draws: Vec<Option<f64>> = records
            .iter()
            .map(|r| r.estimands.get(k).copied().flatten())
            .collect();
        summaries.push(summarize(name, &draws)?);
    }
    Ok(summaries)
}
