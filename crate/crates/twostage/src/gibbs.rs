//! Data-augmentation Gibbs sampler.
//!
//! Each iteration alternates three conditional draws:
//!
//! 1. latent strata: for every unit, a categorical draw over the strata
//!    compatible with its observed (mechanism, assignment, receipt) triple,
//!    weighted by `pi_g` times the observed-arm outcome density;
//! 2. missing potential outcomes: every non-observed canonical outcome cell
//!    implied by the unit's stratum is redrawn from the current model, with
//!    exclusion-restriction-collapsed slots mirrored from a single draw;
//! 3. parameters: conjugate updates of the stratum simplex (Dirichlet), the
//!    per-cell zero-inflation probabilities (Beta), and the log-normal
//!    location/variance (Normal / Inverse-Gamma), using observed outcomes
//!    only. Imputed tables feed the estimands, never the parameter updates.
//!
//! The Gamma family replaces the Normal/Inverse-Gamma step with a conjugate
//! rate update for the scale and a random-walk Metropolis step on the log
//! shape, adapted toward 0.44 acceptance during burn-in.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta as BetaDist, Distribution, Gamma as GammaDist, Normal, Uniform};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::dataset::Dataset;
use crate::design::Mechanism;
use crate::error::{Error, Result};
use crate::outcome::{GammaCell, LogNormalCell, ModelParams, OutcomeCell, Priors};
use crate::strata::{cell_index, compatible_strata, ComplianceType, N_CELLS};

/// Outcome family fitted by the sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    LogNormal,
    Gamma,
}

/// MCMC run settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    pub seed: u64,
    #[serde(default = "default_chains")]
    pub chains: usize,
    /// Fraction of units whose stratum is redrawn in each sweep (random-scan
    /// stratum step). Values below 1 leave the stationary distribution
    /// unchanged but slow label diffusion; see `Sampler::step_sample_strata`.
    #[serde(default = "default_strata_update_fraction")]
    pub strata_update_fraction: f64,
}

fn default_thin() -> usize {
    1
}

fn default_chains() -> usize {
    1
}

fn default_strata_update_fraction() -> f64 {
    ChainConfig::DEFAULT_STRATA_UPDATE_FRACTION
}

impl ChainConfig {
    pub const DEFAULT_STRATA_UPDATE_FRACTION: f64 = 1.0;

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.burn_in >= self.iterations {
            return Err(Error::InvalidConfig(format!(
                "burn-in ({}) must be below iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 || self.chains == 0 {
            return Err(Error::InvalidConfig("thin and chains must be positive".into()));
        }
        if !(self.strata_update_fraction > 0.0 && self.strata_update_fraction <= 1.0) {
            return Err(Error::InvalidConfig(
                "strata_update_fraction must be in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

/// Potential-outcome slot for assignment `z` under mechanism `a`.
/// Order: (0,a0), (1,a0), (0,a1), (1,a1).
pub fn slot(z: u8, a: Mechanism) -> usize {
    a.index() * 2 + z as usize
}

pub const SLOTS: [(u8, Mechanism); 4] = [
    (0, Mechanism::A0),
    (1, Mechanism::A0),
    (0, Mechanism::A1),
    (1, Mechanism::A1),
];

/// Observed data laid out for the sampler: per-unit compatibility sets and
/// cell routings are resolved once up front.
#[derive(Debug, Clone)]
pub struct FitData {
    pub y: Vec<f64>,
    pub ln_y: Vec<f64>,
    pub mech: Vec<Mechanism>,
    pub z: Vec<u8>,
    pub d: Vec<u8>,
    pub obs_slot: Vec<usize>,
    /// Observed-data triple code: a.index()*4 + z*2 + d.
    pub triple: Vec<usize>,
    pub cluster_of: Vec<usize>,
    /// Candidate strata per triple, each with the outcome cell the unit's
    /// observed arm routes to under that stratum.
    pub compat: [Vec<(ComplianceType, usize)>; 8],
    /// Cell index of each (stratum, slot) pair.
    pub slot_cell: [[usize; 4]; 6],
    /// Unit labels for fault reporting.
    pub labels: Option<Vec<(String, String)>>,
}

impl FitData {
    pub fn from_parts(
        y: Vec<f64>,
        mech: Vec<Mechanism>,
        z: Vec<u8>,
        d: Vec<u8>,
        cluster_of: Vec<usize>,
        labels: Option<Vec<(String, String)>>,
    ) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::Dataset("dataset is empty".into()));
        }
        let ln_y = y.iter().map(|&v| if v > 0.0 { v.ln() } else { 0.0 }).collect();
        let obs_slot = mech.iter().zip(&z).map(|(&a, &zi)| slot(zi, a)).collect();
        let triple = mech
            .iter()
            .zip(&z)
            .zip(&d)
            .map(|((&a, &zi), &di)| a.index() * 4 + zi as usize * 2 + di as usize)
            .collect();

        let mut compat: [Vec<(ComplianceType, usize)>; 8] = Default::default();
        for a in Mechanism::ALL {
            for zi in [0u8, 1] {
                for di in [0u8, 1] {
                    let code = a.index() * 4 + zi as usize * 2 + di as usize;
                    compat[code] = compatible_strata(a, zi, di)
                        .into_iter()
                        .map(|g| (g, cell_index(g, zi, a)))
                        .collect();
                }
            }
        }
        let mut slot_cell = [[0usize; 4]; 6];
        for g in ComplianceType::ALL {
            for (s, &(zi, a)) in SLOTS.iter().enumerate() {
                slot_cell[g.index()][s] = cell_index(g, zi, a);
            }
        }
        Ok(FitData {
            y,
            ln_y,
            mech,
            z,
            d,
            obs_slot,
            triple,
            cluster_of,
            compat,
            slot_cell,
            labels,
        })
    }

    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let labels = ds
            .records
            .iter()
            .map(|r| (r.cluster.clone(), r.unit.clone()))
            .collect();
        Self::from_parts(
            ds.records.iter().map(|r| r.y).collect(),
            ds.records.iter().map(|r| r.mechanism).collect(),
            ds.records.iter().map(|r| r.z).collect(),
            ds.records.iter().map(|r| r.d).collect(),
            ds.cluster_of.clone(),
            Some(labels),
        )
    }

    pub fn n_units(&self) -> usize {
        self.y.len()
    }

    fn label(&self, i: usize) -> (String, String) {
        match &self.labels {
            Some(v) => v[i].clone(),
            None => (self.cluster_of[i].to_string(), i.to_string()),
        }
    }
}

/// Current augmented state of one chain.
#[derive(Debug, Clone)]
pub struct LatentState {
    pub g: Vec<ComplianceType>,
    /// Per-unit 4-slot potential table, `SLOTS` order.
    pub tables: Vec<[f64; 4]>,
    pub theta: ModelParams,
}

/// Read-only view of one retained draw.
pub struct DrawView<'a> {
    pub iteration: usize,
    pub theta: &'a ModelParams,
    pub g: &'a [ComplianceType],
    pub tables: &'a [[f64; 4]],
}

/// Per-cell sufficient statistics over observed units.
#[derive(Debug, Clone, Copy, Default)]
struct CellStats {
    n_zero: f64,
    n_pos: f64,
    sum_log: f64,
    sum_logsq: f64,
    sum_y: f64,
}

pub struct Sampler<'d> {
    data: &'d FitData,
    priors: &'d Priors,
    family: Family,
    rng: ChaCha8Rng,
    pub state: LatentState,
    strata_fraction: f64,
    /// Dirichlet parameters actually used for the stratum simplex:
    /// `priors.dirichlet_alpha`, optionally augmented by the empirically
    /// centered mass (see `Priors::dirichlet_concentration`).
    dirichlet_alpha: [f64; 6],
    // Metropolis state for the Gamma-shape step.
    mh_scale: Vec<f64>,
    mh_accept: Vec<usize>,
    mh_attempt: Vec<usize>,
    adapting: bool,
}

impl<'d> Sampler<'d> {
    pub fn new(
        data: &'d FitData,
        priors: &'d Priors,
        family: Family,
        cfg: &ChainConfig,
        chain_idx: usize,
    ) -> Result<Self> {
        priors.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(chain_idx as u64);
        let theta = initialize(data, family, chain_idx > 0, &mut rng)?;
        // G and tables start as placeholders; the warm start below replaces
        // them before the first full iteration reads them.
        let g = data
            .triple
            .iter()
            .map(|&t| data.compat[t][0].0)
            .collect::<Vec<_>>();
        let tables = data
            .y
            .iter()
            .map(|&y| [y; 4])
            .collect::<Vec<_>>();
        let mut sampler = Sampler {
            data,
            priors,
            family,
            rng,
            state: LatentState { g, tables, theta },
            strata_fraction: cfg.strata_update_fraction,
            dirichlet_alpha: effective_dirichlet_alpha(data, priors),
            mh_scale: vec![0.1; N_CELLS],
            mh_accept: vec![0; N_CELLS],
            mh_attempt: vec![0; N_CELLS],
            adapting: true,
        };
        // Warm start: draw strata from the observed-arm weights (the table
        // holds no information yet), then impute a table consistent with
        // that draw.
        sampler.strata_pass(1.0)?;
        sampler.step_impute_missing();
        Ok(sampler)
    }

    /// Build a sampler with an explicit starting state (tests).
    pub fn with_state(
        data: &'d FitData,
        priors: &'d Priors,
        family: Family,
        state: LatentState,
        seed: u64,
    ) -> Self {
        Sampler {
            data,
            priors,
            family,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state,
            strata_fraction: 1.0,
            dirichlet_alpha: effective_dirichlet_alpha(data, priors),
            mh_scale: vec![0.1; N_CELLS],
            mh_accept: vec![0; N_CELLS],
            mh_attempt: vec![0; N_CELLS],
            adapting: true,
        }
    }

    pub fn set_adapting(&mut self, on: bool) {
        self.adapting = on;
    }

    /// Override the random-scan fraction (tests; `with_state` defaults to 1).
    pub fn set_strata_update_fraction(&mut self, fraction: f64) {
        self.strata_fraction = fraction;
    }

    /// Step 2: redraw strata from the categorical over each unit's
    /// compatibility set, weighted in log space by
    /// `ln pi_g + log_density(y_obs; cell(g, z, a))`.
    ///
    /// The step is a random scan: each non-singleton unit is redrawn with
    /// probability `strata_update_fraction` per sweep (singleton units are
    /// always set; their stratum is deterministic). A partial scan is a
    /// mixture of valid Gibbs kernels, so the stationary distribution is
    /// untouched, but label diffusion slows by the reciprocal of the
    /// fraction. That matters here: several strata are distinguishable only
    /// through heavily overlapping outcome mixtures, so the stratum simplex
    /// has a weakly identified ridge, and full sweeps let the chain slide
    /// along it to a boundary that empties the rarer strata and distorts
    /// the complier-average effects long before a run of a few thousand
    /// iterations ends.
    pub fn step_sample_strata(&mut self) -> Result<()> {
        self.strata_pass(self.strata_fraction)
    }

    /// One sweep of stratum redraws, each unit updated with probability
    /// `fraction`. A full sweep (`fraction = 1`) is used to warm-start a
    /// chain.
    fn strata_pass(&mut self, fraction: f64) -> Result<()> {
        let theta = &self.state.theta;
        let ln_pi: [f64; 6] = std::array::from_fn(|k| theta.pi[k].ln());
        // Per-cell constants reused across units.
        let ln_p: Vec<f64> = theta.cells.iter().map(|c| c.zero_prob().ln()).collect();
        let ln_1mp: Vec<f64> = theta
            .cells
            .iter()
            .map(|c| (1.0 - c.zero_prob()).ln())
            .collect();
        let mut weights = [0.0f64; 6];
        for i in 0..self.data.n_units() {
            let cands = &self.data.compat[self.data.triple[i]];
            if cands.len() == 1 {
                self.state.g[i] = cands[0].0;
                continue;
            }
            if fraction < 1.0 && self.rng.random::<f64>() >= fraction {
                continue;
            }
            let y = self.data.y[i];
            let ln_y = self.data.ln_y[i];
            let mut max_w = f64::NEG_INFINITY;
            for (k, &(g, cell)) in cands.iter().enumerate() {
                let lw = if y == 0.0 {
                    ln_pi[g.index()] + ln_p[cell]
                } else {
                    ln_pi[g.index()]
                        + ln_1mp[cell]
                        + theta.cells[cell].log_density_positive(y, ln_y)
                };
                weights[k] = lw;
                if lw > max_w {
                    max_w = lw;
                }
            }
            if max_w == f64::NEG_INFINITY {
                let (cluster, unit) = self.data.label(i);
                return Err(Error::SamplerFault {
                    cluster,
                    unit,
                    msg: "all stratum weights are zero for the observed outcome".into(),
                });
            }
            let mut total = 0.0;
            for w in weights[..cands.len()].iter_mut() {
                *w = (*w - max_w).exp();
                total += *w;
            }
            let mut u = self.rng.random::<f64>() * total;
            let mut chosen = cands.len() - 1;
            for (k, &w) in weights[..cands.len()].iter().enumerate() {
                if u < w {
                    chosen = k;
                    break;
                }
                u -= w;
            }
            self.state.g[i] = cands[chosen].0;
        }
        Ok(())
    }

    /// Step 3: impute the missing potential outcomes implied by each unit's
    /// current stratum. One draw per non-observed canonical cell, mirrored
    /// onto every slot that cell covers.
    pub fn step_impute_missing(&mut self) {
        let theta = &self.state.theta;
        for i in 0..self.data.n_units() {
            let cells = &self.data.slot_cell[self.state.g[i].index()];
            let obs_slot = self.data.obs_slot[i];
            let obs_cell = cells[obs_slot];
            let y_obs = self.data.y[i];
            let table = &mut self.state.tables[i];
            for s in 0..4 {
                if cells[s] == obs_cell {
                    table[s] = y_obs;
                    continue;
                }
                // Mirror a slot already drawn for the same canonical cell.
                let mut mirrored = false;
                for prev in 0..s {
                    if cells[prev] == cells[s] {
                        table[s] = table[prev];
                        mirrored = true;
                        break;
                    }
                }
                if !mirrored {
                    table[s] = theta.cells[cells[s]].sample(&mut self.rng);
                }
            }
        }
    }

    /// Step 4: conjugate parameter updates from observed outcomes routed to
    /// their canonical cells under the current strata.
    pub fn step_update_params(&mut self) {
        let mut counts = [0.0f64; 6];
        let mut stats = [CellStats::default(); N_CELLS];
        for i in 0..self.data.n_units() {
            let g = self.state.g[i];
            counts[g.index()] += 1.0;
            let cell = self.data.slot_cell[g.index()][self.data.obs_slot[i]];
            let st = &mut stats[cell];
            if self.data.y[i] == 0.0 {
                st.n_zero += 1.0;
            } else {
                let ln_y = self.data.ln_y[i];
                st.n_pos += 1.0;
                st.sum_log += ln_y;
                st.sum_logsq += ln_y * ln_y;
                st.sum_y += self.data.y[i];
            }
        }

        // pi ~ Dirichlet(counts + alpha), via normalized Gamma draws.
        let mut pi = [0.0f64; 6];
        let mut total = 0.0;
        for k in 0..6 {
            let shape = counts[k] + self.dirichlet_alpha[k];
            let draw = GammaDist::new(shape, 1.0).expect("valid gamma").sample(&mut self.rng);
            pi[k] = draw;
            total += draw;
        }
        for p in pi.iter_mut() {
            *p /= total;
        }
        self.state.theta.pi = pi;

        for cell in 0..N_CELLS {
            let st = &stats[cell];
            // A cell with no routed observations keeps its current
            // parameters. The conditional there is the bare prior, whose
            // near-improper variance tails would feed unbounded values into
            // the imputed tables (and through them the reported effects)
            // whenever a rare stratum empties for a stretch of iterations.
            if st.n_zero + st.n_pos == 0.0 {
                continue;
            }
            let p = BetaDist::new(self.priors.beta_a + st.n_zero, self.priors.beta_b + st.n_pos)
                .expect("valid beta")
                .sample(&mut self.rng);
            match self.family {
                Family::LogNormal => {
                    let (mu_prev, sigma2_prev) = match self.state.theta.cells[cell] {
                        OutcomeCell::LogNormal(c) => (c.mu, c.sigma2),
                        OutcomeCell::Gamma(_) => unreachable!("family mismatch"),
                    };
                    // Same guard for the positive part alone.
                    let (mu, sigma2) = if st.n_pos == 0.0 {
                        (mu_prev, sigma2_prev)
                    } else {
                        self.update_lognormal_cell(st, mu_prev)
                    };
                    self.state.theta.cells[cell] = OutcomeCell::LogNormal(LogNormalCell { p, mu, sigma2 });
                }
                Family::Gamma => {
                    let (alpha_prev, theta_prev) = match self.state.theta.cells[cell] {
                        OutcomeCell::Gamma(c) => (c.alpha, c.theta),
                        OutcomeCell::LogNormal(_) => unreachable!("family mismatch"),
                    };
                    let (alpha, theta_scale) = if st.n_pos == 0.0 {
                        (alpha_prev, theta_prev)
                    } else {
                        self.update_gamma_cell(st, alpha_prev, cell)
                    };
                    self.state.theta.cells[cell] = OutcomeCell::Gamma(GammaCell {
                        p,
                        alpha,
                        theta: theta_scale,
                    });
                }
            }
        }
    }

    /// Semi-conjugate update around the previous iteration's mu:
    /// sigma2 | mu_prev ~ IG(a0 + n/2, b0 + sum (ln y - mu_prev)^2 / 2), then
    /// mu | sigma2 ~ N((S2 + sigma2 mu0/v0) / (n + sigma2/v0),
    ///                 sigma2 / (n + sigma2/v0)).
    fn update_lognormal_cell(&mut self, st: &CellStats, mu_prev: f64) -> (f64, f64) {
        let n = st.n_pos;
        let dev_sq = st.sum_logsq - 2.0 * mu_prev * st.sum_log + n * mu_prev * mu_prev;
        let shape = self.priors.ig_shape + 0.5 * n;
        let rate = self.priors.ig_scale + 0.5 * dev_sq.max(0.0);
        let gamma_draw = GammaDist::new(shape, 1.0 / rate)
            .expect("valid gamma")
            .sample(&mut self.rng);
        // Cap the variance draw far above any data-supported value (log-scale
        // standard deviation 5). The cap only binds for cells holding one or
        // two observations, where the vague semi-conjugate prior otherwise
        // admits runaway location-scale excursions whose imputed outcomes
        // overflow the estimand averages.
        let sigma2 = (1.0 / gamma_draw).clamp(1e-12, 25.0);
        let denom = n + sigma2 / self.priors.mu_var;
        let mean = (st.sum_log + sigma2 * self.priors.mu_mean / self.priors.mu_var) / denom;
        let var = sigma2 / denom;
        let mu = Normal::new(mean, var.sqrt())
            .expect("valid normal")
            .sample(&mut self.rng);
        (mu, sigma2)
    }

    /// Scale via the conjugate rate update given the shape; shape via a
    /// random-walk Metropolis step on its log.
    fn update_gamma_cell(&mut self, st: &CellStats, alpha_prev: f64, cell: usize) -> (f64, f64) {
        let n = st.n_pos;
        // rate = 1/theta, prior Gamma(ig_shape, rate ig_scale)
        let shape = self.priors.ig_shape + n * alpha_prev;
        let rate = self.priors.ig_scale + st.sum_y;
        let beta_draw = GammaDist::new(shape, 1.0 / rate)
            .expect("valid gamma")
            .sample(&mut self.rng);
        // Same reciprocal-draw guard as the log-normal variance update.
        let theta_scale = (1.0 / beta_draw).clamp(1e-12, 1e12);

        let log_target = |alpha: f64| -> f64 {
            // Gamma(ig_shape, rate ig_scale) prior on the shape.
            (self.priors.ig_shape - 1.0) * alpha.ln() - self.priors.ig_scale * alpha
                + n * (-ln_gamma(alpha) - alpha * theta_scale.ln())
                + (alpha - 1.0) * st.sum_log
        };
        let scale = self.mh_scale[cell];
        let step = Normal::new(0.0, scale).expect("valid normal").sample(&mut self.rng);
        let proposal = (alpha_prev.ln() + step).exp();
        let mut alpha = alpha_prev;
        self.mh_attempt[cell] += 1;
        if proposal.is_finite() && proposal > 0.0 {
            let log_ratio =
                log_target(proposal) - log_target(alpha_prev) + proposal.ln() - alpha_prev.ln();
            if log_ratio >= 0.0 || self.rng.random::<f64>() < log_ratio.exp() {
                alpha = proposal;
                self.mh_accept[cell] += 1;
            }
        }
        if self.adapting && self.mh_attempt[cell] % 50 == 0 {
            let acc = self.mh_accept[cell] as f64 / self.mh_attempt[cell] as f64;
            self.mh_scale[cell] = (self.mh_scale[cell] * ((acc - 0.44) as f64).exp()).clamp(0.01, 10.0);
            self.mh_accept[cell] = 0;
            self.mh_attempt[cell] = 0;
        }
        (alpha, theta_scale)
    }

    /// One full Gibbs iteration.
    pub fn iterate(&mut self) -> Result<()> {
        self.step_sample_strata()?;
        self.step_impute_missing();
        self.step_update_params();
        debug_assert!(self.check_joint_consistency());
        Ok(())
    }

    /// Joint-consistency invariant: every stratum lies in its unit's
    /// compatibility set, collapsed slots mirror each other, and the
    /// observed slot equals the observed outcome.
    pub fn check_joint_consistency(&self) -> bool {
        for i in 0..self.data.n_units() {
            let g = self.state.g[i];
            let cands = &self.data.compat[self.data.triple[i]];
            if !cands.iter().any(|&(c, _)| c == g) {
                return false;
            }
            let cells = &self.data.slot_cell[g.index()];
            let table = &self.state.tables[i];
            if table[self.data.obs_slot[i]] != self.data.y[i] {
                return false;
            }
            for s in 0..4 {
                if table[s] < 0.0 {
                    return false;
                }
                for t in (s + 1)..4 {
                    if cells[s] == cells[t] && table[s] != table[t] {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// Dirichlet parameters for the stratum simplex: the configured
/// hyperparameters plus, when `dirichlet_concentration` is positive, that
/// many pseudo-units spread according to the method-of-moments share
/// estimate for this dataset.
fn effective_dirichlet_alpha(data: &FitData, priors: &Priors) -> [f64; 6] {
    let mut alpha = priors.dirichlet_alpha;
    if priors.dirichlet_concentration > 0.0 {
        let pin = moment_pi(data, priors.ridge_anchor);
        for k in 0..6 {
            alpha[k] += priors.dirichlet_concentration * pin[k];
        }
    }
    alpha
}

/// Method-of-moments starting point for the stratum shares. The always-taker
/// share is point identified by the receipt rate of untreated units under the
/// low-saturation mechanism, and the never-taker share by the non-receipt
/// rate of treated units under the high-saturation mechanism. The remaining
/// four shares satisfy three receipt-rate moment conditions with one flat
/// direction, resolved at quantile `anchor` of its feasible interval
/// (0.5 = midpoint). Shares are floored at 0.02 and renormalized so every
/// stratum starts reachable.
fn moment_pi(data: &FitData, anchor: f64) -> [f64; 6] {
    let mut n = [0.0f64; 8];
    for &t in &data.triple {
        n[t] += 1.0;
    }
    let rate = |a: usize, z: usize, d: usize| {
        let base = a * 4 + z * 2;
        let tot = n[base] + n[base + 1];
        if tot == 0.0 {
            f64::NAN
        } else {
            n[base + d] / tot
        }
    };
    let aa = rate(0, 0, 1);
    let nn = rate(1, 1, 0);
    let s1 = rate(0, 1, 1) - aa; // cc + ca
    let s2 = rate(1, 0, 1) - aa; // ca + na
    let s3 = rate(1, 0, 0) - nn; // cc + nc
    if ![aa, nn, s1, s2, s3].iter().all(|v| v.is_finite()) {
        return [1.0 / 6.0; 6];
    }
    let lo = (s1 - s2).max(0.0);
    let hi = s1.min(s3).max(lo);
    let cc = lo + anchor * (hi - lo);
    let raw = [cc, aa, nn, s1 - cc, s3 - cc, s2 - s1 + cc];
    let mut pi = [0.0f64; 6];
    let mut total = 0.0;
    for (k, &v) in raw.iter().enumerate() {
        pi[k] = v.max(0.02);
        total += pi[k];
    }
    for v in &mut pi {
        *v /= total;
    }
    pi
}

/// Data-driven starting point: moment-matched stratum shares, and each cell
/// at the zero fraction and log-moments of the observed outcomes routable to
/// it. Chains beyond the first jitter the location parameters.
fn initialize<R: Rng>(
    data: &FitData,
    family: Family,
    jitter: bool,
    rng: &mut R,
) -> Result<ModelParams> {
    let pi = moment_pi(data, 0.5);
    let mut cells = Vec::with_capacity(N_CELLS);
    for key in crate::strata::canonical_cells() {
        let collapsed = key.g.behavior(key.a) != 'c';
        let mut zeros = 0usize;
        let mut n = 0usize;
        let mut positives: Vec<f64> = Vec::new();
        for i in 0..data.n_units() {
            if data.mech[i] != key.a {
                continue;
            }
            if !collapsed && data.z[i] != key.z {
                continue;
            }
            if !data.compat[data.triple[i]].iter().any(|&(g, _)| g == key.g) {
                continue;
            }
            n += 1;
            if data.y[i] == 0.0 {
                zeros += 1;
            } else {
                positives.push(data.ln_y[i]);
            }
        }
        let p = if n == 0 { 0.1 } else { (zeros as f64 / n as f64).clamp(0.01, 0.99) };
        let (mu, sigma2) = if positives.len() >= 2 {
            let m = crate::stats::mean(&positives);
            let v = crate::stats::variance(&positives);
            (m, if v > 1e-12 { v } else { 1.0 })
        } else {
            (0.0, 1.0)
        };
        let cell = match family {
            Family::LogNormal => OutcomeCell::LogNormal(LogNormalCell { p, mu, sigma2 }),
            Family::Gamma => {
                // Method-of-moments on the raw positives.
                let raw: Vec<f64> = positives.iter().map(|&l| l.exp()).collect();
                let (alpha, theta) = if raw.len() >= 2 {
                    let m = crate::stats::mean(&raw);
                    let v = crate::stats::variance(&raw).max(1e-12);
                    ((m * m / v).clamp(0.1, 1e4), (v / m).max(1e-12))
                } else {
                    (1.0, 1.0)
                };
                OutcomeCell::Gamma(GammaCell { p, alpha, theta })
            }
        };
        cells.push(cell);
    }
    let mut params = ModelParams { pi, cells };
    if matches!(family, Family::LogNormal) {
        em_refine(data, &mut params, 30);
    }
    if jitter {
        for cell in params.cells.iter_mut() {
            match cell {
                OutcomeCell::LogNormal(c) => {
                    c.mu += Normal::new(0.0, 0.25).unwrap().sample(rng);
                    c.sigma2 *= Uniform::new(0.5, 2.0).unwrap().sample(rng);
                }
                OutcomeCell::Gamma(c) => {
                    c.theta *= Uniform::new(0.5, 2.0).unwrap().sample(rng);
                }
            }
        }
    }
    params.validate()?;
    Ok(params)
}

/// Expectation-maximization refinement of the starting parameters on the
/// observed-data likelihood (log-normal family only). Soft stratum
/// memberships use the same observed-arm weights as the Gibbs stratum step.
/// A few dozen iterations separate the heavily overlapping mixture
/// components far better than the arm-level moments above, which otherwise
/// smear high-outcome strata into every cell of a compatibility class and
/// leave the chain a long, biased burn-in transient.
fn em_refine(data: &FitData, params: &mut ModelParams, iters: usize) {
    for _ in 0..iters {
        let ln_pi: [f64; 6] = std::array::from_fn(|k| params.pi[k].max(1e-12).ln());
        let mut counts = [0.0f64; 6];
        let mut w_zero = [0.0f64; N_CELLS];
        let mut w_pos = [0.0f64; N_CELLS];
        let mut w_log = [0.0f64; N_CELLS];
        let mut w_logsq = [0.0f64; N_CELLS];
        let mut lw = [0.0f64; 6];
        for i in 0..data.n_units() {
            let cands = &data.compat[data.triple[i]];
            let y = data.y[i];
            let ln_y = data.ln_y[i];
            let mut max_w = f64::NEG_INFINITY;
            for (k, &(g, cell)) in cands.iter().enumerate() {
                let c = &params.cells[cell];
                let l = if y == 0.0 {
                    ln_pi[g.index()] + c.zero_prob().ln()
                } else {
                    ln_pi[g.index()]
                        + (1.0 - c.zero_prob()).ln()
                        + c.log_density_positive(y, ln_y)
                };
                lw[k] = l;
                max_w = max_w.max(l);
            }
            let mut total = 0.0;
            for w in lw[..cands.len()].iter_mut() {
                *w = (*w - max_w).exp();
                total += *w;
            }
            for (k, &(g, cell)) in cands.iter().enumerate() {
                let w = lw[k] / total;
                counts[g.index()] += w;
                if y == 0.0 {
                    w_zero[cell] += w;
                } else {
                    w_pos[cell] += w;
                    w_log[cell] += w * ln_y;
                    w_logsq[cell] += w * ln_y * ln_y;
                }
            }
        }
        let total: f64 = counts.iter().sum();
        for k in 0..6 {
            params.pi[k] = (counts[k] / total).max(1e-6);
        }
        let norm: f64 = params.pi.iter().sum();
        for p in params.pi.iter_mut() {
            *p /= norm;
        }
        for cell in 0..N_CELLS {
            let n = w_zero[cell] + w_pos[cell];
            // Skip cells with almost no soft mass; their parameters would be
            // noise and the Gibbs empty-cell guard handles them anyway.
            if n < 1.0 {
                continue;
            }
            if let OutcomeCell::LogNormal(c) = &mut params.cells[cell] {
                c.p = (w_zero[cell] / n).clamp(1e-4, 1.0 - 1e-4);
                if w_pos[cell] >= 2.0 {
                    let mu = w_log[cell] / w_pos[cell];
                    let var = (w_logsq[cell] / w_pos[cell] - mu * mu).max(0.05);
                    c.mu = mu;
                    c.sigma2 = var;
                }
            }
        }
    }
}

/// Run one chain, streaming retained draws to `sink`. Deterministic given
/// (seed, chain index).
pub fn run_chain<F>(
    data: &FitData,
    priors: &Priors,
    family: Family,
    cfg: &ChainConfig,
    chain_idx: usize,
    mut sink: F,
) -> Result<()>
where
    F: FnMut(DrawView<'_>),
{
    cfg.validate()?;
    let mut sampler = Sampler::new(data, priors, family, cfg, chain_idx)?;
    for t in 0..cfg.iterations {
        if t == cfg.burn_in {
            sampler.set_adapting(false);
        }
        sampler.iterate()?;
        if t >= cfg.burn_in && (t - cfg.burn_in) % cfg.thin == 0 {
            sink(DrawView {
                iteration: t,
                theta: &sampler.state.theta,
                g: &sampler.state.g,
                tables: &sampler.state.tables,
            });
        }
    }
    Ok(())
}
