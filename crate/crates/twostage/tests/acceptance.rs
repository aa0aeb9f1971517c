//! Acceptance gate: one test per acceptance criterion, each printing a
//! single pass/fail line. Criteria 3 and 4 share one replication study and
//! are printed from the same test.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines
//! as they complete; several tests run minutes-long replication studies.

use std::time::Instant;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Beta, ContinuousCDF, Gamma, Normal};

use twostage::design::Mechanism;
use twostage::estimands::{
    caoe_identity_residual, estimand_index, evaluate_all, DesignWeights, ESTIMAND_NAMES,
};
use twostage::fit::fit_dataset;
use twostage::gibbs::{ChainConfig, Family, FitData, LatentState, Sampler};
use twostage::outcome::{LogNormalCell, ModelParams, OutcomeCell, Priors};
use twostage::sim::{
    generate_with_sizes, run_study, superpop_truth_analytic, superpop_truth_bruteforce,
    DgpConfig, MetricRow, StudyConfig, SuperpopTruths, STUDY_TARGETS,
};
use twostage::strata::{cell_index, compatible_strata, ComplianceType};

fn report(criterion: &str, ok: bool) {
    println!("acceptance {}: {}", criterion, if ok { "pass" } else { "FAIL" });
}

/// |x - reference| within half a unit in the reference's fourth significant
/// figure.
fn matches_4_sig_figs(x: f64, reference: f64) -> bool {
    let mag = reference.abs().log10().floor();
    let tol = 0.5 * 10f64.powf(mag - 3.0);
    (x - reference).abs() <= tol
}

/// Closed-form benchmark truths for the six study targets.
const REFERENCE_TRUTHS: [(&str, f64); 6] = [
    ("CADE(a0;a0)", 4765.78),
    ("CADE(a1;a1)", 5156.41),
    ("DEY(a0)", 2382.89),
    ("DEY(a1)", 2324.13),
    ("DED(a0)", 0.5),
    ("DED(a1)", 0.45),
];

#[test]
fn criterion_1_analytic_truths() {
    let start = Instant::now();
    let truths = superpop_truth_analytic(&DgpConfig::benchmark_lognormal()).unwrap();
    let elapsed = start.elapsed();
    let mut ok = elapsed.as_secs_f64() < 1.0;
    for (name, reference) in REFERENCE_TRUTHS {
        let v = truths.by_name(name).unwrap();
        if !matches_4_sig_figs(v, reference) {
            eprintln!("  {name}: {v} vs {reference}");
            ok = false;
        }
    }
    report("criterion 1 (closed-form benchmark truths)", ok);
    assert!(ok);
}

#[test]
fn criterion_2_bruteforce_truths_agree() {
    let start = Instant::now();
    let cfg = DgpConfig::benchmark_lognormal();
    let analytic = superpop_truth_analytic(&cfg).unwrap();
    let (mc, se) = superpop_truth_bruteforce(&cfg, 40_000_000, 424_242).unwrap();
    let mut ok = true;
    for name in STUDY_TARGETS {
        let a = analytic.by_name(name).unwrap();
        let m = mc.by_name(name).unwrap();
        let s = se.by_name(name).unwrap();
        if (m - a).abs() > 3.0 * s {
            eprintln!("  {name}: analytic {a}, monte carlo {m} +- {s}");
            ok = false;
        }
    }
    let elapsed = start.elapsed();
    if elapsed.as_secs_f64() >= 120.0 {
        eprintln!("  brute force took {elapsed:?}");
        ok = false;
    }
    report("criterion 2 (brute-force truths within 3 SE)", ok);
    assert!(ok);
}

fn benchmark_study(n_sim: usize, seed: u64) -> (Vec<MetricRow>, SuperpopTruths) {
    let dgp = DgpConfig::benchmark_lognormal();
    let truths = superpop_truth_analytic(&dgp).unwrap();
    let study = StudyConfig {
        n_units: 5000,
        n_clusters: 100,
        n_sim,
        chain: ChainConfig {
            iterations: 4000,
            burn_in: 2000,
            thin: 1,
            seed: 0,
            chains: 1,
            strata_update_fraction: ChainConfig::DEFAULT_STRATA_UPDATE_FRACTION,
        },
        seed,
        priors: study_priors(),
    };
    let rows = run_study(&dgp, Family::LogNormal, &study, &truths).unwrap();
    (rows, truths)
}

/// Weakly informative priors used for the replication study. The stratum
/// simplex has one flat direction (trading full compliers against the two
/// one-sided complier strata) that the likelihood resolves only through
/// heavily overlapping outcome mixtures; with fully diffuse priors the
/// chain drifts to the boundary where those two strata empty out, which
/// biases the complier effect under high saturation upward. A modest
/// Dirichlet floor on the two weakly identified strata plus a unit-scale
/// inverse-gamma prior on the log-variances (which stops any one component
/// from inflating its variance to absorb its neighbors) keeps the posterior
/// interior without materially informing the identified quantities.
fn study_priors() -> Priors {
    Priors {
        dirichlet_alpha: [1.0, 1.0, 1.0, 8.0, 8.0, 1.0],
        ig_shape: 5.0,
        ig_scale: 5.0,
        ..Priors::default()
    }
}

fn row<'a>(rows: &'a [MetricRow], name: &str) -> &'a MetricRow {
    rows.iter().find(|r| r.name == name).unwrap()
}

#[test]
fn criteria_3_and_4_frequentist_study() {
    let (rows, _) = benchmark_study(100, 7);
    for r in &rows {
        eprintln!(
            "  {}: truth {:.2}, coverage {:.2}, bias {:+.4}, mse {:.3e}",
            r.name, r.truth, r.coverage, r.bias, r.mse
        );
    }

    let mut ok3 = true;
    for name in ["CADE(a0;a0)", "CADE(a1;a1)"] {
        let r = row(&rows, name);
        if !(0.90..=1.00).contains(&r.coverage) {
            eprintln!("  {name}: coverage {}", r.coverage);
            ok3 = false;
        }
        if r.bias.abs() / r.truth >= 0.15 {
            eprintln!("  {name}: |bias|/truth {}", r.bias.abs() / r.truth);
            ok3 = false;
        }
        // Benchmark-scale mean squared error of the posterior medians is of
        // order 1e6-1e7; accept up to five times the top of that range.
        if r.mse >= 5.0e7 {
            eprintln!("  {name}: mse {}", r.mse);
            ok3 = false;
        }
    }
    report(
        "criterion 3 (complier-effect coverage, bias, and MSE at N=5000)",
        ok3,
    );

    let mut ok4 = true;
    for name in ["DED(a0)", "DED(a1)"] {
        let r = row(&rows, name);
        if r.bias.abs() > 0.02 {
            eprintln!("  {name}: mean median bias {}", r.bias);
            ok4 = false;
        }
    }
    report("criterion 4 (receipt-rate contrasts recovered within 0.02)", ok4);
    assert!(ok3 && ok4);
}

/// Two-sided Kolmogorov-Smirnov statistic of `draws` against `cdf`.
fn ks_statistic<F: Fn(f64) -> f64>(draws: &mut [f64], cdf: F) -> f64 {
    draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = draws.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in draws.iter().enumerate() {
        let c = cdf(x);
        d = d.max((c - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - c).abs());
    }
    d
}

#[test]
fn criterion_5_conjugate_updates_match_reference_distributions() {
    let start = Instant::now();
    // A fixed 18-unit dataset covering zeros and positives in several cells.
    let y = vec![
        0.0, 0.0, 5.5, 9.0, 12.0, 3.2, 20.0, 7.0, // (a0, z=1, d=0)
        0.0, 11.0, 6.0, 15.0, // (a0, z=0, d=1) -> always-takers
        8.0, 0.0, 15.0, 30.0, 2.0, 6.0, // (a1, z=1, d=1)
    ];
    let n_units = y.len();
    let mech = [vec![Mechanism::A0; 12], vec![Mechanism::A1; 6]].concat();
    let z = vec![1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1];
    let d = vec![0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1];
    let data = FitData::from_parts(y.clone(), mech.clone(), z, d, vec![0; n_units], None).unwrap();

    // Fixed strata, each inside its unit's compatibility set.
    use ComplianceType::{Aa, Ca, Cc, Na, Nc, Nn};
    let g = vec![
        Nn, Nc, Nn, Nn, Na, Nn, Nn, Nn, //
        Aa, Aa, Aa, Aa, //
        Cc, Ca, Aa, Nc, Na, Cc,
    ];

    // Baseline parameters with locations near the data scale, so the
    // far-tail variance guard is never reached and the reference
    // distributions below are exact.
    let base_cells: Vec<OutcomeCell> = (0..16)
        .map(|c| {
            OutcomeCell::LogNormal(LogNormalCell {
                p: 0.3,
                mu: 2.0 + 0.05 * c as f64,
                sigma2: 1.0,
            })
        })
        .collect();
    let base = ModelParams {
        pi: [1.0 / 6.0; 6],
        cells: base_cells,
    };
    let priors = Priors::default();
    let baseline = LatentState {
        g: g.clone(),
        tables: y.iter().map(|&v| [v; 4]).collect(),
        theta: base.clone(),
    };
    let mut sampler = Sampler::with_state(&data, &priors, Family::LogNormal, baseline.clone(), 99);

    // Independently derived sufficient statistics for the monitored cell:
    // never-takers observed under the low mechanism.
    let watched = cell_index(Nn, 0, Mechanism::A0);
    let mu_prev = match base.cells[watched] {
        OutcomeCell::LogNormal(c) => c.mu,
        _ => unreachable!(),
    };
    let mut n_zero = 0.0;
    let mut dev_sq = 0.0;
    let mut logs = Vec::new();
    for i in 0..n_units {
        if g[i] == Nn && mech[i] == Mechanism::A0 {
            if y[i] == 0.0 {
                n_zero += 1.0;
            } else {
                logs.push(y[i].ln());
                dev_sq += (y[i].ln() - mu_prev).powi(2);
            }
        }
    }
    let n_pos = logs.len() as f64;
    let sum_log: f64 = logs.iter().sum();
    let count_cc = g.iter().filter(|&&s| s == Cc).count() as f64;

    const N_DRAWS: usize = 100_000;
    let mut pi_cc = Vec::with_capacity(N_DRAWS);
    let mut p_draws = Vec::with_capacity(N_DRAWS);
    let mut prec_draws = Vec::with_capacity(N_DRAWS);
    let mut mu_std = Vec::with_capacity(N_DRAWS);
    for _ in 0..N_DRAWS {
        // Reset so every call is one conjugate draw from the same state.
        sampler.state.theta = base.clone();
        sampler.step_update_params();
        pi_cc.push(sampler.state.theta.pi[0]);
        match sampler.state.theta.cells[watched] {
            OutcomeCell::LogNormal(c) => {
                p_draws.push(c.p);
                prec_draws.push(1.0 / c.sigma2);
                let denom = n_pos + c.sigma2 / priors.mu_var;
                let mean = (sum_log + c.sigma2 * priors.mu_mean / priors.mu_var) / denom;
                mu_std.push((c.mu - mean) / (c.sigma2 / denom).sqrt());
            }
            _ => unreachable!(),
        }
    }

    // alpha = 0.01, n = 1e5.
    let d_crit = 1.6276 / (N_DRAWS as f64).sqrt();
    let mut ok = true;
    let mut check = |label: &str, draws: &mut Vec<f64>, cdf: Box<dyn Fn(f64) -> f64>| {
        let d = ks_statistic(draws, cdf);
        if d >= d_crit {
            eprintln!("  {label}: KS statistic {d:.5} >= {d_crit:.5}");
            ok = false;
        }
    };
    // Dirichlet marginal of one component is Beta(c_g + a_g, sum of the rest).
    let beta_pi = Beta::new(
        count_cc + 1.0,
        (n_units as f64 - count_cc) + 5.0,
    )
    .unwrap();
    check("stratum share", &mut pi_cc, Box::new(move |x| beta_pi.cdf(x)));
    let beta_p = Beta::new(1.0 + n_zero, 1.0 + n_pos).unwrap();
    check("zero probability", &mut p_draws, Box::new(move |x| beta_p.cdf(x)));
    let gamma_prec = Gamma::new(0.01 + 0.5 * n_pos, 0.01 + 0.5 * dev_sq).unwrap();
    check("precision", &mut prec_draws, Box::new(move |x| gamma_prec.cdf(x)));
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    check("location", &mut mu_std, Box::new(move |x| std_normal.cdf(x)));

    // Stratum draw for a single ambiguous unit against its categorical
    // posterior.
    let y1 = vec![40.0];
    let data1 = FitData::from_parts(
        y1.clone(),
        vec![Mechanism::A1],
        vec![1],
        vec![1],
        vec![0],
        None,
    )
    .unwrap();
    let state1 = LatentState {
        g: vec![Cc],
        tables: vec![[40.0; 4]],
        theta: base.clone(),
    };
    let mut s1 = Sampler::with_state(&data1, &priors, Family::LogNormal, state1, 5);
    let cands = compatible_strata(Mechanism::A1, 1, 1);
    let mut expected: Vec<f64> = cands
        .iter()
        .map(|&gc| {
            let cell = &base.cells[cell_index(gc, 1, Mechanism::A1)];
            (1.0 / 6.0) * (1.0 - cell.zero_prob()) * cell.log_density_positive(40.0, 40.0f64.ln()).exp()
        })
        .collect();
    let total: f64 = expected.iter().sum();
    for e in &mut expected {
        *e /= total;
    }
    let mut freq = vec![0.0; cands.len()];
    for _ in 0..N_DRAWS {
        s1.step_sample_strata().unwrap();
        let k = cands.iter().position(|&c| c == s1.state.g[0]).unwrap();
        freq[k] += 1.0;
    }
    for (k, &gc) in cands.iter().enumerate() {
        let f = freq[k] / N_DRAWS as f64;
        let se = (expected[k] * (1.0 - expected[k]) / N_DRAWS as f64).sqrt();
        if (f - expected[k]).abs() > 4.0 * se.max(1e-4) {
            eprintln!("  stratum {gc}: frequency {f:.4} vs {:.4}", expected[k]);
            ok = false;
        }
    }

    if start.elapsed().as_secs_f64() >= 60.0 {
        eprintln!("  took {:?}", start.elapsed());
        ok = false;
    }
    report("criterion 5 (conditional draws match reference distributions)", ok);
    assert!(ok);
}

#[test]
fn criterion_6_estimand_identities() {
    use ComplianceType::{Cc, Na, Nn};
    let mut ok = true;
    let mut rng = ChaCha8Rng::seed_from_u64(6);

    // Decomposition identity on random tables.
    use rand::Rng;
    for _ in 0..1000 {
        let sizes = [
            rng.random_range(2..40),
            rng.random_range(2..40),
            rng.random_range(2..40),
        ];
        let mut tables = Vec::new();
        let mut cluster_of = Vec::new();
        for (j, &n) in sizes.iter().enumerate() {
            for _ in 0..n {
                tables.push(std::array::from_fn(|_| rng.random::<f64>() * 1e3));
                cluster_of.push(j);
            }
        }
        let weights = DesignWeights::from_design(&sizes, 0.4, 0.8);
        if caoe_identity_residual(&tables, &cluster_of, &weights) >= 1e-10 {
            ok = false;
        }
    }

    // Null configuration 1: constant tables, mixed strata -> every
    // outcome-based estimand is exactly zero.
    let sizes = [6usize, 9];
    let mut tables = Vec::new();
    let mut g = Vec::new();
    let mut cluster_of = Vec::new();
    for (j, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            tables.push([123.0; 4]);
            g.push(ComplianceType::ALL[i % 6]);
            cluster_of.push(j);
        }
    }
    let weights = DesignWeights::from_design(&sizes, 0.4, 0.8);
    let out = evaluate_all(&tables, &g, &cluster_of, &weights).unwrap();
    for name in ["DEY(a0)", "DEY(a1)", "SEY(0)", "SEY(1)", "OEY(a1,a0)"] {
        if out[estimand_index(name).unwrap()].unwrap() != 0.0 {
            eprintln!("  {name} nonzero under constant tables");
            ok = false;
        }
    }
    for name in &ESTIMAND_NAMES[9..] {
        if out[estimand_index(name).unwrap()].unwrap() != 0.0 {
            eprintln!("  {name} nonzero under constant tables");
            ok = false;
        }
    }

    // Null configuration 2: all never-takers -> receipt contrasts exactly 0.
    let nn = vec![Nn; tables.len()];
    let out = evaluate_all(&tables, &nn, &cluster_of, &weights).unwrap();
    for name in ["DED(a0)", "DED(a1)", "SED(0)", "SED(1)"] {
        if out[estimand_index(name).unwrap()].unwrap() != 0.0 {
            eprintln!("  {name} nonzero under all never-takers");
            ok = false;
        }
    }
    // And full compliance makes the receipt contrast exactly 1.
    let cc = vec![Cc; tables.len()];
    let out = evaluate_all(&tables, &cc, &cluster_of, &weights).unwrap();
    if out[estimand_index("DED(a0)").unwrap()].unwrap() != 1.0
        || out[estimand_index("DED(a1)").unwrap()].unwrap() != 1.0
    {
        eprintln!("  DED != 1 under full compliance");
        ok = false;
    }
    // Sanity: the saturation-shift stratum raises receipt everywhere.
    let na = vec![Na; tables.len()];
    let out = evaluate_all(&tables, &na, &cluster_of, &weights).unwrap();
    if out[estimand_index("SED(0)").unwrap()].unwrap() != 1.0 {
        ok = false;
    }

    // Receipt preimage property across all 24 (stratum, assignment,
    // mechanism) combinations: an independently coded receipt rule, and
    // compatibility sets that are its exact preimages.
    for gc in ComplianceType::ALL {
        for a in Mechanism::ALL {
            for zv in [0u8, 1] {
                let expected = match gc.behavior(a) {
                    'n' => 0,
                    'a' => 1,
                    _ => zv,
                };
                if twostage::strata::potential_receipt(gc, zv, a) != expected {
                    eprintln!("  receipt rule mismatch at ({gc}, {zv}, {})", a.label());
                    ok = false;
                }
                for dv in [0u8, 1] {
                    let in_set = compatible_strata(a, zv, dv).contains(&gc);
                    if in_set != (expected == dv) {
                        eprintln!("  preimage mismatch at ({gc}, {zv}, {})", a.label());
                        ok = false;
                    }
                }
            }
        }
    }

    report("criterion 6 (estimand and compatibility identities)", ok);
    assert!(ok);
}

#[test]
fn criterion_7_large_application_shaped_fit() {
    // Synthetic stand-in with the shape of the large application: 10,072
    // units in 435 clusters (368 of size 23, 67 of size 24), saturations
    // 0.4 / 0.8, zero-inflated heavy-tailed outcomes with a few dozen
    // values above 1e5.
    let mut cfg = DgpConfig::benchmark_lognormal();
    for cell in cfg.cells.iter_mut() {
        if let OutcomeCell::LogNormal(c) = cell {
            c.mu -= 1.6;
        }
    }
    let mut sizes = vec![23usize; 368];
    sizes.extend(vec![24usize; 67]);
    assert_eq!(sizes.iter().sum::<usize>(), 10_072);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let exp = generate_with_sizes(&cfg, &sizes, 218, &mut rng).unwrap();
    let extremes = exp
        .dataset
        .records
        .iter()
        .filter(|r| r.y > 1e5)
        .count();
    let mut ok = (15..=80).contains(&extremes);
    if !ok {
        eprintln!("  {extremes} outcomes above 1e5");
    }

    let chain = ChainConfig {
        iterations: 100_000,
        burn_in: 50_000,
        thin: 10,
        seed: 77,
        chains: 1,
        strata_update_fraction: ChainConfig::DEFAULT_STRATA_UPDATE_FRACTION,
    };
    // The weakly identified flat direction of the stratum simplex mixes
    // slowly under fully diffuse priors (effective sample sizes for the
    // full-complier and low-side-complier shares fall just short of 100
    // even at this chain length); fit with the same weakly informative
    // priors the replication study uses.
    let (output, _) = fit_dataset(
        &exp.dataset,
        &study_priors(),
        Family::LogNormal,
        &chain,
        &exp.weights,
        false,
    )
    .unwrap();

    for diag in &output.diagnostics {
        eprintln!(
            "  {}: mean {:.4}, ess {:.0}, rhat {:.3}",
            diag.name, diag.mean, diag.ess, diag.rhat
        );
        if !(diag.ess > 100.0) {
            ok = false;
        }
    }
    if output.summaries.len() != ESTIMAND_NAMES.len() {
        ok = false;
    }
    for s in &output.summaries {
        if ![s.mean, s.median, s.q025, s.q975].iter().all(|v| v.is_finite()) {
            eprintln!("  {}: non-finite summary", s.name);
            ok = false;
        }
    }
    report("criterion 7 (application-shaped fit mixes with finite summaries)", ok);
    assert!(ok);
}

#[test]
fn criterion_8_misspecified_fit_stays_accurate() {
    let dgp = DgpConfig::benchmark_gamma();
    let (truths, _) = superpop_truth_bruteforce(&dgp, 2_000_000, 88).unwrap();
    let study = StudyConfig {
        n_units: 5000,
        n_clusters: 100,
        n_sim: 50,
        chain: ChainConfig {
            iterations: 4000,
            burn_in: 2000,
            thin: 1,
            seed: 0,
            chains: 1,
            strata_update_fraction: ChainConfig::DEFAULT_STRATA_UPDATE_FRACTION,
        },
        seed: 8,
        priors: Priors::default(),
    };
    let well = run_study(&dgp, Family::Gamma, &study, &truths).unwrap();
    let mis = run_study(&dgp, Family::LogNormal, &study, &truths).unwrap();

    let name = "CADE(a0;a0)";
    let rw = row(&well, name);
    let rm = row(&mis, name);
    eprintln!(
        "  well-specified: coverage {:.2}, mse {:.3e}; misspecified: coverage {:.2}, mse {:.3e}",
        rw.coverage, rw.mse, rm.coverage, rm.mse
    );
    let mut ok = true;
    if rm.coverage < 0.90 {
        eprintln!("  misspecified coverage {}", rm.coverage);
        ok = false;
    }
    if rm.mse >= 5.0 * rw.mse {
        eprintln!("  misspecified mse {} vs well-specified {}", rm.mse, rw.mse);
        ok = false;
    }
    report("criterion 8 (misspecified outcome family keeps accuracy)", ok);
    assert!(ok);
}
