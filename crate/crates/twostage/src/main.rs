//! Command-line surface: simulate datasets, fit them, summarize spooled
//! draws, and benchmark frequentist properties.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use twostage::config::RunConfig;
use twostage::dataset;
use twostage::error::{Error, Result};
use twostage::fit::{fit_dataset, summarize_records, weights_for, DrawRecord};
use twostage::gibbs::Family;
use twostage::sim::{
    generate, run_study, superpop_truth_analytic, superpop_truth_bruteforce, write_metrics_csv,
    StudyConfig,
};

#[derive(Parser)]
#[command(
    name = "twostage",
    about = "Bayesian inference for two-stage randomized experiments with interference and noncompliance"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic experiment and its super-population truths.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a dataset and summarize the posterior of all estimands.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Dataset CSV; overrides the config `data` path.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the configured number of chains.
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Also spool every retained draw to <out>/draws.ndjson.
        #[arg(long)]
        spool: bool,
    },
    /// Recompute estimand summaries from a spooled draw file.
    Summarize {
        #[arg(long)]
        draws: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the frequentist replication study and score coverage/bias/MSE.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        println!(
            "{}",
            serde_json::json!({ "status": "error", "error": e.to_string() })
        );
        std::process::exit(1);
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Simulate { config, seed, out } => {
            let cfg = RunConfig::load(&config, seed, None)?;
            ensure_dir(&out)?;
            let dgp = cfg.resolved_dgp();
            let sim = cfg.sim.ok_or_else(|| {
                Error::InvalidConfig("simulate requires a `sim` section with sizes".into())
            })?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let exp = generate(&dgp, sim.n_units, sim.n_clusters, &mut rng)?;
            let data_path = out.join("data.csv");
            dataset::write_csv(&exp.dataset, std::fs::File::create(&data_path)?)?;
            let truth_path = out.join("truth.json");
            let truths = match dgp.family {
                Family::LogNormal => superpop_truth_analytic(&dgp)?,
                Family::Gamma => superpop_truth_bruteforce(&dgp, 2_000_000, cfg.seed)?.0,
            };
            std::fs::write(&truth_path, serde_json::to_string_pretty(&truths)?)?;
            cfg.write_resolved(&out)?;
            println!(
                "{}",
                serde_json::json!({
                    "status": "ok",
                    "command": "simulate",
                    "units": exp.dataset.n_units(),
                    "clusters": exp.dataset.n_clusters(),
                    "data": data_path,
                    "truth": truth_path,
                })
            );
        }
        Cmd::Fit {
            config,
            data,
            seed,
            chains,
            out,
            spool,
        } => {
            let mut cfg = RunConfig::load(&config, seed, chains)?;
            if let Some(d) = data {
                cfg.data = Some(d);
            }
            let data_path = cfg
                .data
                .clone()
                .ok_or_else(|| Error::InvalidConfig("fit requires a dataset path".into()))?;
            ensure_dir(&out)?;
            let ds = dataset::load_csv(&data_path)?;
            let weights = weights_for(&ds, cfg.design.q0, cfg.design.q1, cfg.weight_rule);
            let (output, records) =
                fit_dataset(&ds, &cfg.priors, cfg.family, &cfg.chain, &weights, spool)?;
            let est_path = out.join("estimands.json");
            std::fs::write(&est_path, serde_json::to_string_pretty(&output.summaries)?)?;
            let diag_path = out.join("diagnostics.json");
            std::fs::write(&diag_path, serde_json::to_string_pretty(&output.diagnostics)?)?;
            let spool_path = if spool {
                let path = out.join("draws.ndjson");
                let mut w = BufWriter::new(std::fs::File::create(&path)?);
                for r in &records {
                    serde_json::to_writer(&mut w, r)?;
                    w.write_all(b"\n")?;
                }
                w.flush()?;
                Some(path)
            } else {
                None
            };
            cfg.write_resolved(&out)?;
            println!(
                "{}",
                serde_json::json!({
                    "status": "ok",
                    "command": "fit",
                    "units": ds.n_units(),
                    "chains": output.n_chains,
                    "retained_per_chain": output.retained_per_chain,
                    "estimands": est_path,
                    "diagnostics": diag_path,
                    "draws": spool_path,
                })
            );
        }
        Cmd::Summarize { draws, out } => {
            ensure_dir(&out)?;
            let reader = BufReader::new(std::fs::File::open(&draws)?);
            let mut records: Vec<DrawRecord> = Vec::new();
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                records.push(serde_json::from_str(&line)?);
            }
            let summaries = summarize_records(&records)?;
            let est_path = out.join("estimands.json");
            std::fs::write(&est_path, serde_json::to_string_pretty(&summaries)?)?;
            println!(
                "{}",
                serde_json::json!({
                    "status": "ok",
                    "command": "summarize",
                    "draws_read": records.len(),
                    "estimands": est_path,
                })
            );
        }
        Cmd::Benchmark { config, seed, out } => {
            let cfg = RunConfig::load(&config, seed, None)?;
            ensure_dir(&out)?;
            let dgp = cfg.resolved_dgp();
            let sim = cfg.sim.ok_or_else(|| {
                Error::InvalidConfig("benchmark requires a `sim` section with sizes".into())
            })?;
            let truths = match dgp.family {
                Family::LogNormal => superpop_truth_analytic(&dgp)?,
                Family::Gamma => superpop_truth_bruteforce(&dgp, 2_000_000, cfg.seed)?.0,
            };
            let study = StudyConfig {
                n_units: sim.n_units,
                n_clusters: sim.n_clusters,
                n_sim: sim.n_sim,
                chain: cfg.chain.clone(),
                seed: cfg.seed,
                priors: cfg.priors.clone(),
            };
            let rows = run_study(&dgp, cfg.family, &study, &truths)?;
            let metrics_path = out.join("metrics.csv");
            write_metrics_csv(&rows, std::fs::File::create(&metrics_path)?)?;
            cfg.write_resolved(&out)?;
            println!(
                "{}",
                serde_json::json!({
                    "status": "ok",
                    "command": "benchmark",
                    "n_sim": sim.n_sim,
                    "metrics": metrics_path,
                })
            );
        }
    }
    Ok(())
}
