//! Command-line entry points.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::benchmark::{aggregate, run_benchmark, scenario_hyperparameters, summarize_dir, write_metrics, Aggregate};
use crate::config::{RunConfig, ScenarioFile};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, load_outcome, load_q, preprocess, write_column, write_matrix, write_rows, RawAbundanceTable};
use crate::model::Dataset;
use crate::sampler::{run_chain, ChainSummary};
use crate::simulation::simulate;

/// Environment variable holding the default worker count for `benchmark`.
pub const THREADS_ENV: &str = "BSRMM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "bsrmm", version, about = "Sparse regression on compositional predictors with a left-censored outcome")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate one simulated dataset.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replicate index; replicate k matches replicate k of `benchmark`.
        #[arg(long, default_value_t = 0)]
        replicate: u64,
    },
    /// Fit one chain to an abundance table and an outcome file.
    Fit {
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: PathBuf,
        #[arg(long)]
        q: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate and fit replicates, then write per-replicate and aggregate metrics.
    Benchmark {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 10)]
        replicates: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = THREADS_ENV)]
        threads: Option<usize>,
    },
    /// Re-render aggregate.json from a benchmark's metrics.csv.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate {
            scenario,
            out,
            replicate,
        } => cmd_simulate(&scenario, &out, replicate),
        Command::Fit { x, y, q, config, out } => cmd_fit(&x, &y, q.as_deref(), config.as_deref(), &out),
        Command::Benchmark {
            scenario,
            replicates,
            out,
            threads,
        } => {
            let threads = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            cmd_benchmark(&scenario, replicates, &out, threads)
        }
        Command::Summarize { input } => cmd_summarize(&input),
    }
}

/// Files are written into a staging directory and moved into place only
/// once every file of the command has been produced.
struct Staging {
    out: PathBuf,
    dir: PathBuf,
    done: bool,
}

impl Staging {
    fn new(out: &Path) -> Result<Self> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let dir = out.join(".incomplete");
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Staging {
            out: out.to_path_buf(),
            dir,
            done: false,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn commit(mut self) -> Result<()> {
        let entries = fs::read_dir(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&self.dir, e))?;
            let target = self.out.join(entry.file_name());
            fs::rename(entry.path(), &target).map_err(|e| Error::io(&target, e))?;
        }
        fs::remove_dir(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        self.done = true;
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.done {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ids(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn cmd_simulate(scenario: &Path, out: &Path, replicate: u64) -> Result<()> {
    let file = ScenarioFile::load(scenario)?;
    let spec = file.scenario.replicate(replicate);
    let sim = simulate(&spec)?;
    let hp = scenario_hyperparameters(&file)?;
    let (n, p) = (spec.n, spec.p);
    let samples = ids("sample_", n);
    let features = ids("feature_", p);
    let truth = &sim.truth;
    let stage = Staging::new(out)?;

    write_matrix(&stage.path("X.csv"), "sample_id", &samples, &features, &sim.covariates.u)?;
    let y_raw: Vec<Option<f64>> = (0..n)
        .map(|i| truth.missingness.observed[i].then(|| truth.y_true[i].exp()))
        .collect();
    write_column(&stage.path("y.csv"), "sample_id", "y", &samples, &y_raw)?;
    let y_true: Vec<Option<f64>> = truth.y_true.iter().map(|v| Some(*v)).collect();
    write_column(&stage.path("truth.csv"), "sample_id", "y_true", &samples, &y_true)?;
    let flag = |b: bool| if b { "1" } else { "0" }.to_string();
    write_rows(
        &stage.path("masks.csv"),
        &["sample_id", "observed", "mnar", "train"],
        (0..n).map(|i| {
            vec![
                samples[i].clone(),
                flag(truth.missingness.observed[i]),
                flag(truth.missingness.mnar[i]),
                flag(truth.train[i]),
            ]
        }),
    )?;
    let q = hp
        .ising_q
        .as_ref()
        .map(|q| q.matrix().clone())
        .unwrap_or_else(|| nalgebra::DMatrix::zeros(p, p));
    write_matrix(&stage.path("Q.csv"), "feature_id", &features, &features, &q)?;
    let beta: Vec<Option<f64>> = truth.beta_true.iter().map(|b| Some(*b)).collect();
    write_column(&stage.path("beta_true.csv"), "feature_id", "beta", &features, &beta)?;
    write_json(
        &stage.path("metadata.json"),
        &json!({
            "scenario": spec,
            "replicate": replicate,
            "sigma_true": truth.sigma_true,
            "beta0_true": truth.beta0_true,
            "xi": truth.missingness.xi,
            "n_missing": truth.missingness.n_missing(),
        }),
    )?;
    stage.commit()
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for part in parts {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn cmd_fit(x: &Path, y: &Path, q: Option<&Path>, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = match config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    let raw = RawAbundanceTable::read(x)?;
    let design = preprocess(&raw, &cfg.preprocess())?;
    for d in &design.dropped {
        log::info!("dropped feature {}: {}", d.feature_id, d.reason);
    }
    let outcome = load_outcome(y, &design.sample_ids)?;
    let dataset = Dataset::new(design.x.clone(), &outcome.y, Some(outcome.xi))?
        .with_ids(design.sample_ids.clone(), design.feature_ids.clone())?;
    let mut hp = cfg.hyperparameters(dataset.p());
    if let Some(q) = q {
        hp.ising_q = Some(load_q(q, &design.feature_ids)?);
    }
    let run_hash = {
        let config_text = cfg.to_toml();
        let q_bytes = q.map(read_bytes).transpose()?.unwrap_or_default();
        sha256_hex(&[config_text.as_bytes(), &read_bytes(x)?, &read_bytes(y)?, &q_bytes])
    };

    let stage = Staging::new(out)?;
    let summary = run_chain(&dataset, &hp, &cfg.sampler())?;
    write_fit_outputs(&stage, &dataset, &summary)?;
    write_json(
        &stage.path("summary.json"),
        &json!({
            "run_hash": run_hash,
            "n": dataset.n(),
            "p": dataset.p(),
            "n_missing": summary.missing_indices.len(),
            "xi": summary.xi,
            "n_kept": summary.n_kept,
            "selected": summary.selected.iter().map(|&j| &dataset.feature_ids[j]).collect::<Vec<_>>(),
            "beta0_mean": summary.beta0_mean,
            "sigma2_mean": summary.sigma2_mean,
            "theta_mean": summary.theta_mean,
            "gamma_proposals": summary.accept_counts.gamma_proposals,
            "gamma_flips": summary.accept_counts.gamma_flips,
            "dropped_features": design.dropped,
            "config": cfg,
        }),
    )?;
    stage.commit()
}

fn write_fit_outputs(stage: &Staging, dataset: &Dataset, s: &ChainSummary) -> Result<()> {
    let fids = &dataset.feature_ids;
    write_rows(
        &stage.path("ppi.csv"),
        &["feature_id", "ppi"],
        fids.iter().zip(&s.ppi).map(|(id, v)| vec![id.clone(), fmt_f64(*v)]),
    )?;
    write_rows(
        &stage.path("coefficients.csv"),
        &["feature_id", "ppi", "mean", "ci_lower", "ci_upper"],
        (0..fids.len()).map(|j| {
            vec![
                fids[j].clone(),
                fmt_f64(s.ppi[j]),
                fmt_f64(s.beta_mean[j]),
                fmt_f64(s.beta_ci_lower[j]),
                fmt_f64(s.beta_ci_upper[j]),
            ]
        }),
    )?;
    write_rows(
        &stage.path("imputed.csv"),
        &["sample_id", "mean", "ci_lower", "ci_upper"],
        s.missing_indices.iter().enumerate().map(|(k, &i)| {
            vec![
                dataset.sample_ids[i].clone(),
                fmt_f64(s.y_imputed_mean[k]),
                fmt_f64(s.y_imputed_ci_lower[k]),
                fmt_f64(s.y_imputed_ci_upper[k]),
            ]
        }),
    )?;
    if let Some(draws) = &s.beta_trace {
        write_rows(
            &stage.path("trace.csv"),
            &["iteration", "p_gamma", "beta0", "sigma2", "theta", "log_posterior"],
            s.trace.iter().map(|t| {
                vec![
                    t.iteration.to_string(),
                    t.p_gamma.to_string(),
                    fmt_f64(t.beta0),
                    fmt_f64(t.sigma2),
                    fmt_f64(t.theta),
                    fmt_f64(t.log_posterior),
                ]
            }),
        )?;
        write_rows(
            &stage.path("beta_trace.csv"),
            &["iteration", "feature_id", "value"],
            draws
                .iter()
                .map(|d| vec![d.iteration.to_string(), fids[d.feature].clone(), fmt_f64(d.value)]),
        )?;
    }
    Ok(())
}

fn aggregate_json(agg: &Aggregate, extra: serde_json::Value) -> serde_json::Value {
    json!({ "run": extra, "modes": agg })
}

fn cmd_benchmark(scenario: &Path, replicates: usize, out: &Path, threads: usize) -> Result<()> {
    if replicates == 0 {
        return Err(Error::input("--replicates must be positive"));
    }
    let file = ScenarioFile::load(scenario)?;
    let stage = Staging::new(out)?;
    log::info!("benchmark: {replicates} replicates on {threads} threads");
    let results = run_benchmark(&file, replicates, threads)?;
    write_metrics(&stage.path("metrics.csv"), &results)?;
    let agg = aggregate(&results);
    write_json(
        &stage.path("aggregate.json"),
        &aggregate_json(&agg, json!({ "replicates": replicates, "scenario": file })),
    )?;
    fs::write(stage.path("scenario.toml"), file.to_toml()).map_err(|e| Error::io(stage.path("scenario.toml"), e))?;
    stage.commit()?;
    print_table(&agg);
    Ok(())
}

fn cmd_summarize(dir: &Path) -> Result<()> {
    let agg = summarize_dir(dir)?;
    let path = dir.join("aggregate.json");
    let run = fs::read_to_string(&path)
        .ok()
        .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
        .and_then(|v| v.get("run").cloned())
        .unwrap_or(serde_json::Value::Null);
    write_json(&path, &aggregate_json(&agg, run))?;
    print_table(&agg);
    Ok(())
}

fn print_table(agg: &Aggregate) {
    const COLUMNS: [&str; 6] = ["tpr", "fpr", "f1", "nrmse", "l2_loss", "pe"];
    println!("{:<10}{}", "mode", COLUMNS.iter().map(|c| format!("{c:>14}")).collect::<String>());
    for (mode, metrics) in agg {
        let cells: String = COLUMNS
            .iter()
            .map(|c| format!("{:>14}", metrics.get(*c).map_or("-", |m| m.display.as_str())))
            .collect();
        println!("{mode:<10}{cells}");
    }
}
