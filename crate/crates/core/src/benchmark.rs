//! Simulated-replicate evaluation: simulate, split, standardize, fit, score.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioFile;
use crate::error::{Error, Result};
use crate::io::{fmt_f64, mean_sd, write_rows};
use crate::metrics::{interval_coverage, l2_loss, nrmse, prediction_error, selection_metrics, EvaluationReport};
use crate::model::{Dataset, Hyperparameters, IsingQ};
use crate::sampler::{run_chain, ChainSummary, ImputeMode};
use crate::simulation::{build_sim_q, simulate, SimulatedData};

/// Training design standardized with training statistics, plus what is
/// needed to score a fit against the simulation truth.
#[derive(Clone, Debug)]
pub struct PreparedReplicate {
    pub dataset: Dataset,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    /// Test design on the training scale.
    pub x_test: DMatrix<f64>,
}

pub fn prepare_replicate(sim: &SimulatedData) -> Result<PreparedReplicate> {
    let truth = &sim.truth;
    let n = sim.spec.n;
    let train_rows: Vec<usize> = (0..n).filter(|&i| truth.train[i]).collect();
    let test_rows: Vec<usize> = (0..n).filter(|&i| !truth.train[i]).collect();
    let x = &sim.covariates.x_log;
    let p = x.ncols();
    let mut center = Vec::with_capacity(p);
    let mut scale = Vec::with_capacity(p);
    for j in 0..p {
        let (m, sd) = mean_sd(train_rows.iter().map(|&i| x[(i, j)]));
        if !(sd > 0.0) {
            return Err(Error::numerical(format!("feature {j} is constant on the training rows")));
        }
        center.push(m);
        scale.push(sd);
    }
    let standardized = |rows: &[usize]| DMatrix::from_fn(rows.len(), p, |r, j| (x[(rows[r], j)] - center[j]) / scale[j]);
    let y: Vec<Option<f64>> = train_rows
        .iter()
        .map(|&i| truth.missingness.observed[i].then_some(truth.y_true[i]))
        .collect();
    let dataset = Dataset::new(standardized(&train_rows), &y, None)?;
    let x_test = standardized(&test_rows);
    Ok(PreparedReplicate {
        dataset,
        train_rows,
        test_rows,
        center,
        scale,
        x_test,
    })
}

/// Scores a chain fitted to `prep.dataset` against the simulation truth.
pub fn evaluate(sim: &SimulatedData, prep: &PreparedReplicate, summary: &ChainSummary) -> Result<EvaluationReport> {
    let truth = &sim.truth;
    let p = prep.scale.len();
    let beta_std = summary.mpm_beta();
    let beta_raw: Vec<f64> = beta_std.iter().zip(&prep.scale).map(|(b, s)| b / s).collect();
    let sel = selection_metrics(&summary.selected, &truth.support, p)?;

    let y_test: Vec<f64> = prep.test_rows.iter().map(|&i| truth.y_true[i]).collect();
    let r_test: Vec<bool> = prep.test_rows.iter().map(|&i| truth.missingness.observed[i]).collect();
    let y_pred: Vec<f64> = (0..prep.test_rows.len())
        .map(|r| summary.beta0_mean + (0..p).map(|j| prep.x_test[(r, j)] * beta_std[j]).sum::<f64>())
        .collect();
    let pe = prediction_error(&y_test, &y_pred, &r_test)?;

    let missing_truth: Vec<f64> = summary
        .missing_indices
        .iter()
        .map(|&k| truth.y_true[prep.train_rows[k]])
        .collect();
    let nrmse = (missing_truth.len() >= 2)
        .then(|| nrmse(&missing_truth, &summary.y_imputed_mean))
        .transpose()?;
    let ci_coverage_missing = (!missing_truth.is_empty())
        .then(|| interval_coverage(&missing_truth, &summary.y_imputed_ci_lower, &summary.y_imputed_ci_upper))
        .transpose()?;

    Ok(EvaluationReport {
        pe,
        l2_loss: l2_loss(&beta_raw, &truth.beta_true)?,
        tpr: sel.tpr,
        fpr: sel.fpr,
        f1: sel.f1,
        nrmse,
        n_selected: summary.selected.len(),
        ci_coverage_missing,
    })
}

/// Hyperparameters for a scenario fit, with the structured Q when requested.
pub fn scenario_hyperparameters(file: &ScenarioFile) -> Result<Hyperparameters> {
    let p = file.scenario.p;
    let mut hp = file.fit.hyperparameters(p);
    if file.uses_structured_q() {
        hp.ising_q = Some(IsingQ::new(build_sim_q(p)?)?);
    }
    Ok(hp)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    pub mode: ImputeMode,
    pub report: EvaluationReport,
}

/// Simulates replicate `rep` and fits it once per configured mode.
pub fn run_replicate(file: &ScenarioFile, hp: &Hyperparameters, rep: usize) -> Result<Vec<ReplicateResult>> {
    let spec = file.scenario.replicate(rep as u64);
    let sim = simulate(&spec)?;
    let prep = prepare_replicate(&sim)?;
    let mut out = Vec::new();
    for &mode in &file.fit.impute_modes {
        let mut cfg = file.fit.sampler();
        cfg.impute_mode = mode;
        let start = std::time::Instant::now();
        let summary = run_chain(&prep.dataset, hp, &cfg)?;
        log::info!(
            "replicate {rep} mode {} finished in {:.1}s",
            mode.as_str(),
            start.elapsed().as_secs_f64()
        );
        out.push(ReplicateResult {
            replicate: rep,
            seed: spec.seed,
            mode,
            report: evaluate(&sim, &prep, &summary)?,
        });
    }
    Ok(out)
}

/// Runs `replicates` replicates on a pool of `threads` workers. Results are
/// ordered by replicate, then by mode, whatever the scheduling.
pub fn run_benchmark(file: &ScenarioFile, replicates: usize, threads: usize) -> Result<Vec<ReplicateResult>> {
    let hp = scenario_hyperparameters(file)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    let per_rep: Vec<Result<Vec<ReplicateResult>>> =
        pool.install(|| (0..replicates).into_par_iter().map(|rep| run_replicate(file, &hp, rep)).collect());
    let mut out = Vec::new();
    for r in per_rep {
        out.extend(r?);
    }
    Ok(out)
}

pub const METRICS_HEADER: [&str; 11] = [
    "replicate",
    "seed",
    "mode",
    "pe",
    "l2_loss",
    "tpr",
    "fpr",
    "f1",
    "nrmse",
    "n_selected",
    "ci_coverage_missing",
];

pub fn write_metrics(path: &Path, results: &[ReplicateResult]) -> Result<()> {
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let rows = results.iter().map(|r| {
        let m = &r.report;
        vec![
            r.replicate.to_string(),
            r.seed.to_string(),
            r.mode.as_str().to_string(),
            fmt_f64(m.pe),
            fmt_f64(m.l2_loss),
            fmt_f64(m.tpr),
            fmt_f64(m.fpr),
            fmt_f64(m.f1),
            opt(m.nrmse),
            m.n_selected.to_string(),
            opt(m.ci_coverage_missing),
        ]
    });
    write_rows(path, &METRICS_HEADER, rows)
}

pub fn read_metrics(path: &Path) -> Result<Vec<ReplicateResult>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| parse(e.to_string()))?.clone();
    if header.iter().ne(METRICS_HEADER.iter().copied()) {
        return Err(parse(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| parse(e.to_string()))?;
        let bad = |k: usize| parse(format!("line {}: bad value '{}' in column {}", line + 2, &rec[k], METRICS_HEADER[k]));
        let num = |k: usize| rec[k].parse::<f64>().map_err(|_| bad(k));
        let opt = |k: usize| if rec[k].is_empty() { Ok(None) } else { num(k).map(Some) };
        out.push(ReplicateResult {
            replicate: rec[0].parse().map_err(|_| bad(0))?,
            seed: rec[1].parse().map_err(|_| bad(1))?,
            mode: rec[2].parse().map_err(|_| bad(2))?,
            report: EvaluationReport {
                pe: num(3)?,
                l2_loss: num(4)?,
                tpr: num(5)?,
                fpr: num(6)?,
                f1: num(7)?,
                nrmse: opt(8)?,
                n_selected: rec[9].parse().map_err(|_| bad(9))?,
                ci_coverage_missing: opt(10)?,
            },
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricAggregate {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
    /// `mean(sd)` to two decimals.
    pub display: String,
}

/// Mode name → metric name → aggregate.
pub type Aggregate = BTreeMap<String, BTreeMap<String, MetricAggregate>>;

pub fn aggregate(results: &[ReplicateResult]) -> Aggregate {
    let mut values: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for r in results {
        let m = &r.report;
        let entry = values.entry(r.mode.as_str().to_string()).or_default();
        let mut push = |name: &str, v: Option<f64>| {
            if let Some(v) = v {
                entry.entry(name.to_string()).or_default().push(v);
            }
        };
        push("pe", Some(m.pe));
        push("l2_loss", Some(m.l2_loss));
        push("tpr", Some(m.tpr));
        push("fpr", Some(m.fpr));
        push("f1", Some(m.f1));
        push("nrmse", m.nrmse);
        push("n_selected", Some(m.n_selected as f64));
        push("ci_coverage_missing", m.ci_coverage_missing);
    }
    values
        .into_iter()
        .map(|(mode, metrics)| {
            let metrics = metrics
                .into_iter()
                .map(|(name, v)| {
                    let n = v.len();
                    let mean = v.iter().sum::<f64>() / n as f64;
                    let sd = if n > 1 { mean_sd(v.iter().copied()).1 } else { 0.0 };
                    let display = format!("{mean:.2}({sd:.2})");
                    (name, MetricAggregate { mean, sd, n, display })
                })
                .collect();
            (mode, metrics)
        })
        .collect()
}

/// Reads `metrics.csv` from `dir` and returns its aggregate.
pub fn summarize_dir(dir: &Path) -> Result<Aggregate> {
    let path = dir.join("metrics.csv");
    if !path.exists() {
        return Err(Error::input(format!("{} not found", path.display())));
    }
    Ok(aggregate(&read_metrics(&path)?))
}
