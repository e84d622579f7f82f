//! Evaluation metrics for simulated replicates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub pe: f64,
    pub l2_loss: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub f1: f64,
    /// `None` when fewer than two training outcomes were missing.
    pub nrmse: Option<f64>,
    pub n_selected: usize,
    /// Share of missing training outcomes whose 95% interval covers the truth.
    pub ci_coverage_missing: Option<f64>,
}

/// Mean squared error over observed test samples: `Σ R_i (y_i − ŷ_i)² / Σ R_i`.
pub fn prediction_error(y_test: &[f64], y_pred: &[f64], observed: &[bool]) -> Result<f64> {
    if y_test.len() != y_pred.len() || y_test.len() != observed.len() {
        return Err(Error::input("prediction_error: length mismatch"));
    }
    let (mut sse, mut count) = (0.0, 0usize);
    for ((y, yhat), &r) in y_test.iter().zip(y_pred).zip(observed) {
        if r {
            sse += (y - yhat).powi(2);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::input("prediction_error: no observed test samples"));
    }
    Ok(sse / count as f64)
}

/// Euclidean distance between estimated and true coefficients.
pub fn l2_loss(beta_hat: &[f64], beta_star: &[f64]) -> Result<f64> {
    if beta_hat.len() != beta_star.len() {
        return Err(Error::input("l2_loss: length mismatch"));
    }
    Ok(beta_hat.iter().zip(beta_star).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub tpr: f64,
    pub fpr: f64,
    pub f1: f64,
}

/// TPR, FPR and F1 of a selected set against the true support.
///
/// Rates with an empty denominator are 0, except F1, which is 1 when there
/// are neither true nor predicted positives.
pub fn selection_metrics(selected: &[usize], support: &[usize], p: usize) -> Result<SelectionMetrics> {
    let mut truth = vec![false; p];
    for &j in support {
        *truth.get_mut(j).ok_or_else(|| Error::input(format!("support index {j} out of range")))? = true;
    }
    let mut chosen = vec![false; p];
    for &j in selected {
        *chosen.get_mut(j).ok_or_else(|| Error::input(format!("selected index {j} out of range")))? = true;
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for j in 0..p {
        match (chosen[j], truth[j]) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let f1 = if tp + fp + fn_ == 0 {
        1.0
    } else {
        tp as f64 / (tp as f64 + 0.5 * (fp + fn_) as f64)
    };
    Ok(SelectionMetrics {
        tp,
        fp,
        fn_,
        tn,
        tpr: ratio(tp, tp + fn_),
        fpr: ratio(fp, fp + tn),
        f1,
    })
}

/// `sqrt(mean((y − ŷ)²) / var(y))` with the n−1 sample variance.
pub fn nrmse(y_true_missing: &[f64], y_imputed: &[f64]) -> Result<f64> {
    let m = y_true_missing.len();
    if m != y_imputed.len() {
        return Err(Error::input("nrmse: length mismatch"));
    }
    if m < 2 {
        return Err(Error::input("nrmse needs at least two missing entries"));
    }
    let mean = y_true_missing.iter().sum::<f64>() / m as f64;
    let var = y_true_missing.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m as f64 - 1.0);
    if !(var > 0.0) {
        return Err(Error::input("nrmse: true missing values have zero variance"));
    }
    let mse = y_true_missing.iter().zip(y_imputed).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / m as f64;
    Ok((mse / var).sqrt())
}

/// Fraction of truths inside their `[lower, upper]` interval.
pub fn interval_coverage(truth: &[f64], lower: &[f64], upper: &[f64]) -> Result<f64> {
    if truth.len() != lower.len() || truth.len() != upper.len() || truth.is_empty() {
        return Err(Error::input("interval_coverage: empty or mismatched inputs"));
    }
    let hits = truth
        .iter()
        .zip(lower.iter().zip(upper))
        .filter(|(t, (lo, hi))| **lo <= **t && **t <= **hi)
        .count();
    Ok(hits as f64 / truth.len() as f64)
}
