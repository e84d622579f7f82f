//! Incremental evaluation of `log p(y | γ)` for single-index flips.
//!
//! The sampler proposes one flip at a time, and almost all proposals are
//! additions to a small active set. With `G = XᵀHX` precomputed, adding a
//! feature extends the Cholesky factor of `a_γ` by one row in O(p_γ²);
//! removals refactor the reduced set from scratch. The results agree with
//! [`crate::model::compute_collapsed`] to rounding.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{clamp_c_gamma, log_marginal_from_parts, Dataset, Hyperparameters, SelectionState};

/// Cached factorization of `a_γ` for the current selection and response.
#[derive(Clone, Debug)]
pub struct CollapsedEvaluator {
    n: usize,
    p: usize,
    hp: Hyperparameters,
    /// `XᵀHX`, p×p.
    gram: DMatrix<f64>,
    /// Column sums `1ᵀX`.
    col_sums: DVector<f64>,
    /// `XᵀHy` for the current response.
    xhy: DVector<f64>,
    y_h_y: f64,
    active: Vec<usize>,
    /// Row-major lower factor L with `a_γ = LLᵀ`, stored densely as k×k.
    chol: Vec<f64>,
    /// `w = L⁻¹ X_γᵀHy`; then `C_γ = yᵀHy − wᵀw`.
    w: Vec<f64>,
    logdet: f64,
    scratch: Vec<f64>,
}

impl CollapsedEvaluator {
    pub fn new(dataset: &Dataset, hp: &Hyperparameters, y: &DVector<f64>, selection: &SelectionState) -> Result<Self> {
        let x = &dataset.x;
        let (n, p) = x.shape();
        let col_sums = DVector::from_iterator(p, x.column_iter().map(|c| c.sum()));
        let shrink = 1.0 / (n as f64 + 1.0);
        let mut gram = x.tr_mul(x);
        gram.ger(-shrink, &col_sums, &col_sums, 1.0);
        let mut ev = CollapsedEvaluator {
            n,
            p,
            hp: hp.clone(),
            gram,
            col_sums,
            xhy: DVector::zeros(p),
            y_h_y: 0.0,
            active: Vec::new(),
            chol: Vec::new(),
            w: Vec::new(),
            logdet: 0.0,
            scratch: Vec::new(),
        };
        ev.set_response(x, y)?;
        for &j in selection.active() {
            ev.commit_add(j)?;
        }
        Ok(ev)
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    /// Recomputes the response-dependent caches for a new complete `y`.
    pub fn set_response(&mut self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite complete response"));
        }
        let shrink = 1.0 / (self.n as f64 + 1.0);
        let y_sum = y.sum();
        self.y_h_y = y.dot(y) - shrink * y_sum * y_sum;
        self.xhy = x.tr_mul(y);
        self.xhy.axpy(-shrink * y_sum, &self.col_sums, 1.0);
        self.refresh_w();
        Ok(())
    }

    fn a_entry(&self, i: usize, j: usize) -> f64 {
        let c2 = self.hp.c * self.hp.c;
        let prior = if i == j { 1.0 + c2 } else { c2 };
        self.gram[(i, j)] + prior / self.hp.tau2
    }

    fn refresh_w(&mut self) {
        let k = self.active.len();
        self.w.resize(k, 0.0);
        for r in 0..k {
            let mut s = self.xhy[self.active[r]];
            for c in 0..r {
                s -= self.chol[r * k + c] * self.w[c];
            }
            self.w[r] = s / self.chol[r * k + r];
        }
    }

    fn log_marginal(&self, k: usize, logdet: f64, wtw: f64) -> Result<f64> {
        let c_gamma = clamp_c_gamma(self.y_h_y - wtw, || format!("active set of size {k}"))?;
        Ok(log_marginal_from_parts(self.n, k, logdet, c_gamma, &self.hp))
    }

    pub fn log_marginal_current(&self) -> Result<f64> {
        let wtw = self.w.iter().map(|v| v * v).sum();
        self.log_marginal(self.active.len(), self.logdet, wtw)
    }

    /// Solves for the new factor row when `j` joins the active set.
    /// Returns `(row, diagonal, new w entry)`; the row is left in `scratch`.
    fn extension(&mut self, j: usize) -> Result<(f64, f64)> {
        let k = self.active.len();
        self.scratch.resize(k, 0.0);
        let mut norm2 = 0.0;
        for r in 0..k {
            let mut s = self.a_entry(j, self.active[r]);
            for c in 0..r {
                s -= self.chol[r * k + c] * self.scratch[c];
            }
            let v = s / self.chol[r * k + r];
            self.scratch[r] = v;
            norm2 += v * v;
        }
        let d2 = self.a_entry(j, j) - norm2;
        if !(d2 > 0.0) || !d2.is_finite() {
            let mut set = self.active.clone();
            set.push(j);
            return Err(Error::numerical(format!(
                "a_gamma not positive definite when adding feature {j} (active {set:?}, pivot {d2:e})"
            )));
        }
        let d = d2.sqrt();
        let lw: f64 = (0..k).map(|c| self.scratch[c] * self.w[c]).sum();
        let w_new = (self.xhy[j] - lw) / d;
        Ok((d, w_new))
    }

    /// `log p(y | γ ∪ {j})` for `j` not currently active.
    pub fn log_marginal_if_added(&mut self, j: usize) -> Result<f64> {
        debug_assert!(!self.active.contains(&j));
        let (d, w_new) = self.extension(j)?;
        let wtw: f64 = self.w.iter().map(|v| v * v).sum::<f64>() + w_new * w_new;
        self.log_marginal(self.active.len() + 1, self.logdet + 2.0 * d.ln(), wtw)
    }

    /// `log p(y | γ \ {j})` for active `j`.
    pub fn log_marginal_if_removed(&self, j: usize) -> Result<f64> {
        let reduced: Vec<usize> = self.active.iter().copied().filter(|&a| a != j).collect();
        let (chol, logdet) = self.factor(&reduced)?;
        let k = reduced.len();
        let mut w = vec![0.0; k];
        let mut wtw = 0.0;
        for r in 0..k {
            let mut s = self.xhy[reduced[r]];
            for c in 0..r {
                s -= chol[r * k + c] * w[c];
            }
            w[r] = s / chol[r * k + r];
            wtw += w[r] * w[r];
        }
        self.log_marginal(k, logdet, wtw)
    }

    fn factor(&self, set: &[usize]) -> Result<(Vec<f64>, f64)> {
        let k = set.len();
        let mut l = vec![0.0; k * k];
        let mut logdet = 0.0;
        for r in 0..k {
            for c in 0..=r {
                let mut s = self.a_entry(set[r], set[c]);
                for m in 0..c {
                    s -= l[r * k + m] * l[c * k + m];
                }
                if r == c {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::numerical(format!(
                            "a_gamma not positive definite for active set {set:?}"
                        )));
                    }
                    l[r * k + r] = s.sqrt();
                    logdet += s.ln();
                } else {
                    l[r * k + c] = s / l[c * k + c];
                }
            }
        }
        Ok((l, logdet))
    }

    pub fn commit_add(&mut self, j: usize) -> Result<()> {
        if j >= self.p || self.active.contains(&j) {
            return Err(Error::Internal(format!("cannot add feature {j}")));
        }
        let (d, w_new) = self.extension(j)?;
        let k = self.active.len();
        let mut chol = vec![0.0; (k + 1) * (k + 1)];
        for r in 0..k {
            chol[r * (k + 1)..r * (k + 1) + r + 1].copy_from_slice(&self.chol[r * k..r * k + r + 1]);
        }
        chol[k * (k + 1)..k * (k + 1) + k].copy_from_slice(&self.scratch[..k]);
        chol[k * (k + 1) + k] = d;
        self.chol = chol;
        self.active.push(j);
        self.w.push(w_new);
        self.logdet += 2.0 * d.ln();
        Ok(())
    }

    pub fn commit_remove(&mut self, j: usize) -> Result<()> {
        let before = self.active.len();
        self.active.retain(|&a| a != j);
        if self.active.len() == before {
            return Err(Error::Internal(format!("cannot remove inactive feature {j}")));
        }
        let (chol, logdet) = self.factor(&self.active)?;
        self.chol = chol;
        self.logdet = logdet;
        self.refresh_w();
        Ok(())
    }

    /// Current `(β̂_γ, L, C_γ)` with entries ordered like `selection.active()`
    /// (ascending feature index).
    pub fn posterior_parts(&self) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
        let mut sorted = self.active.clone();
        sorted.sort_unstable();
        let (chol, _) = self.factor(&sorted)?;
        let k = sorted.len();
        let l = DMatrix::from_fn(k, k, |r, c| if c <= r { chol[r * k + c] } else { 0.0 });
        let b = DVector::from_iterator(k, sorted.iter().map(|&j| self.xhy[j]));
        let w = l
            .solve_lower_triangular(&b)
            .ok_or_else(|| Error::numerical("singular factor"))?;
        let beta_hat = l
            .tr_solve_lower_triangular(&w)
            .ok_or_else(|| Error::numerical("singular factor"))?;
        let c_gamma = clamp_c_gamma(self.y_h_y - w.dot(&w), || format!("active set {sorted:?}"))?;
        Ok((beta_hat, l, c_gamma))
    }
}
