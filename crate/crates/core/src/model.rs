//! Model types and the closed-form pieces of the posterior.
//!
//! The likelihood is `y = β₀·1 + X_γ β_γ + ε` with `ε ~ N(0, σ²I)`, a z-prior
//! `β_γ | σ² ~ N(0, σ²τ²(T_γᵀT_γ)⁻¹)` where `T_γᵀT_γ = I + c²·11ᵀ`,
//! `β₀ | σ² ~ N(0, σ²)` and `σ² ~ IG(ν/2, νω/2)`. Integrating out
//! `(β₀, β_γ, σ²)` gives, with `H = I − 11ᵀ/(n+1)`,
//!
//! ```text
//! a_γ = X_γᵀ H X_γ + (I + c²11ᵀ)/τ²
//! β̂_γ = a_γ⁻¹ X_γᵀ H y
//! C_γ = yᵀHy − yᵀH X_γ a_γ⁻¹ X_γᵀ H y
//! log p(y | γ) = κ(n) − ½ log|a_γ| + ½ log(1 + c²p_γ) − (p_γ/2) log τ²
//!                − ((n+ν)/2) log(C_γ + νω)
//! ```
//!
//! where `κ(n)` collects every γ-independent term and is included so that the
//! returned value is the full log marginal density.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::distributions::log_normal_cdf;
use crate::error::{Error, Result};

/// Negative residual sums of squares down to this value are rounding noise.
const C_GAMMA_CLAMP: f64 = 1e-8;

/// Observed data for one fit: standardized design, partially observed log
/// outcome and the limit of detection on the log scale.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    /// Log outcome; `NaN` where the sample is missing.
    pub y_obs: DVector<f64>,
    pub observed: Vec<bool>,
    pub xi: f64,
    pub sample_ids: Vec<String>,
    pub feature_ids: Vec<String>,
}

impl Dataset {
    /// Builds a dataset. `y` holds `None` for missing samples. When `xi` is
    /// `None` the limit of detection defaults to the smallest observed value.
    pub fn new(x: DMatrix<f64>, y: &[Option<f64>], xi: Option<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if n == 0 || p == 0 {
            return Err(Error::input("design matrix must be non-empty"));
        }
        if y.len() != n {
            return Err(Error::input(format!(
                "outcome has {} entries but design has {n} rows",
                y.len()
            )));
        }
        if let Some((idx, _)) = x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::input(format!(
                "non-finite design entry at row {}, column {}",
                idx % n,
                idx / n
            )));
        }
        let mut observed = Vec::with_capacity(n);
        let mut y_obs = DVector::from_element(n, f64::NAN);
        for (i, v) in y.iter().enumerate() {
            match v {
                Some(v) if v.is_finite() => {
                    observed.push(true);
                    y_obs[i] = *v;
                }
                Some(v) => return Err(Error::input(format!("non-finite observed outcome {v} at sample {i}"))),
                None => observed.push(false),
            }
        }
        let min_obs = (0..n)
            .filter(|&i| observed[i])
            .map(|i| y_obs[i])
            .fold(f64::INFINITY, f64::min);
        if !min_obs.is_finite() {
            return Err(Error::input("outcome has no observed samples"));
        }
        let xi = xi.unwrap_or(min_obs);
        if !xi.is_finite() {
            return Err(Error::input(format!("limit of detection must be finite, got {xi}")));
        }
        Ok(Dataset {
            x,
            y_obs,
            observed,
            xi,
            sample_ids: (1..=n).map(|i| format!("s{i}")).collect(),
            feature_ids: (1..=p).map(|j| format!("f{j}")).collect(),
        })
    }

    pub fn with_ids(mut self, sample_ids: Vec<String>, feature_ids: Vec<String>) -> Result<Self> {
        if sample_ids.len() != self.n() || feature_ids.len() != self.p() {
            return Err(Error::input("id lists do not match the data dimensions"));
        }
        self.sample_ids = sample_ids;
        self.feature_ids = feature_ids;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn missing_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| !self.observed[i]).collect()
    }

    pub fn n_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    /// Observed values at or below ξ. They are legal but contribute to
    /// neither side of the θ update.
    pub fn observed_at_or_below_xi(&self) -> usize {
        (0..self.n())
            .filter(|&i| self.observed[i] && self.y_obs[i] <= self.xi)
            .count()
    }

    /// True when every column has mean 0 and sample sd 1 within the given tolerances.
    pub fn is_standardized(&self, mean_tol: f64, sd_tol: f64) -> bool {
        let n = self.n() as f64;
        self.x.column_iter().all(|col| {
            let m = col.sum() / n;
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            m.abs() <= mean_tol && (sd - 1.0).abs() <= sd_tol
        })
    }
}

/// Pairwise Ising interaction matrix. Only off-diagonal entries are used.
#[derive(Clone, Debug)]
pub struct IsingQ(DMatrix<f64>);

impl IsingQ {
    /// Validates symmetry (within `1e-9`, relative to the largest entry) and zeroes the diagonal.
    pub fn new(mut q: DMatrix<f64>) -> Result<Self> {
        if q.nrows() != q.ncols() {
            return Err(Error::input(format!("Q must be square, got {}x{}", q.nrows(), q.ncols())));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("Q has non-finite entries"));
        }
        let p = q.nrows();
        for i in 0..p {
            for j in (i + 1)..p {
                if (q[(i, j)] - q[(j, i)]).abs() > 1e-9 {
                    return Err(Error::input(format!(
                        "Q is not symmetric at ({i}, {j}): {} vs {}",
                        q[(i, j)],
                        q[(j, i)]
                    )));
                }
            }
        }
        if (0..p).any(|i| q[(i, i)] != 0.0) {
            log::warn!("zeroing the diagonal of Q");
            q.fill_diagonal(0.0);
        }
        Ok(IsingQ(q))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

#[derive(Clone, Debug)]
pub struct Hyperparameters {
    pub nu: f64,
    pub omega: f64,
    pub tau2: f64,
    pub c: f64,
    /// Per-feature Ising field; more negative means sparser.
    pub ising_a: Vec<f64>,
    /// `None` means Q = 0 (independent Bernoulli prior).
    pub ising_q: Option<IsingQ>,
    /// Count each unordered pair twice in the conditional log odds.
    pub ising_double_count: bool,
    /// Multiplier applied to ξ on the log scale.
    pub lod_scale: f64,
}

impl Hyperparameters {
    /// Defaults for `p` features: ν=2, ω=1, τ²=1, c=100, a=−12, Q=0.
    pub fn new(p: usize) -> Self {
        Hyperparameters {
            nu: 2.0,
            omega: 1.0,
            tau2: 1.0,
            c: 100.0,
            ising_a: vec![-12.0; p],
            ising_q: None,
            ising_double_count: false,
            lod_scale: 1.0,
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        let positive = [("nu", self.nu), ("omega", self.omega), ("tau2", self.tau2), ("lod_scale", self.lod_scale)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::input(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(Error::input(format!("c must be non-negative and finite, got {}", self.c)));
        }
        if self.ising_a.len() != p {
            return Err(Error::input(format!(
                "ising_a has {} entries for {p} features",
                self.ising_a.len()
            )));
        }
        if self.ising_a.iter().any(|a| !a.is_finite()) {
            return Err(Error::input("ising_a has non-finite entries"));
        }
        if let Some(q) = &self.ising_q {
            if q.dim() != p {
                return Err(Error::input(format!("Q is {0}x{0} for {p} features", q.dim())));
            }
        }
        Ok(())
    }

    /// ξ as used by the missingness updates.
    pub fn effective_xi(&self, xi: f64) -> f64 {
        xi * self.lod_scale
    }
}

/// Inclusion indicators γ with the sorted list of selected features.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionState {
    gamma: Vec<bool>,
    active: Vec<usize>,
}

impl SelectionState {
    pub fn empty(p: usize) -> Self {
        SelectionState {
            gamma: vec![false; p],
            active: Vec::new(),
        }
    }

    pub fn from_active(p: usize, active: &[usize]) -> Result<Self> {
        let mut s = Self::empty(p);
        for &j in active {
            if j >= p {
                return Err(Error::input(format!("feature index {j} out of range for p={p}")));
            }
            s.set(j, true);
        }
        Ok(s)
    }

    pub fn p(&self) -> usize {
        self.gamma.len()
    }

    pub fn p_gamma(&self) -> usize {
        self.active.len()
    }

    pub fn gamma(&self) -> &[bool] {
        &self.gamma
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn is_selected(&self, j: usize) -> bool {
        self.gamma[j]
    }

    pub fn set(&mut self, j: usize, on: bool) {
        if self.gamma[j] == on {
            return;
        }
        self.gamma[j] = on;
        match self.active.binary_search(&j) {
            Ok(pos) if !on => {
                self.active.remove(pos);
            }
            Err(pos) if on => self.active.insert(pos, j),
            _ => {}
        }
    }

    pub fn flip(&mut self, j: usize) {
        let on = !self.gamma[j];
        self.set(j, on);
    }

    pub fn flipped(&self, j: usize) -> Self {
        let mut s = self.clone();
        s.flip(j);
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionState {
    pub beta0: f64,
    /// Coefficients of the selected features, in `SelectionState::active` order.
    pub beta_active: DVector<f64>,
    pub sigma2: f64,
}

impl RegressionState {
    pub fn full_beta(&self, selection: &SelectionState) -> Vec<f64> {
        let mut beta = vec![0.0; selection.p()];
        for (k, &j) in selection.active().iter().enumerate() {
            beta[j] = self.beta_active[k];
        }
        beta
    }

    /// Linear predictor `β₀ + x_iᵀβ` for row `i`.
    pub fn fitted(&self, x: &DMatrix<f64>, selection: &SelectionState, i: usize) -> f64 {
        self.beta0
            + selection
                .active()
                .iter()
                .zip(self.beta_active.iter())
                .map(|(&j, b)| x[(i, j)] * b)
                .sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MissingnessState {
    /// Complete outcome: observed values where observed, imputed elsewhere.
    pub y_latent: DVector<f64>,
    /// MNAR indicator per sample; always `false` for observed samples.
    pub z: Vec<bool>,
    pub theta: f64,
}

impl MissingnessState {
    /// Missing entries start at the observed mean; Z follows by thresholding
    /// that value against ξ; θ starts at 0.5.
    pub fn initial(dataset: &Dataset, xi: f64) -> Self {
        let n = dataset.n();
        let mean_obs = (0..n)
            .filter(|&i| dataset.observed[i])
            .map(|i| dataset.y_obs[i])
            .sum::<f64>()
            / dataset.n_observed() as f64;
        let mut y_latent = dataset.y_obs.clone();
        let mut z = vec![false; n];
        for i in 0..n {
            if !dataset.observed[i] {
                y_latent[i] = mean_obs;
                z[i] = mean_obs <= xi;
            }
        }
        MissingnessState {
            y_latent,
            z,
            theta: 0.5,
        }
    }

    /// Checks that each missing value lies on the side of ξ its Z indicates.
    pub fn is_consistent(&self, dataset: &Dataset, xi: f64) -> bool {
        (0..dataset.n()).all(|i| {
            if dataset.observed[i] {
                self.y_latent[i] == dataset.y_obs[i] && !self.z[i]
            } else if self.z[i] {
                self.y_latent[i] <= xi
            } else {
                self.y_latent[i] > xi
            }
        })
    }
}

/// Conditional-posterior quantities for one selection γ.
#[derive(Clone, Debug)]
pub struct CollapsedQuantities {
    pub a_gamma: DMatrix<f64>,
    /// Lower Cholesky factor of `a_gamma`.
    pub a_gamma_chol: DMatrix<f64>,
    pub beta_hat: DVector<f64>,
    pub c_gamma: f64,
    pub log_marginal: f64,
}

/// `T_γᵀT_γ = I + c²·11ᵀ`.
pub fn zprior_gram(p_gamma: usize, c: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p_gamma, p_gamma, |i, j| if i == j { 1.0 + c * c } else { c * c })
}

/// Closed-form inverse of `I + c²·11ᵀ`: `I − c²/(1 + c²p_γ)·11ᵀ`.
pub fn gram_inverse_zprior(p_gamma: usize, c: f64) -> DMatrix<f64> {
    let k = c * c / (1.0 + c * c * p_gamma as f64);
    DMatrix::from_fn(p_gamma, p_gamma, |i, j| if i == j { 1.0 - k } else { -k })
}

/// The γ-independent part of `log p(y | γ)` for `n` samples.
pub(crate) fn log_marginal_constant(n: usize, hp: &Hyperparameters) -> f64 {
    let n = n as f64;
    let half_nu = 0.5 * hp.nu;
    let shape = 0.5 * (n + hp.nu);
    -0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * (n + 1.0).ln()
        + half_nu * (half_nu * hp.omega).ln()
        - ln_gamma(half_nu)
        + ln_gamma(shape)
        + shape * std::f64::consts::LN_2
}

/// `log p(y | γ)` from `log|a_γ|` and `C_γ`.
pub(crate) fn log_marginal_from_parts(n: usize, p_gamma: usize, logdet_a: f64, c_gamma: f64, hp: &Hyperparameters) -> f64 {
    let pg = p_gamma as f64;
    let prior_logdet = (1.0 + hp.c * hp.c * pg).ln() - pg * hp.tau2.ln();
    log_marginal_constant(n, hp) - 0.5 * logdet_a + 0.5 * prior_logdet
        - 0.5 * (n as f64 + hp.nu) * (c_gamma + hp.nu * hp.omega).ln()
}

pub(crate) fn clamp_c_gamma(c: f64, context: impl FnOnce() -> String) -> Result<f64> {
    if c >= 0.0 {
        Ok(c)
    } else if c >= -C_GAMMA_CLAMP {
        Ok(0.0)
    } else {
        Err(Error::numerical(format!("negative residual sum of squares {c} for {}", context())))
    }
}

/// Computes `a_γ`, `β̂_γ`, `C_γ` and `log p(y | γ)` from scratch for the
/// complete response `y`.
pub fn compute_collapsed(
    dataset: &Dataset,
    y: &DVector<f64>,
    selection: &SelectionState,
    hp: &Hyperparameters,
) -> Result<CollapsedQuantities> {
    let n = dataset.n();
    if y.len() != n {
        return Err(Error::input(format!("response has length {}, expected {n}", y.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("response has non-finite entries"));
    }
    let active = selection.active();
    let k = active.len();
    let shrink = 1.0 / (n as f64 + 1.0);

    let y_sum = y.sum();
    let y_h_y = y.dot(y) - shrink * y_sum * y_sum;

    let xg = dataset.x.select_columns(active);
    let col_sums = DVector::from_iterator(k, xg.column_iter().map(|c| c.sum()));
    let mut a = xg.tr_mul(&xg) - (&col_sums * col_sums.transpose()) * shrink;
    a += zprior_gram(k, hp.c) / hp.tau2;
    let b = xg.tr_mul(y) - &col_sums * (shrink * y_sum);

    let chol = a.clone().cholesky().ok_or_else(|| {
        let diag_max = a.diagonal().max();
        let diag_min = a.diagonal().min();
        Error::numerical(format!(
            "a_gamma not positive definite for active set {active:?} (diagonal range {diag_min:.3e}..{diag_max:.3e})"
        ))
    })?;
    let l = chol.l();
    let beta_hat = chol.solve(&b);
    let logdet_a = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let c_gamma = clamp_c_gamma(y_h_y - b.dot(&beta_hat), || format!("active set {active:?}"))?;
    let log_marginal = log_marginal_from_parts(n, k, logdet_a, c_gamma, hp);

    Ok(CollapsedQuantities {
        a_gamma: a,
        a_gamma_chol: l,
        beta_hat,
        c_gamma,
        log_marginal,
    })
}

/// `log p(y | γ with γ_r flipped) − log p(y | γ)`.
pub fn bayes_factor_flip(
    dataset: &Dataset,
    y: &DVector<f64>,
    selection: &SelectionState,
    hp: &Hyperparameters,
    r: usize,
) -> Result<f64> {
    if r >= selection.p() {
        return Err(Error::input(format!("feature index {r} out of range")));
    }
    let current = compute_collapsed(dataset, y, selection, hp)?;
    let flipped = compute_collapsed(dataset, y, &selection.flipped(r), hp)?;
    Ok(flipped.log_marginal - current.log_marginal)
}

/// Prior log odds of `γ_r = 1` against `γ_r = 0` given the other indicators.
pub fn ising_conditional_log_odds(selection: &SelectionState, hp: &Hyperparameters, r: usize) -> f64 {
    let mut log_odds = hp.ising_a[r];
    if let Some(q) = &hp.ising_q {
        let q = q.matrix();
        let coupling: f64 = selection
            .active()
            .iter()
            .filter(|&&j| j != r)
            .map(|&j| q[(r, j)])
            .sum();
        let weight = if hp.ising_double_count { 2.0 } else { 1.0 };
        log_odds += weight * coupling;
    }
    log_odds
}

/// Posterior probability that a missing sample is missing because it fell
/// below ξ, given its linear predictor `mu` and noise sd `sigma`.
pub fn mnar_posterior_probability(mu: f64, sigma: f64, xi: f64, theta: f64) -> f64 {
    if theta <= 0.0 {
        return 1.0;
    }
    let a = (xi - mu) / sigma;
    // P = Φ(a) / (Φ(a) + θ(1−Φ(a))) = 1 / (1 + θ·Φ(−a)/Φ(a))
    let log_ratio = theta.ln() + log_normal_cdf(-a) - log_normal_cdf(a);
    let p = 1.0 / (1.0 + log_ratio.exp());
    p.clamp(0.0, 1.0)
}

/// Logistic function, `1 / (1 + e^{-x})`, stable for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
