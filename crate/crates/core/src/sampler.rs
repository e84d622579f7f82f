//! The Gibbs sampler and posterior summaries.
//!
//! One sweep runs, in order: single-index γ updates with β collapsed out,
//! a joint draw of (σ², β_γ, β₀) given γ, a blocked draw of (Z_i, y_i) for
//! every missing sample, and a draw of the MAR probability θ.
//!
//! Each block draws from its own ChaCha stream derived from the seed, so
//! skipping a block (for example the missingness updates in single-imputation
//! mode) leaves the other blocks' random numbers unchanged.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::collapsed::CollapsedEvaluator;
use crate::distributions::{
    sample_beta, sample_inverse_gamma, sample_mvn_from_precision_factor, sample_truncated_normal,
    TruncatedNormalSpec,
};
use crate::error::{Error, Result};
use crate::model::{
    ising_conditional_log_odds, mnar_posterior_probability, sigmoid, Dataset, Hyperparameters,
    MissingnessState, RegressionState, SelectionState,
};

/// How missing outcomes are handled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputeMode {
    /// Sample missing values inside the model.
    Model,
    /// Fill once with the mean of the observed outcomes.
    Mean,
    /// Fill once with log(0.5 × smallest observed abundance).
    HalfMin,
}

impl ImputeMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ImputeMode::Model => "model",
            ImputeMode::Mean => "mean",
            ImputeMode::HalfMin => "half_min",
        }
    }
}

impl std::str::FromStr for ImputeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "model" => Ok(ImputeMode::Model),
            "mean" => Ok(ImputeMode::Mean),
            "half_min" => Ok(ImputeMode::HalfMin),
            other => Err(Error::input(format!("unknown impute mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_iterations: usize,
    pub burn_in: usize,
    /// Single-index γ updates per sweep; `None` means one per feature.
    pub gamma_updates_per_sweep: Option<usize>,
    pub seed: u64,
    pub thin: usize,
    pub impute_mode: ImputeMode,
    /// Keep every retained β draw, not only the scalar traces.
    pub store_traces: bool,
    #[serde(default)]
    pub gamma_init: GammaInit,
}

/// Starting point of γ.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaInit {
    /// All indicators off.
    Empty,
    /// Greedy ascent of the collapsed log posterior from the best pair.
    ///
    /// Under the zero-sum prior a lone feature has its coefficient pinned
    /// near zero, so single flips out of the empty model are essentially
    /// never accepted when the prior odds are small.
    #[default]
    Greedy,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_iterations: 10_000,
            burn_in: 5_000,
            gamma_updates_per_sweep: None,
            seed: 1,
            thin: 1,
            impute_mode: ImputeMode::Model,
            store_traces: false,
            gamma_init: GammaInit::Greedy,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iterations == 0 {
            return Err(Error::input("n_iterations must be positive"));
        }
        if self.burn_in >= self.n_iterations {
            return Err(Error::input(format!(
                "burn_in ({}) must be smaller than n_iterations ({})",
                self.burn_in, self.n_iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::input("thin must be positive"));
        }
        if self.gamma_updates_per_sweep == Some(0) {
            return Err(Error::input("gamma_updates_per_sweep must be positive"));
        }
        Ok(())
    }

    pub fn n_kept(&self) -> usize {
        (self.n_iterations - self.burn_in).div_ceil(self.thin)
    }
}

/// Mutable state of one chain.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub selection: SelectionState,
    pub regression: RegressionState,
    pub missingness: MissingnessState,
    evaluator: CollapsedEvaluator,
    log_marginal: f64,
    /// ξ after applying the LOD scale.
    xi: f64,
}

impl ChainState {
    /// Empty γ, σ² = 1, β₀ at the observed mean and the missingness
    /// initialization of [`MissingnessState::initial`].
    pub fn initial(dataset: &Dataset, hp: &Hyperparameters) -> Result<Self> {
        let xi = hp.effective_xi(dataset.xi);
        let missingness = MissingnessState::initial(dataset, xi);
        Self::with_response(dataset, hp, missingness, SelectionState::empty(dataset.p()))
    }

    /// Starts from an explicit missingness state and selection.
    pub fn with_response(
        dataset: &Dataset,
        hp: &Hyperparameters,
        missingness: MissingnessState,
        selection: SelectionState,
    ) -> Result<Self> {
        hp.validate(dataset.p())?;
        let xi = hp.effective_xi(dataset.xi);
        let evaluator = CollapsedEvaluator::new(dataset, hp, &missingness.y_latent, &selection)?;
        let log_marginal = evaluator.log_marginal_current()?;
        let beta0 = missingness.y_latent.mean();
        Ok(ChainState {
            regression: RegressionState {
                beta0,
                beta_active: DVector::zeros(selection.p_gamma()),
                sigma2: 1.0,
            },
            selection,
            missingness,
            evaluator,
            log_marginal,
            xi,
        })
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn log_marginal(&self) -> f64 {
        self.log_marginal
    }

    /// Replaces the complete response and refreshes the collapsed caches.
    pub fn set_response(&mut self, dataset: &Dataset, y: DVector<f64>) -> Result<()> {
        self.evaluator.set_response(&dataset.x, &y)?;
        self.missingness.y_latent = y;
        self.log_marginal = self.evaluator.log_marginal_current()?;
        Ok(())
    }

    /// Unnormalized log of p(y | γ)·π(γ), with the Ising pair sum weighted
    /// the same way as in the conditional log odds.
    pub fn log_collapsed_posterior(&self, hp: &Hyperparameters) -> f64 {
        let active = self.selection.active();
        let mut prior: f64 = active.iter().map(|&j| hp.ising_a[j]).sum();
        if let Some(q) = &hp.ising_q {
            let q = q.matrix();
            let weight = if hp.ising_double_count { 2.0 } else { 1.0 };
            for (k, &i) in active.iter().enumerate() {
                for &j in &active[k + 1..] {
                    prior += weight * q[(i, j)];
                }
            }
        }
        self.log_marginal + prior
    }
}

/// Moves γ to a local mode of `log p(y | γ) + log π(γ)`: the best pair
/// (if it beats the current state), then single additions while any
/// improves the objective, up to `max_size` features.
pub fn greedy_selection(state: &mut ChainState, hp: &Hyperparameters, max_size: usize) -> Result<()> {
    let p = state.selection.p();
    let mut empty_base = None;
    if state.selection.p_gamma() == 0 && p >= 2 && max_size >= 2 {
        let weight = if hp.ising_double_count { 2.0 } else { 1.0 };
        let q = hp.ising_q.as_ref().map(|q| q.matrix());
        let base = state.log_collapsed_posterior(hp);
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..p {
            state.evaluator.commit_add(i)?;
            for j in i + 1..p {
                let mut score = state.evaluator.log_marginal_if_added(j)? + hp.ising_a[i] + hp.ising_a[j];
                if let Some(q) = q {
                    score += weight * q[(i, j)];
                }
                if best.is_none_or(|(s, _, _)| score > s) {
                    best = Some((score, i, j));
                }
            }
            state.evaluator.commit_remove(i)?;
        }
        // The pair is kept even when it alone does not beat the empty model:
        // further additions may, and the comparison happens at the end.
        if let Some((score, i, j)) = best {
            log::debug!("greedy start: pair ({i}, {j}) gains {:.2}", score - base);
            for k in [i, j] {
                state.evaluator.commit_add(k)?;
                state.selection.set(k, true);
            }
        }
        empty_base = Some(base);
    }
    if state.selection.p_gamma() >= 2 {
        while state.selection.p_gamma() < max_size {
            let current = state.evaluator.log_marginal_current()?;
            let mut best: Option<(f64, usize)> = None;
            for j in 0..p {
                if state.selection.is_selected(j) {
                    continue;
                }
                let gain = state.evaluator.log_marginal_if_added(j)? - current
                    + ising_conditional_log_odds(&state.selection, hp, j);
                if best.is_none_or(|(g, _)| gain > g) {
                    best = Some((gain, j));
                }
            }
            match best {
                Some((gain, j)) if gain > 0.0 => {
                    state.evaluator.commit_add(j)?;
                    state.selection.set(j, true);
                }
                _ => break,
            }
        }
    }
    state.log_marginal = state.evaluator.log_marginal_current()?;
    if let Some(base) = empty_base {
        if state.log_collapsed_posterior(hp) <= base {
            for k in state.selection.active().to_vec() {
                state.evaluator.commit_remove(k)?;
                state.selection.set(k, false);
            }
            state.log_marginal = state.evaluator.log_marginal_current()?;
        }
    }
    state.regression.beta_active = DVector::zeros(state.selection.p_gamma());
    log::debug!("greedy start selected {:?}", state.selection.active());
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptCounts {
    pub gamma_proposals: u64,
    pub gamma_flips: u64,
}

/// Posterior inclusion probability of `γ_r = 1` given everything else.
pub fn inclusion_probability(state: &mut ChainState, hp: &Hyperparameters, r: usize) -> Result<f64> {
    let (with, without) = if state.selection.is_selected(r) {
        (state.log_marginal, state.evaluator.log_marginal_if_removed(r)?)
    } else {
        (state.evaluator.log_marginal_if_added(r)?, state.log_marginal)
    };
    let prior = ising_conditional_log_odds(&state.selection, hp, r);
    Ok(sigmoid(prior + with - without))
}

/// Runs `n_updates` single-index Gibbs updates of γ, each at an index drawn
/// uniformly from `0..p`, against the current complete response.
pub fn update_gamma<R: Rng + ?Sized>(
    state: &mut ChainState,
    hp: &Hyperparameters,
    n_updates: usize,
    rng: &mut R,
    counts: &mut AcceptCounts,
) -> Result<()> {
    let p = state.selection.p();
    for _ in 0..n_updates {
        let r = rng.random_range(0..p);
        let prob = inclusion_probability(state, hp, r)?;
        let include = rng.random::<f64>() < prob;
        counts.gamma_proposals += 1;
        if include == state.selection.is_selected(r) {
            continue;
        }
        if include {
            state.evaluator.commit_add(r)?;
        } else {
            state.evaluator.commit_remove(r)?;
        }
        state.selection.set(r, include);
        state.log_marginal = state.evaluator.log_marginal_current()?;
        counts.gamma_flips += 1;
    }
    Ok(())
}

/// Draws σ² | γ, y, then β_γ | σ², γ, y, then β₀ | β, σ², y.
pub fn update_regression<R: Rng + ?Sized>(
    state: &mut ChainState,
    dataset: &Dataset,
    hp: &Hyperparameters,
    rng: &mut R,
) -> Result<()> {
    let n = dataset.n() as f64;
    let (beta_hat, chol, c_gamma) = state.evaluator.posterior_parts()?;
    let sigma2 = sample_inverse_gamma(0.5 * (n + hp.nu), 0.5 * (c_gamma + hp.nu * hp.omega), rng)?;
    let beta = sample_mvn_from_precision_factor(&beta_hat, &chol, sigma2, rng)?;
    let y = &state.missingness.y_latent;
    let active = state.selection.active();
    let mut resid_sum = 0.0;
    for i in 0..dataset.n() {
        let fit: f64 = active.iter().zip(beta.iter()).map(|(&j, b)| dataset.x[(i, j)] * b).sum();
        resid_sum += y[i] - fit;
    }
    let z: f64 = rng.sample(StandardNormal);
    let beta0 = resid_sum / (n + 1.0) + (sigma2 / (n + 1.0)).sqrt() * z;
    state.regression = RegressionState {
        beta0,
        beta_active: beta,
        sigma2,
    };
    Ok(())
}

/// Draws (Z_i, y_i) for each missing sample: Z_i from its Bernoulli full
/// conditional, then y_i from the normal truncated to the side of ξ that Z_i
/// selects. Observed entries are untouched.
pub fn update_missingness<R: Rng + ?Sized>(
    state: &mut ChainState,
    dataset: &Dataset,
    rng: &mut R,
) -> Result<()> {
    let sigma = state.regression.sigma2.sqrt();
    let xi = state.xi;
    let theta = state.missingness.theta;
    let mut y = state.missingness.y_latent.clone();
    for i in 0..dataset.n() {
        if dataset.observed[i] {
            continue;
        }
        let mu = state.regression.fitted(&dataset.x, &state.selection, i);
        let p_mnar = mnar_posterior_probability(mu, sigma, xi, theta);
        let z = rng.random::<f64>() < p_mnar;
        let spec = if z {
            TruncatedNormalSpec::below(mu, sigma, xi)?
        } else {
            TruncatedNormalSpec::above(mu, sigma, xi)?
        };
        y[i] = sample_truncated_normal(&spec, rng)?;
        state.missingness.z[i] = z;
    }
    state.set_response(dataset, y)
}

/// Counts used by the θ update: `(Σ(1−R_i)·I(y_i > ξ), Σ R_i·I(y_i > ξ))`.
pub fn theta_counts(y: &DVector<f64>, dataset: &Dataset, xi: f64) -> (usize, usize) {
    let mut missing_above = 0;
    let mut observed_above = 0;
    for i in 0..dataset.n() {
        if y[i] > xi {
            if dataset.observed[i] {
                observed_above += 1;
            } else {
                missing_above += 1;
            }
        }
    }
    (missing_above, observed_above)
}

/// θ ~ Beta(Σ(1−R_i)I(y_i>ξ) + 1, ΣR_i I(y_i>ξ) + 1).
pub fn update_theta<R: Rng + ?Sized>(state: &mut ChainState, dataset: &Dataset, rng: &mut R) -> Result<f64> {
    let (missing_above, observed_above) = theta_counts(&state.missingness.y_latent, dataset, state.xi);
    let theta = sample_beta(missing_above as f64 + 1.0, observed_above as f64 + 1.0, rng)?;
    state.missingness.theta = theta;
    Ok(theta)
}

/// Scalar diagnostics recorded every iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub p_gamma: usize,
    pub beta0: f64,
    pub sigma2: f64,
    pub theta: f64,
    pub log_posterior: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaDraw {
    pub iteration: usize,
    pub feature: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub n_kept: usize,
    pub ppi: Vec<f64>,
    /// Median probability model: features with PPI > 0.5.
    pub selected: Vec<usize>,
    /// Mean of β_j over draws that include j; 0 if never included.
    pub beta_mean: Vec<f64>,
    pub beta_ci_lower: Vec<f64>,
    pub beta_ci_upper: Vec<f64>,
    /// Model-averaged mean (draws excluding j count as 0).
    pub beta_bma: Vec<f64>,
    pub beta0_mean: f64,
    pub sigma2_mean: f64,
    pub missing_indices: Vec<usize>,
    pub y_imputed_mean: Vec<f64>,
    pub y_imputed_ci_lower: Vec<f64>,
    pub y_imputed_ci_upper: Vec<f64>,
    /// `None` when missing values were filled up front.
    pub theta_mean: Option<f64>,
    pub xi: f64,
    pub accept_counts: AcceptCounts,
    pub trace: Vec<TraceRow>,
    pub beta_trace: Option<Vec<BetaDraw>>,
}

impl ChainSummary {
    /// Coefficient estimate of the median probability model: the
    /// conditional posterior mean on selected features, zero elsewhere.
    pub fn mpm_beta(&self) -> Vec<f64> {
        let mut beta = vec![0.0; self.ppi.len()];
        for &j in &self.selected {
            beta[j] = self.beta_mean[j];
        }
        beta
    }
}

/// Equal-tailed interval and mean of a sample; sorts `values` in place.
fn interval(values: &mut [f64]) -> (f64, f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.sort_by(f64::total_cmp);
    (mean, quantile_sorted(values, 0.025), quantile_sorted(values, 0.975))
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Fills missing outcomes once for the single-imputation modes.
pub fn single_imputation_value(dataset: &Dataset, mode: ImputeMode) -> Option<f64> {
    let observed = (0..dataset.n()).filter(|&i| dataset.observed[i]).map(|i| dataset.y_obs[i]);
    match mode {
        ImputeMode::Model => None,
        ImputeMode::Mean => Some(observed.sum::<f64>() / dataset.n_observed() as f64),
        ImputeMode::HalfMin => Some(observed.fold(f64::INFINITY, f64::min) + 0.5f64.ln()),
    }
}

/// Greedy warm start computed on the complete cases only, so that the
/// placeholder values of missing outcomes do not dilute the signal.
pub fn warm_start_selection(dataset: &Dataset, hp: &Hyperparameters) -> Result<SelectionState> {
    let rows: Vec<usize> = (0..dataset.n()).filter(|&i| dataset.observed[i]).collect();
    let p = dataset.p();
    if rows.len() < 3 {
        return Ok(SelectionState::empty(p));
    }
    let x = DMatrix::from_fn(rows.len(), p, |r, j| dataset.x[(rows[r], j)]);
    let y: Vec<Option<f64>> = rows.iter().map(|&i| Some(dataset.y_obs[i])).collect();
    let complete = Dataset::new(x, &y, Some(dataset.xi))?;
    let mut state = ChainState::initial(&complete, hp)?;
    greedy_selection(&mut state, hp, greedy_cap(rows.len(), p))?;
    Ok(state.selection)
}

/// Largest warm-start model: keeps `a_γ` far from the n ≤ p_γ regime.
fn greedy_cap(n: usize, p: usize) -> usize {
    (n / 2).min(p)
}

const STREAM_GAMMA: u64 = 1;
const STREAM_REGRESSION: u64 = 2;
const STREAM_MISSING: u64 = 3;
const STREAM_THETA: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Runs one chain and summarizes the retained draws.
pub fn run_chain(dataset: &Dataset, hp: &Hyperparameters, config: &SamplerConfig) -> Result<ChainSummary> {
    config.validate()?;
    hp.validate(dataset.p())?;
    let p = dataset.p();
    let missing = dataset.missing_indices();
    let fill = single_imputation_value(dataset, config.impute_mode);

    let mut state = match fill {
        None => ChainState::initial(dataset, hp)?,
        Some(v) => {
            let xi = hp.effective_xi(dataset.xi);
            let mut m = MissingnessState::initial(dataset, xi);
            for &i in &missing {
                m.y_latent[i] = v;
                m.z[i] = v <= xi;
            }
            ChainState::with_response(dataset, hp, m, SelectionState::empty(p))?
        }
    };
    let model_imputation = fill.is_none();
    let mut rng_gamma = stream(config.seed, STREAM_GAMMA);
    let mut rng_reg = stream(config.seed, STREAM_REGRESSION);
    let mut rng_miss = stream(config.seed, STREAM_MISSING);
    let mut rng_theta = stream(config.seed, STREAM_THETA);

    if config.gamma_init == GammaInit::Greedy {
        let selection = warm_start_selection(dataset, hp)?;
        state = ChainState::with_response(dataset, hp, state.missingness, selection)?;
        // Fill the missing outcomes from the warm-started model before the
        // first γ sweep sees them.
        update_regression(&mut state, dataset, hp, &mut rng_reg)?;
        if model_imputation {
            update_missingness(&mut state, dataset, &mut rng_miss)?;
        }
    }

    let n_updates = config.gamma_updates_per_sweep.unwrap_or(p);
    let n_kept = config.n_kept();
    let mut counts = AcceptCounts::default();
    let mut include_count = vec![0usize; p];
    let mut beta_draws: Vec<Vec<f64>> = vec![Vec::new(); p];
    let mut y_draws: Vec<Vec<f64>> = vec![Vec::with_capacity(n_kept); missing.len()];
    let (mut beta0_sum, mut sigma2_sum, mut theta_sum) = (0.0, 0.0, 0.0);
    let mut trace = Vec::with_capacity(config.n_iterations);
    let mut beta_trace = config.store_traces.then(Vec::new);

    for it in 0..config.n_iterations {
        let step = |e: Error, state: &ChainState| match e {
            Error::Numerical(msg) => Error::Numerical(format!(
                "iteration {it} (active set {:?}): {msg}",
                state.selection.active()
            )),
            other => other,
        };
        update_gamma(&mut state, hp, n_updates, &mut rng_gamma, &mut counts).map_err(|e| step(e, &state))?;
        update_regression(&mut state, dataset, hp, &mut rng_reg).map_err(|e| step(e, &state))?;
        if model_imputation {
            update_missingness(&mut state, dataset, &mut rng_miss).map_err(|e| step(e, &state))?;
            update_theta(&mut state, dataset, &mut rng_theta).map_err(|e| step(e, &state))?;
        }

        trace.push(TraceRow {
            iteration: it,
            p_gamma: state.selection.p_gamma(),
            beta0: state.regression.beta0,
            sigma2: state.regression.sigma2,
            theta: state.missingness.theta,
            log_posterior: state.log_collapsed_posterior(hp),
        });

        if it < config.burn_in || (it - config.burn_in) % config.thin != 0 {
            continue;
        }
        for (k, &j) in state.selection.active().iter().enumerate() {
            let b = state.regression.beta_active[k];
            include_count[j] += 1;
            beta_draws[j].push(b);
            if let Some(t) = beta_trace.as_mut() {
                t.push(BetaDraw {
                    iteration: it,
                    feature: j,
                    value: b,
                });
            }
        }
        beta0_sum += state.regression.beta0;
        sigma2_sum += state.regression.sigma2;
        theta_sum += state.missingness.theta;
        for (draws, &i) in y_draws.iter_mut().zip(&missing) {
            draws.push(state.missingness.y_latent[i]);
        }
    }

    let kept = n_kept as f64;
    let ppi: Vec<f64> = include_count.iter().map(|&c| c as f64 / kept).collect();
    let selected: Vec<usize> = (0..p).filter(|&j| ppi[j] > 0.5).collect();
    let mut beta_mean = vec![0.0; p];
    let mut beta_ci_lower = vec![0.0; p];
    let mut beta_ci_upper = vec![0.0; p];
    let mut beta_bma = vec![0.0; p];
    for j in 0..p {
        if beta_draws[j].is_empty() {
            continue;
        }
        beta_bma[j] = beta_draws[j].iter().sum::<f64>() / kept;
        let (m, lo, hi) = interval(&mut beta_draws[j]);
        beta_mean[j] = m;
        beta_ci_lower[j] = lo;
        beta_ci_upper[j] = hi;
    }
    let mut y_imputed_mean = Vec::with_capacity(missing.len());
    let mut y_imputed_ci_lower = Vec::with_capacity(missing.len());
    let mut y_imputed_ci_upper = Vec::with_capacity(missing.len());
    for draws in y_draws.iter_mut() {
        let (m, lo, hi) = interval(draws);
        y_imputed_mean.push(m);
        y_imputed_ci_lower.push(lo);
        y_imputed_ci_upper.push(hi);
    }

    Ok(ChainSummary {
        n_kept,
        ppi,
        selected,
        beta_mean,
        beta_ci_lower,
        beta_ci_upper,
        beta_bma,
        beta0_mean: beta0_sum / kept,
        sigma2_mean: sigma2_sum / kept,
        missing_indices: missing,
        y_imputed_mean,
        y_imputed_ci_lower,
        y_imputed_ci_upper,
        theta_mean: model_imputation.then(|| theta_sum / kept),
        xi: state.xi,
        accept_counts: counts,
        trace,
        beta_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    /// y = 1 + 2·x0 − 2·x1 + noise, with the lowest `n_mnar` and every
    /// `mar_every`-th remaining sample removed.
    fn dataset(n: usize, p: usize, n_mnar: usize, mar_every: usize, seed: u64) -> (Dataset, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        for mut c in x.column_iter_mut() {
            let m = c.mean();
            c.add_scalar_mut(-m);
            let sd = (c.norm_squared() / (n as f64 - 1.0)).sqrt();
            c /= sd;
        }
        let y = DVector::from_fn(n, |i, _| 1.0 + 2.0 * x[(i, 0)] - 2.0 * x[(i, 1)] + 0.3 * rng.sample::<f64, _>(StandardNormal));
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
        let mut obs = vec![true; n];
        for &i in &order[..n_mnar] {
            obs[i] = false;
        }
        for (k, &i) in order[n_mnar + 1..].iter().enumerate() {
            if mar_every > 0 && k % mar_every == 0 {
                obs[i] = false;
            }
        }
        let yo: Vec<Option<f64>> = (0..n).map(|i| obs[i].then_some(y[i])).collect();
        (Dataset::new(x, &yo, None).unwrap(), y)
    }

    fn short(seed: u64) -> SamplerConfig {
        SamplerConfig {
            n_iterations: 400,
            burn_in: 200,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(SamplerConfig::default().validate().is_ok());
        assert!(SamplerConfig { burn_in: 10_000, ..Default::default() }.validate().is_err());
        assert!(SamplerConfig { thin: 0, ..Default::default() }.validate().is_err());
        assert_eq!(SamplerConfig { thin: 3, ..short(1) }.n_kept(), 67);
    }

    #[test]
    fn impute_mode_names() {
        for m in [ImputeMode::Model, ImputeMode::Mean, ImputeMode::HalfMin] {
            assert_eq!(m.as_str().parse::<ImputeMode>().unwrap(), m);
        }
        assert!("median".parse::<ImputeMode>().is_err());
    }

    #[test]
    fn single_imputation_values() {
        let (ds, _) = dataset(30, 4, 5, 0, 2);
        let obs: Vec<f64> = (0..30).filter(|&i| ds.observed[i]).map(|i| ds.y_obs[i]).collect();
        let mean = obs.iter().sum::<f64>() / obs.len() as f64;
        let min = obs.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(single_imputation_value(&ds, ImputeMode::Mean), Some(mean));
        assert_eq!(single_imputation_value(&ds, ImputeMode::HalfMin), Some(min + 0.5f64.ln()));
        assert_eq!(single_imputation_value(&ds, ImputeMode::Model), None);
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&v, 0.975), 4.9);
    }

    #[test]
    fn theta_zero_forces_mnar() {
        let (ds, _) = dataset(60, 5, 10, 4, 3);
        let hp = Hyperparameters::new(5);
        let mut state = ChainState::initial(&ds, &hp).unwrap();
        state.missingness.theta = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        update_missingness(&mut state, &ds, &mut rng).unwrap();
        for i in ds.missing_indices() {
            assert!(state.missingness.z[i]);
            assert!(state.missingness.y_latent[i] < state.xi());
        }
    }

    #[test]
    fn theta_counts_extremes() {
        let (ds, _) = dataset(40, 3, 0, 0, 5);
        let xi = f64::NEG_INFINITY;
        assert_eq!(theta_counts(&ds.y_obs, &ds, xi), (0, 40));
        let all_missing = Dataset::new(ds.x.clone(), &[vec![Some(0.0)], vec![None; 39]].concat(), Some(-1.0)).unwrap();
        let y = DVector::from_element(40, 5.0);
        assert_eq!(theta_counts(&y, &all_missing, -1.0), (39, 1));
    }

    #[test]
    fn chain_keeps_truncation_constraint() {
        let (ds, _) = dataset(80, 10, 15, 5, 6);
        let hp = Hyperparameters::new(10);
        let mut state = ChainState::initial(&ds, &hp).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = AcceptCounts::default();
        for _ in 0..200 {
            update_gamma(&mut state, &hp, 10, &mut rng, &mut counts).unwrap();
            update_regression(&mut state, &ds, &hp, &mut rng).unwrap();
            update_missingness(&mut state, &ds, &mut rng).unwrap();
            update_theta(&mut state, &ds, &mut rng).unwrap();
            assert!(state.missingness.is_consistent(&ds, state.xi()));
            for i in 0..ds.n() {
                if ds.observed[i] {
                    assert_eq!(state.missingness.y_latent[i], ds.y_obs[i]);
                }
            }
        }
    }

    #[test]
    fn selects_signal_and_rejects_noise() {
        let (ds, _) = dataset(100, 30, 20, 5, 8);
        let hp = Hyperparameters::new(30);
        let s = run_chain(&ds, &hp, &short(9)).unwrap();
        assert!(s.ppi[0] > 0.99 && s.ppi[1] > 0.99, "{:?}", &s.ppi[..2]);
        assert!(s.ppi[2..].iter().all(|&v| v < 0.05), "{:?}", s.ppi);
        assert_eq!(s.selected, vec![0, 1]);
        assert!((s.beta_mean[0] - 2.0).abs() < 0.2);
        assert!((s.beta_mean[1] + 2.0).abs() < 0.2);
        assert!(s.ppi.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn empty_start_is_available() {
        let (ds, _) = dataset(60, 8, 0, 0, 10);
        let hp = Hyperparameters::new(8);
        let cfg = SamplerConfig {
            gamma_init: GammaInit::Empty,
            ..short(11)
        };
        let s = run_chain(&ds, &hp, &cfg).unwrap();
        assert_eq!(s.trace.len(), 400);
    }

    #[test]
    fn same_seed_same_summary() {
        let (ds, _) = dataset(60, 12, 10, 4, 12);
        let hp = Hyperparameters::new(12);
        let cfg = SamplerConfig {
            store_traces: true,
            ..short(13)
        };
        let a = run_chain(&ds, &hp, &cfg).unwrap();
        let b = run_chain(&ds, &hp, &cfg).unwrap();
        assert_eq!(a, b);
        let c = run_chain(&ds, &hp, &SamplerConfig { seed: 14, ..cfg }).unwrap();
        assert_ne!(a.trace, c.trace);
    }

    #[test]
    fn mean_mode_matches_model_mode_without_missing() {
        let (ds, _) = dataset(50, 8, 0, 0, 15);
        let hp = Hyperparameters::new(8);
        let model = run_chain(&ds, &hp, &short(16)).unwrap();
        let mean = run_chain(&ds, &hp, &SamplerConfig { impute_mode: ImputeMode::Mean, ..short(16) }).unwrap();
        assert_eq!(model.ppi, mean.ppi);
        assert_eq!(model.beta_mean, mean.beta_mean);
        assert_eq!(model.sigma2_mean, mean.sigma2_mean);
    }

    #[test]
    fn single_imputation_leaves_fill_fixed() {
        let (ds, _) = dataset(50, 6, 8, 4, 17);
        let hp = Hyperparameters::new(6);
        let s = run_chain(&ds, &hp, &SamplerConfig { impute_mode: ImputeMode::HalfMin, ..short(18) }).unwrap();
        let fill = single_imputation_value(&ds, ImputeMode::HalfMin).unwrap();
        assert!(s.y_imputed_mean.iter().all(|&v| (v - fill).abs() < 1e-12));
        assert_eq!(s.theta_mean, None);
    }
}
