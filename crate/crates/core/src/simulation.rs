//! Synthetic benchmark data.
//!
//! Covariates are multivariate normal on the log scale, mapped to
//! compositions by a row-wise softmax. The outcome is linear in the
//! log-compositions, and missingness is injected as a mix of values removed
//! for falling below a detection limit (MNAR) and values removed at random
//! above it (MAR).

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    Independent,
    Dependent,
}

/// How the MNAR portion of the missing values is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MnarMechanism {
    /// The lowest values are removed; ξ is the smallest survivor.
    #[default]
    Threshold,
    /// Removal probability decays with distance above a soft threshold.
    Stochastic,
    /// Each sample has its own detection limit, jittered around a common one.
    PerSampleLod,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub n: usize,
    pub p: usize,
    pub design: Design,
    pub snr: f64,
    pub missing_rate: f64,
    pub mnar_fraction: f64,
    pub seed: u64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub beta0: f64,
    /// Student-t(3) errors rescaled to sd σ instead of Gaussian errors.
    #[serde(default)]
    pub heavy_tail: bool,
    /// Use `u_ij = exp(2·o_ij) / Σ_k exp(o_ik)` instead of the softmax.
    #[serde(default)]
    pub softmax_exponent_two: bool,
    #[serde(default)]
    pub mnar_mechanism: MnarMechanism,
    /// Spread of the stochastic / per-sample mechanisms, in units of sd(y).
    #[serde(default = "default_mnar_softness")]
    pub mnar_softness: f64,
}

fn default_train_fraction() -> f64 {
    0.7
}

fn default_mnar_softness() -> f64 {
    0.25
}

impl ScenarioSpec {
    /// Independent design at n=300, p=1000.
    pub fn independent(snr: f64, missing_rate: f64, mnar_fraction: f64, seed: u64) -> Self {
        ScenarioSpec {
            n: 300,
            p: 1000,
            design: Design::Independent,
            snr,
            missing_rate,
            mnar_fraction,
            seed,
            train_fraction: default_train_fraction(),
            beta0: 0.0,
            heavy_tail: false,
            softmax_exponent_two: false,
            mnar_mechanism: MnarMechanism::Threshold,
            mnar_softness: default_mnar_softness(),
        }
    }

    pub fn dependent(snr: f64, missing_rate: f64, mnar_fraction: f64, seed: u64) -> Self {
        ScenarioSpec {
            design: Design::Dependent,
            ..Self::independent(snr, missing_rate, mnar_fraction, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::input("scenario needs n >= 2"));
        }
        match self.design {
            Design::Independent if self.p < 8 => {
                return Err(Error::input(format!("independent design needs p >= 8, got {}", self.p)))
            }
            Design::Dependent if self.p < DEPENDENT_MIN_P => {
                return Err(Error::input(format!(
                    "dependent design needs p >= {DEPENDENT_MIN_P}, got {}",
                    self.p
                )))
            }
            _ => {}
        }
        if !(self.snr > 0.0) {
            return Err(Error::input(format!("snr must be positive, got {}", self.snr)));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::input(format!("missing_rate must be in [0, 1), got {}", self.missing_rate)));
        }
        if !(0.0..=1.0).contains(&self.mnar_fraction) {
            return Err(Error::input(format!("mnar_fraction must be in [0, 1], got {}", self.mnar_fraction)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::input(format!("train_fraction must be in (0, 1], got {}", self.train_fraction)));
        }
        if !(self.mnar_softness > 0.0) {
            return Err(Error::input("mnar_softness must be positive"));
        }
        Ok(())
    }

    /// The same scenario with the seed of replicate `rep`.
    pub fn replicate(&self, rep: u64) -> Self {
        ScenarioSpec {
            seed: replicate_seed(self.seed, rep),
            ..self.clone()
        }
    }
}

/// Mixes a base seed and a replicate index into an independent seed.
pub fn replicate_seed(seed: u64, rep: u64) -> u64 {
    let mut z = seed ^ rep.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const DEPENDENT_MIN_P: usize = 960;
const SIGNAL_VALUES_1: [f64; 12] = [0.88, -1.41, -1.39, -1.15, 1.04, 0.51, 1.21, -1.95, -1.86, 1.93, -1.34, -0.85];
const SIGNAL_VALUES_2: [f64; 12] = [1.76, -1.66, -0.99, 1.48, 0.69, 1.87, -0.54, 0.72, 1.35, 0.67, -0.81, -0.16];
const INDEPENDENT_BETA: [f64; 8] = [1.0, -0.8, 0.6, 0.0, 0.0, -1.5, -0.5, 1.2];

/// 0-based positions of `{offset + step·l}` for `l = 1..=count` (1-based in the design).
fn block(offset: usize, step: usize, count: usize) -> Vec<usize> {
    (1..=count).map(|l| offset + step * l - 1).collect()
}

/// The two 12-feature signal blocks of the dependent design.
pub fn dependent_signal_blocks() -> [Vec<usize>; 2] {
    [block(160, 20, 12), block(560, 20, 12)]
}

/// The two 16-feature correlated noise blocks of the dependent design.
pub fn dependent_noise_blocks() -> [Vec<usize>; 2] {
    [block(444, 1, 16), block(944, 1, 16)]
}

/// Features sharing the 2.001 interaction in the simulation Q.
pub fn q_cluster() -> Vec<usize> {
    let [s1, s2] = dependent_signal_blocks();
    let mut set: Vec<usize> = s1.into_iter().chain(s2).chain(block(44, 1, 16)).chain(block(444, 1, 16)).chain(block(944, 1, 16)).collect();
    set.sort_unstable();
    set.dedup();
    set
}

#[derive(Clone, Debug)]
pub struct Covariates {
    /// Latent log-abundances O.
    pub o: DMatrix<f64>,
    /// Compositions U.
    pub u: DMatrix<f64>,
    /// log U, before any standardization.
    pub x_log: DMatrix<f64>,
}

/// A correlated group of features: its indices and covariance.
struct CovBlock {
    idx: Vec<usize>,
    chol: DMatrix<f64>,
}

fn cov_block(idx: Vec<usize>, level: f64, slope: f64) -> CovBlock {
    let k = idx.len();
    let cov = DMatrix::from_fn(k, k, |a, b| {
        if a == b {
            1.0
        } else {
            level - slope * (idx[a] as f64 - idx[b] as f64).abs()
        }
    });
    let chol = match cov.clone().cholesky() {
        Some(c) => c.l(),
        None => {
            log::warn!("covariance block at {:?} not positive definite; adding 1e-8 jitter", idx.first());
            let jittered = cov + DMatrix::identity(k, k) * 1e-8;
            jittered.cholesky().expect("jittered block covariance").l()
        }
    };
    CovBlock { idx, chol }
}

pub fn generate_covariates<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Result<Covariates> {
    spec.validate()?;
    let (n, p) = (spec.n, spec.p);
    let mut mean = vec![0.0; p];
    let mut blocks = Vec::new();
    match spec.design {
        Design::Independent => {
            let high = (0.5 * p as f64).ln();
            mean[..5].iter_mut().for_each(|m| *m = high);
        }
        Design::Dependent => {
            let signal_mean = (0.5 * p as f64).ln();
            let noise_mean = (0.25 * p as f64).ln();
            for b in dependent_signal_blocks() {
                b.iter().for_each(|&j| mean[j] = signal_mean);
                blocks.push(cov_block(b, 0.75, 0.0015));
            }
            for b in dependent_noise_blocks() {
                b.iter().for_each(|&j| mean[j] = noise_mean);
                blocks.push(cov_block(b, 0.4, 0.02));
            }
        }
    }
    let mut o = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    for b in &blocks {
        for i in 0..n {
            let z = DVector::from_iterator(b.idx.len(), b.idx.iter().map(|&j| o[(i, j)]));
            let corr = &b.chol * z;
            for (k, &j) in b.idx.iter().enumerate() {
                o[(i, j)] = corr[k];
            }
        }
    }
    for (j, m) in mean.iter().enumerate() {
        o.column_mut(j).add_scalar_mut(*m);
    }

    let mut x_log = DMatrix::zeros(n, p);
    for i in 0..n {
        let row = o.row(i);
        let max = row.max();
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for j in 0..p {
            x_log[(i, j)] = if spec.softmax_exponent_two { 2.0 * o[(i, j)] - lse } else { o[(i, j)] - lse };
        }
    }
    let u = x_log.map(f64::exp);
    Ok(Covariates { o, u, x_log })
}

/// True coefficient vector and its support.
pub fn assign_coefficients(spec: &ScenarioSpec) -> Result<(Vec<f64>, Vec<usize>)> {
    spec.validate()?;
    let mut beta = vec![0.0; spec.p];
    match spec.design {
        Design::Independent => beta[..8].copy_from_slice(&INDEPENDENT_BETA),
        Design::Dependent => {
            let [b1, b2] = dependent_signal_blocks();
            for (j, v) in b1.iter().zip(SIGNAL_VALUES_1) {
                beta[*j] = v;
            }
            for (j, v) in b2.iter().zip(SIGNAL_VALUES_2) {
                beta[*j] = v;
            }
        }
    }
    let support = (0..spec.p).filter(|&j| beta[j] != 0.0).collect();
    Ok((beta, support))
}

/// Noise sd implied by the SNR: mean |nonzero β| / snr.
pub fn noise_sd(beta: &[f64], snr: f64) -> f64 {
    let nz: Vec<f64> = beta.iter().filter(|b| **b != 0.0).map(|b| b.abs()).collect();
    nz.iter().sum::<f64>() / nz.len() as f64 / snr
}

/// `y = β₀ + X_log β + ε`; returns `(y, σ)`.
pub fn generate_outcome<R: Rng + ?Sized>(
    x_log: &DMatrix<f64>,
    beta: &[f64],
    spec: &ScenarioSpec,
    rng: &mut R,
) -> Result<(DVector<f64>, f64)> {
    if !(spec.snr > 0.0) {
        return Err(Error::input("snr must be positive"));
    }
    let sigma = noise_sd(beta, spec.snr);
    let beta = DVector::from_column_slice(beta);
    let mut y = x_log * beta;
    let t3 = StudentT::new(3.0).expect("t(3)");
    for v in y.iter_mut() {
        let eps = if spec.heavy_tail {
            // Var t(3) = 3.
            rng.sample::<f64, _>(t3) / 3f64.sqrt()
        } else {
            rng.sample::<f64, _>(StandardNormal)
        };
        *v += spec.beta0 + sigma * eps;
    }
    Ok((y, sigma))
}

#[derive(Clone, Debug, PartialEq)]
pub struct InjectedMissingness {
    pub observed: Vec<bool>,
    /// True for values removed by the MNAR mechanism.
    pub mnar: Vec<bool>,
    /// Smallest retained value.
    pub xi: f64,
}

impl InjectedMissingness {
    pub fn n_missing(&self) -> usize {
        self.observed.iter().filter(|o| !**o).count()
    }
}

/// Removes `round(n·rate·mnar_fraction)` values by the MNAR mechanism and
/// the rest of `round(n·rate)` uniformly among values above ξ.
pub fn inject_missingness<R: Rng + ?Sized>(
    y: &DVector<f64>,
    spec: &ScenarioSpec,
    rng: &mut R,
) -> Result<InjectedMissingness> {
    let n = y.len();
    let total = (n as f64 * spec.missing_rate).round() as usize;
    let n_mnar = (n as f64 * spec.missing_rate * spec.mnar_fraction).round() as usize;
    let n_mnar = n_mnar.min(total);
    let n_mar = total - n_mnar;
    if total + 1 > n {
        return Err(Error::input(format!("cannot remove {total} of {n} samples and keep one observed")));
    }

    let mnar_set: Vec<usize> = match spec.mnar_mechanism {
        MnarMechanism::Threshold => sorted_by(y, |i| y[i]).into_iter().take(n_mnar).collect(),
        MnarMechanism::PerSampleLod => {
            let spread = spec.mnar_softness * sd(y);
            let shifted: Vec<f64> = (0..n).map(|i| y[i] - spread * rng.sample::<f64, _>(StandardNormal)).collect();
            sorted_by(y, |i| shifted[i]).into_iter().take(n_mnar).collect()
        }
        MnarMechanism::Stochastic => {
            let order = sorted_by(y, |i| y[i]);
            let threshold = if n_mnar == 0 { y[order[0]] } else { y[order[n_mnar - 1]] };
            let scale = spec.mnar_softness * sd(y);
            let weights: Vec<f64> = (0..n).map(|i| (-(y[i] - threshold).max(0.0) / scale).exp()).collect();
            weighted_without_replacement(&weights, n_mnar, rng)
        }
    };
    let mut observed = vec![true; n];
    let mut mnar = vec![false; n];
    for &i in &mnar_set {
        observed[i] = false;
        mnar[i] = true;
    }
    let xi_index = (0..n)
        .filter(|&i| observed[i])
        .min_by(|&a, &b| y[a].total_cmp(&y[b]))
        .expect("at least one retained sample");
    let xi = y[xi_index];
    let candidates: Vec<usize> = (0..n).filter(|&i| observed[i] && y[i] > xi).collect();
    if n_mar > candidates.len() {
        return Err(Error::input(format!(
            "need {n_mar} MAR removals but only {} samples lie above the detection limit",
            candidates.len()
        )));
    }
    for k in sample_indices(rng, candidates.len(), n_mar) {
        observed[candidates[k]] = false;
    }
    Ok(InjectedMissingness { observed, mnar, xi })
}

fn sorted_by(y: &DVector<f64>, key: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..y.len()).collect();
    idx.sort_by(|&a, &b| key(a).total_cmp(&key(b)));
    idx
}

fn sd(y: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    let m = y.mean();
    (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Sequential weighted sampling without replacement.
fn weighted_without_replacement<R: Rng + ?Sized>(weights: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let mut w = weights.to_vec();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = w.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut chosen = w.iter().rposition(|&v| v > 0.0).expect("positive weight left");
        for (i, &v) in w.iter().enumerate() {
            if v > 0.0 && target < v {
                chosen = i;
                break;
            }
            target -= v;
        }
        out.push(chosen);
        w[chosen] = 0.0;
    }
    out
}

/// Stratified split: within the observed and the missing samples separately,
/// `round(train_fraction · count)` samples go to training.
pub fn train_test_split<R: Rng + ?Sized>(observed: &[bool], train_fraction: f64, rng: &mut R) -> Vec<bool> {
    let mut train = vec![false; observed.len()];
    for stratum in [true, false] {
        let mut idx: Vec<usize> = (0..observed.len()).filter(|&i| observed[i] == stratum).collect();
        idx.shuffle(rng);
        let k = (train_fraction * idx.len() as f64).round() as usize;
        for &i in &idx[..k] {
            train[i] = true;
        }
    }
    train
}

/// Symmetric p×p interaction matrix: 2.001 between distinct members of the
/// structured cluster, 0.001 for every other off-diagonal pair, 0 on the diagonal.
pub fn build_sim_q(p: usize) -> Result<DMatrix<f64>> {
    if p < DEPENDENT_MIN_P {
        return Err(Error::input(format!("simulation Q needs p >= {DEPENDENT_MIN_P}, got {p}")));
    }
    let mut q = DMatrix::from_element(p, p, 0.001);
    let cluster = q_cluster();
    for &i in &cluster {
        for &j in &cluster {
            q[(i, j)] = 2.001;
        }
    }
    q.fill_diagonal(0.0);
    Ok(q)
}

#[derive(Clone, Debug)]
pub struct SimulatedTruth {
    pub beta_true: Vec<f64>,
    pub support: Vec<usize>,
    pub beta0_true: f64,
    pub sigma_true: f64,
    pub y_true: DVector<f64>,
    pub missingness: InjectedMissingness,
    pub train: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct SimulatedData {
    pub spec: ScenarioSpec,
    pub covariates: Covariates,
    pub truth: SimulatedTruth,
}

/// Generates one complete dataset from the scenario's seed.
pub fn simulate(spec: &ScenarioSpec) -> Result<SimulatedData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let covariates = generate_covariates(spec, &mut rng)?;
    let (beta_true, support) = assign_coefficients(spec)?;
    let (y_true, sigma_true) = generate_outcome(&covariates.x_log, &beta_true, spec, &mut rng)?;
    let missingness = inject_missingness(&y_true, spec, &mut rng)?;
    let train = train_test_split(&missingness.observed, spec.train_fraction, &mut rng);
    Ok(SimulatedData {
        spec: spec.clone(),
        covariates,
        truth: SimulatedTruth {
            beta_true,
            support,
            beta0_true: spec.beta0,
            sigma_true,
            y_true,
            missingness,
            train,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(design: Design) -> ScenarioSpec {
        ScenarioSpec {
            n: 300,
            p: if design == Design::Dependent { 1000 } else { 50 },
            design,
            ..ScenarioSpec::independent(10.0, 0.4, 2.0 / 3.0, 9)
        }
    }

    #[test]
    fn rows_are_compositions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cov = generate_covariates(&small(Design::Independent), &mut rng).unwrap();
        for row in cov.u.row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn independent_columns_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cov = generate_covariates(&small(Design::Independent), &mut rng).unwrap();
        let o = &cov.o;
        let corr = |a: usize, b: usize| {
            let (ca, cb) = (o.column(a), o.column(b));
            let (ma, mb) = (ca.mean(), cb.mean());
            let sab: f64 = ca.iter().zip(cb.iter()).map(|(x, y)| (x - ma) * (y - mb)).sum();
            let saa: f64 = ca.iter().map(|x| (x - ma).powi(2)).sum();
            let sbb: f64 = cb.iter().map(|y| (y - mb).powi(2)).sum();
            sab / (saa * sbb).sqrt()
        };
        for (a, b) in [(0, 1), (3, 9), (10, 40), (5, 6)] {
            assert!(corr(a, b).abs() <= 0.1 + 0.08, "corr({a},{b})={}", corr(a, b));
        }
        let means: Vec<f64> = (0..6).map(|j| o.column(j).mean()).collect();
        assert!((means[0] - 25f64.ln()).abs() < 0.2);
        assert!(means[5].abs() < 0.2);
    }

    #[test]
    fn coefficients_match_the_design() {
        let (beta, support) = assign_coefficients(&small(Design::Independent)).unwrap();
        assert_eq!(support, vec![0, 1, 2, 5, 6, 7]);
        assert_eq!(&beta[..8], &[1.0, -0.8, 0.6, 0.0, 0.0, -1.5, -0.5, 1.2]);
        assert!(beta.iter().sum::<f64>().abs() < 1e-12);
        assert!(beta[8..].iter().all(|&b| b == 0.0));

        let (beta, support) = assign_coefficients(&small(Design::Dependent)).unwrap();
        assert_eq!(support.len(), 24);
        assert_eq!(beta[179], 0.88);
        assert_eq!(beta[399], -0.85);
        assert_eq!(beta[579], 1.76);
        assert_eq!(beta[799], -0.16);
        assert_eq!(support.iter().filter(|&&j| beta[j] != 0.0).count(), 24);
    }

    #[test]
    fn sigma_from_snr() {
        let (beta, _) = assign_coefficients(&small(Design::Independent)).unwrap();
        assert!((noise_sd(&beta, 10.0) - 5.6 / 6.0 / 10.0).abs() < 1e-15);
    }

    #[test]
    fn noiseless_limit() {
        let spec = ScenarioSpec {
            snr: 1e300,
            ..small(Design::Independent)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cov = generate_covariates(&spec, &mut rng).unwrap();
        let (beta, _) = assign_coefficients(&spec).unwrap();
        let (y, sigma) = generate_outcome(&cov.x_log, &beta, &spec, &mut rng).unwrap();
        assert!(sigma < 1e-299);
        let exact = &cov.x_log * DVector::from_column_slice(&beta);
        assert!((y - exact).abs().max() < 1e-12);
    }

    #[test]
    fn missingness_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = DVector::from_fn(300, |_, _| rng.sample::<f64, _>(StandardNormal));

        let none = ScenarioSpec { missing_rate: 0.0, ..small(Design::Independent) };
        let m = inject_missingness(&y, &none, &mut rng).unwrap();
        assert!(m.observed.iter().all(|&o| o));
        assert_eq!(m.xi, y.min());

        let all_mnar = ScenarioSpec { missing_rate: 0.4, mnar_fraction: 1.0, ..small(Design::Independent) };
        let m = inject_missingness(&y, &all_mnar, &mut rng).unwrap();
        assert_eq!(m.n_missing(), 120);
        let mut sorted: Vec<f64> = y.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        for i in 0..300 {
            assert_eq!(!m.observed[i], y[i] < sorted[120]);
            if !m.observed[i] {
                assert!(y[i] < m.xi);
            }
        }

        let mixed = ScenarioSpec { missing_rate: 0.3, mnar_fraction: 1.0 / 3.0, ..small(Design::Independent) };
        let m = inject_missingness(&y, &mixed, &mut rng).unwrap();
        let n_mnar = m.mnar.iter().filter(|&&v| v).count();
        assert_eq!(n_mnar, 30);
        assert_eq!(m.n_missing() - n_mnar, 60);
        let min_obs = (0..300).filter(|&i| m.observed[i]).map(|i| y[i]).fold(f64::INFINITY, f64::min);
        assert_eq!(m.xi, min_obs);
        for i in 0..300 {
            if m.mnar[i] {
                assert!(y[i] < m.xi);
            } else if !m.observed[i] {
                assert!(y[i] > m.xi);
            }
        }
    }

    #[test]
    fn alternative_mechanisms_keep_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = DVector::from_fn(300, |_, _| rng.sample::<f64, _>(StandardNormal));
        for mech in [MnarMechanism::Stochastic, MnarMechanism::PerSampleLod] {
            let spec = ScenarioSpec { mnar_mechanism: mech, ..small(Design::Independent) };
            let m = inject_missingness(&y, &spec, &mut rng).unwrap();
            assert_eq!(m.n_missing(), 120);
            assert_eq!(m.mnar.iter().filter(|&&v| v).count(), 80);
        }
    }

    #[test]
    fn infeasible_missingness_rejected() {
        let y = DVector::from_vec(vec![1.0, 2.0]);
        let spec = ScenarioSpec { n: 2, missing_rate: 0.9, mnar_fraction: 0.0, ..small(Design::Independent) };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(inject_missingness(&y, &spec, &mut rng).is_err());
    }

    #[test]
    fn sim_q_structure() {
        let q = build_sim_q(1000).unwrap();
        // 1-based (180, 200) are both in the first signal block.
        assert_eq!(q[(179, 199)], 2.001);
        assert_eq!(q[(0, 0)], 0.0);
        assert_eq!(q[(0, 1)], 0.001);
        assert_eq!(q[(44, 944)], 2.001);
        assert_eq!(q[(179, 179)], 0.0);
        assert_eq!(q, q.transpose());
        assert!(build_sim_q(100).is_err());
    }

    #[test]
    fn split_is_stratified() {
        let data = simulate(&small(Design::Independent)).unwrap();
        let obs = &data.truth.missingness.observed;
        let train = &data.truth.train;
        let count = |o: bool, t: bool| (0..obs.len()).filter(|&i| obs[i] == o && train[i] == t).count();
        assert_eq!(count(true, true), 126);
        assert_eq!(count(true, false), 54);
        assert_eq!(count(false, true), 84);
        assert_eq!(count(false, false), 36);
    }

    #[test]
    fn simulation_is_seed_deterministic() {
        let a = simulate(&small(Design::Independent)).unwrap();
        let b = simulate(&small(Design::Independent)).unwrap();
        assert_eq!(a.covariates.u, b.covariates.u);
        assert_eq!(a.truth.y_true, b.truth.y_true);
        assert_eq!(a.truth.missingness, b.truth.missingness);
        assert_eq!(a.truth.train, b.truth.train);
        let c = simulate(&small(Design::Independent).replicate(1)).unwrap();
        assert_ne!(a.truth.y_true, c.truth.y_true);
    }
}
