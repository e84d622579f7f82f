//! Random variates and normal-distribution utilities used by the sampler.
//!
//! Every sampler takes an explicit `&mut R: Rng` so that a chain owns its
//! stream and identical seeds reproduce identical draws.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, Exp1, Gamma, StandardNormal};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Natural log of the standard normal CDF, accurate deep into the lower tail.
pub fn log_normal_cdf(x: f64) -> f64 {
    if x > 0.0 {
        // Φ(x) = 1 - Φ(-x), and Φ(-x) < 0.5 here.
        (-normal_cdf(-x)).ln_1p()
    } else if x > -30.0 {
        normal_cdf(x).ln()
    } else {
        let t = -x;
        -0.5 * t * t - LN_SQRT_2PI + mills_ratio(t).ln()
    }
}

/// Log density of the standard normal.
pub fn log_normal_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Mills ratio Φ(-t)/φ(t) for large positive `t`, by backward evaluation of
/// the Laplace continued fraction.
fn mills_ratio(t: f64) -> f64 {
    let mut acc = t;
    for k in (1..=80).rev() {
        acc = t + k as f64 / acc;
    }
    1.0 / acc
}

/// A normal distribution restricted to the open interval `(lower, upper)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncatedNormalSpec {
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

impl TruncatedNormalSpec {
    pub fn new(mean: f64, sd: f64, lower: f64, upper: f64) -> Result<Self> {
        let spec = TruncatedNormalSpec {
            mean,
            sd,
            lower,
            upper,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Normal(mean, sd²) restricted to `(lower, +∞)`.
    pub fn above(mean: f64, sd: f64, lower: f64) -> Result<Self> {
        Self::new(mean, sd, lower, f64::INFINITY)
    }

    /// Normal(mean, sd²) restricted to `(-∞, upper)`.
    pub fn below(mean: f64, sd: f64, upper: f64) -> Result<Self> {
        Self::new(mean, sd, f64::NEG_INFINITY, upper)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sd > 0.0) || !self.sd.is_finite() {
            return Err(Error::input(format!(
                "truncated normal needs a positive finite sd, got {}",
                self.sd
            )));
        }
        if !self.mean.is_finite() {
            return Err(Error::input(format!(
                "truncated normal needs a finite mean, got {}",
                self.mean
            )));
        }
        if self.lower.is_nan() || self.upper.is_nan() || !(self.lower < self.upper) {
            return Err(Error::input(format!(
                "empty truncation interval ({}, {})",
                self.lower, self.upper
            )));
        }
        Ok(())
    }

    /// CDF of the truncated distribution.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lower {
            return 0.0;
        }
        if x >= self.upper {
            return 1.0;
        }
        let a = (self.lower - self.mean) / self.sd;
        let b = (self.upper - self.mean) / self.sd;
        let z = (x - self.mean) / self.sd;
        if a > 0.0 {
            // Upper-tail form avoids cancellation when the whole interval is in the right tail.
            let (qa, qb, qz) = (normal_cdf(-a), normal_cdf(-b), normal_cdf(-z));
            (qa - qz) / (qa - qb)
        } else {
            let (pa, pb, pz) = (normal_cdf(a), normal_cdf(b), normal_cdf(z));
            (pz - pa) / (pb - pa)
        }
    }
}

/// Draws from a truncated normal. The result lies strictly inside
/// `(spec.lower, spec.upper)`.
pub fn sample_truncated_normal<R: Rng + ?Sized>(spec: &TruncatedNormalSpec, rng: &mut R) -> Result<f64> {
    spec.validate()?;
    let a = (spec.lower - spec.mean) / spec.sd;
    let b = (spec.upper - spec.mean) / spec.sd;
    loop {
        let z = standard_truncated(a, b, rng);
        let x = spec.mean + spec.sd * z;
        if x > spec.lower && x < spec.upper {
            return Ok(x);
        }
    }
}

/// Standard normal restricted to `(a, b)`.
fn standard_truncated<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if a == f64::NEG_INFINITY && b == f64::INFINITY {
        return rng.sample(StandardNormal);
    }
    if b <= 0.0 {
        return -standard_truncated(-b, -a, rng);
    }
    if a >= 0.0 {
        return right_tail(a, b, rng);
    }
    // a < 0 < b: the interval contains the mode.
    if b - a >= 2.5 {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z > a && z < b {
                return z;
            }
        }
    }
    uniform_rejection(a, b, 0.0, rng)
}

/// Standard normal restricted to `(a, b)` with `0 <= a < b <= ∞`.
fn right_tail<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    if (b - a) * rate < 1.0 {
        return uniform_rejection(a, b, a, rng);
    }
    if a < 0.3 && b == f64::INFINITY {
        // Plain rejection accepts with probability above 0.38 here.
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z > a {
                return z;
            }
        }
    }
    // Exponential proposal shifted to `a` (Robert, 1995).
    loop {
        let e: f64 = rng.sample(Exp1);
        let z = a + e / rate;
        if z <= a || z >= b {
            continue;
        }
        let u: f64 = rng.random();
        let d = z - rate;
        if u <= (-0.5 * d * d).exp() {
            return z;
        }
    }
}

/// Uniform proposal on `(a, b)`; `mode` is the point of the interval closest to 0.
fn uniform_rejection<R: Rng + ?Sized>(a: f64, b: f64, mode: f64, rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        let z = a + (b - a) * u;
        if z <= a || z >= b {
            continue;
        }
        let accept = (0.5 * (mode * mode - z * z)).exp();
        let v: f64 = rng.random();
        if v <= accept {
            return z;
        }
    }
}

/// Draws σ² ~ Inverse-Gamma(shape, rate), i.e. the reciprocal of a
/// Gamma(shape, rate) variate.
pub fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0 && shape.is_finite()) || !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::input(format!(
            "inverse gamma needs positive finite parameters, got shape={shape}, rate={rate}"
        )));
    }
    let gamma = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::input(e.to_string()))?;
    Ok(1.0 / gamma.sample(rng))
}

pub fn sample_beta<R: Rng + ?Sized>(alpha: f64, beta: f64, rng: &mut R) -> Result<f64> {
    let dist = Beta::new(alpha, beta).map_err(|e| Error::input(format!("beta({alpha}, {beta}): {e}")))?;
    Ok(dist.sample(rng))
}

/// Draws from N(mean, σ²·A⁻¹) where `chol_lower` is the lower Cholesky
/// factor L of the precision A = L·Lᵀ. Works by back-substitution with Lᵀ.
pub fn sample_mvn_from_precision_factor<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    chol_lower: &DMatrix<f64>,
    sigma2: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let k = mean.len();
    if chol_lower.nrows() != k || chol_lower.ncols() != k {
        return Err(Error::input(format!(
            "precision factor is {}x{}, mean has length {k}",
            chol_lower.nrows(),
            chol_lower.ncols()
        )));
    }
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::numerical(format!("non-positive variance {sigma2}")));
    }
    if (0..k).any(|i| {
        let d = chol_lower[(i, i)];
        !(d.is_finite() && d != 0.0)
    }) {
        return Err(Error::numerical("singular or non-finite precision factor"));
    }
    let z = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut x = chol_lower
        .tr_solve_lower_triangular(&z)
        .ok_or_else(|| Error::numerical("triangular solve failed"))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite draw from precision factor"));
    }
    x *= sigma2.sqrt();
    x += mean;
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mean_sd(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v.sqrt())
    }

    #[test]
    fn cdf_reference_points() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!(normal_cdf(8.0) >= 1.0 - 1e-14);
        assert!((normal_cdf(-1.959963985) - 0.025).abs() < 1e-9);
        // Reference values from 30-digit arithmetic.
        let reference = [
            (-1.0, 0.158_655_253_931_457_05),
            (-5.0, 2.866_515_718_791_939e-7),
            (-8.0, 6.220_960_574_271_784e-16),
            (3.0, 0.998_650_101_968_369_9),
        ];
        for (x, want) in reference {
            let got = normal_cdf(x);
            assert!((got - want).abs() <= 1e-13 * want, "Φ({x}) = {got:e}, want {want:e}");
        }
        assert!((log_normal_cdf(-37.0) - 5.725_571_222_524_577e-300f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn cdf_symmetry_and_monotonicity() {
        let mut prev = 0.0;
        for i in -8000..=8000 {
            let x = i as f64 * 1e-3;
            let p = normal_cdf(x);
            assert!(p >= prev, "not monotone at {x}");
            assert!((p + normal_cdf(-x) - 1.0).abs() <= 1e-12);
            prev = p;
        }
    }

    #[test]
    fn log_cdf_is_continuous_across_branches() {
        for &x in &[-29.999, -30.0, -30.001] {
            let direct = normal_cdf(x).ln();
            assert!((log_normal_cdf(x) - direct).abs() < 1e-10, "x={x}");
        }
        assert!((log_normal_cdf(3.0) - normal_cdf(3.0).ln()).abs() < 1e-15);
        assert!(log_normal_cdf(-60.0).is_finite());
        // Asymptotically log Φ(-t) ≈ -t²/2 - ln t - ln√(2π).
        let t: f64 = 200.0;
        let approx = -0.5 * t * t - t.ln() - LN_SQRT_2PI;
        assert!((log_normal_cdf(-t) - approx).abs() < 1e-4);
    }

    #[test]
    fn untruncated_draws_are_standard_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = TruncatedNormalSpec::new(0.0, 1.0, f64::NEG_INFINITY, f64::INFINITY).unwrap();
        let xs: Vec<f64> = (0..100_000)
            .map(|_| sample_truncated_normal(&spec, &mut rng).unwrap())
            .collect();
        let (m, _) = mean_sd(&xs);
        assert!(m.abs() < 3.0 / (1e5f64).sqrt());
    }

    #[test]
    fn deep_right_tail_mean() {
        // φ(5)/(1-Φ(5)) computed with the Mills ratio: 5.186_503_72...
        let oracle = (log_normal_pdf(5.0) - log_normal_cdf(-5.0)).exp();
        assert!((oracle - 5.186_503_7).abs() < 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = TruncatedNormalSpec::above(0.0, 1.0, 5.0).unwrap();
        let xs: Vec<f64> = (0..100_000)
            .map(|_| sample_truncated_normal(&spec, &mut rng).unwrap())
            .collect();
        assert!(xs.iter().all(|&x| x > 5.0));
        let (m, sd) = mean_sd(&xs);
        assert!((m - oracle).abs() < 3.0 * sd / (xs.len() as f64).sqrt());
    }

    #[test]
    fn half_normal_below_mean() {
        let (mu, s) = (1.3, 0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = TruncatedNormalSpec::below(mu, s, mu).unwrap();
        let xs: Vec<f64> = (0..100_000)
            .map(|_| sample_truncated_normal(&spec, &mut rng).unwrap())
            .collect();
        let oracle = mu - s * (2.0 / std::f64::consts::PI).sqrt();
        let (m, sd) = mean_sd(&xs);
        assert!(xs.iter().all(|&x| x < mu));
        assert!((m - oracle).abs() < 3.0 * sd / (xs.len() as f64).sqrt());
    }

    #[test]
    fn two_sided_intervals_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for &(lo, hi) in &[(-0.1, 0.2), (-3.0, 4.0), (2.0, 2.05), (6.0, 9.0), (-9.0, -7.5), (0.0, 0.5)] {
            let spec = TruncatedNormalSpec::new(0.0, 1.0, lo, hi).unwrap();
            for _ in 0..10_000 {
                let x = sample_truncated_normal(&spec, &mut rng).unwrap();
                assert!(x > lo && x < hi);
            }
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(TruncatedNormalSpec::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(TruncatedNormalSpec::new(0.0, -1.0, 0.0, 1.0).is_err());
        assert!(TruncatedNormalSpec::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(TruncatedNormalSpec::new(0.0, 1.0, 2.0, 1.0).is_err());
        let bad = TruncatedNormalSpec {
            mean: 0.0,
            sd: 1.0,
            lower: 3.0,
            upper: -3.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_truncated_normal(&bad, &mut rng), Err(Error::Input(_))));
    }

    #[test]
    fn inverse_gamma_mean_and_domain() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| sample_inverse_gamma(3.0, 2.0, &mut rng).unwrap())
            .collect();
        let (m, sd) = mean_sd(&xs);
        assert!((m - 1.0).abs() < 3.0 * sd / (xs.len() as f64).sqrt());
        assert!(sample_inverse_gamma(0.0, 1.0, &mut rng).is_err());
        assert!(sample_inverse_gamma(1.0, -1.0, &mut rng).is_err());
    }

    #[test]
    fn samplers_are_seed_deterministic() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = TruncatedNormalSpec::above(0.2, 1.1, 4.0).unwrap();
            (
                sample_inverse_gamma(2.5, 1.5, &mut rng).unwrap(),
                sample_truncated_normal(&spec, &mut rng).unwrap(),
                sample_beta(2.0, 3.0, &mut rng).unwrap(),
            )
        };
        assert_eq!(draw(11), draw(11));
        assert_ne!(draw(11), draw(12));
    }

    #[test]
    fn mvn_scalar_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let l = DMatrix::from_element(1, 1, 2.0);
        let mean = DVector::zeros(1);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| sample_mvn_from_precision_factor(&mean, &l, 1.0, &mut rng).unwrap()[0])
            .collect();
        let (_, sd) = mean_sd(&xs);
        let var = sd * sd;
        // SE of a sample variance is about var·√(2/(n-1)).
        assert!((var - 0.25).abs() < 3.0 * 0.25 * (2.0 / 1e5f64).sqrt());
    }

    #[test]
    fn mvn_rejects_singular_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let l = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.0]);
        let mean = DVector::zeros(2);
        assert!(matches!(
            sample_mvn_from_precision_factor(&mean, &l, 1.0, &mut rng),
            Err(Error::Numerical(_))
        ));
    }

    fn empirical_cov(draws: &[DVector<f64>]) -> DMatrix<f64> {
        let n = draws.len() as f64;
        let k = draws[0].len();
        let mean = draws.iter().fold(DVector::zeros(k), |acc, d| acc + d) / n;
        let mut cov = DMatrix::zeros(k, k);
        for d in draws {
            let c = d - &mean;
            cov += &c * c.transpose();
        }
        cov / (n - 1.0)
    }

    #[test]
    fn mvn_identity_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let l = DMatrix::identity(3, 3);
        let mean = DVector::zeros(3);
        let draws: Vec<_> = (0..100_000)
            .map(|_| sample_mvn_from_precision_factor(&mean, &l, 1.0, &mut rng).unwrap())
            .collect();
        let cov = empirical_cov(&draws);
        let se = 1.0 / (1e5f64).sqrt();
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                let tol = if i == j { 3.0 * (2.0f64).sqrt() * se } else { 3.0 * se };
                assert!((cov[(i, j)] - target).abs() < tol, "cov[{i},{j}]={}", cov[(i, j)]);
            }
        }
    }

    #[test]
    fn mvn_correlated_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let l = a.cholesky().unwrap().l();
        let sigma2 = 1.5;
        let mean = DVector::from_vec(vec![0.3, -0.2]);
        let draws: Vec<_> = (0..100_000)
            .map(|_| sample_mvn_from_precision_factor(&mean, &l, sigma2, &mut rng).unwrap())
            .collect();
        let cov = empirical_cov(&draws);
        // [[2,1],[1,2]]⁻¹ = [[2/3,-1/3],[-1/3,2/3]]
        let target = [[2.0 / 3.0, -1.0 / 3.0], [-1.0 / 3.0, 2.0 / 3.0]];
        for i in 0..2 {
            for j in 0..2 {
                let t = sigma2 * target[i][j];
                // SE of a covariance entry: sqrt((s_ii s_jj + s_ij²)/n).
                let s = sigma2 * target[i][i] * sigma2 * target[j][j] + t * t;
                let se = (s / 1e5).sqrt();
                assert!((cov[(i, j)] - t).abs() < 3.0 * se, "cov[{i},{j}]={} vs {t}", cov[(i, j)]);
            }
        }
    }
}
