//! Joint-distribution and invariant checks on the full sampler.

use bsrmm::io::{read_table, write_matrix};
use bsrmm::model::{Dataset, Hyperparameters, MissingnessState, RegressionState, SelectionState};
use bsrmm::sampler::{
    run_chain, update_gamma, update_missingness, update_regression, update_theta, AcceptCounts, ChainState,
    SamplerConfig,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};

/// Mean and batch-means standard error.
fn mean_se(v: &[f64], batches: usize) -> (f64, f64) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let size = v.len() / batches;
    let bm: Vec<f64> = (0..batches)
        .map(|b| v[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let var = bm.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (batches as f64 - 1.0);
    (mean, (var / batches as f64).sqrt())
}

struct Params {
    gamma: Vec<bool>,
    beta: DVector<f64>,
    beta0: f64,
    sigma2: f64,
    theta: f64,
}

/// Draws every parameter from its prior (no Q, so γ is independent Bernoulli).
fn draw_prior(hp: &Hyperparameters, p: usize, rng: &mut ChaCha8Rng) -> Params {
    let sigma2 = 1.0 / Gamma::new(hp.nu / 2.0, 2.0 / (hp.nu * hp.omega)).unwrap().sample(rng);
    let incl = 1.0 / (1.0 + (-hp.ising_a[0]).exp());
    let gamma: Vec<bool> = (0..p).map(|_| rng.random::<f64>() < incl).collect();
    let k = gamma.iter().filter(|g| **g).count();
    // Cov = σ²τ²(I + c²11ᵀ)⁻¹: draw z ~ N(0, I) and project the mean
    // direction with factor 1/√(1+c²k).
    let z = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let beta = if k == 0 {
        z
    } else {
        let zbar = z.mean();
        let shrink = 1.0 / (1.0 + hp.c * hp.c * k as f64).sqrt();
        z.map(|v| v - zbar + shrink * zbar) * (sigma2 * hp.tau2).sqrt()
    };
    Params {
        gamma,
        beta,
        beta0: sigma2.sqrt() * rng.sample::<f64, _>(StandardNormal),
        sigma2,
        theta: Beta::new(1.0, 1.0).unwrap().sample(rng),
    }
}

/// Complete outcome, observation pattern and MNAR flags given parameters.
fn draw_data(x: &DMatrix<f64>, par: &Params, xi: f64, rng: &mut ChaCha8Rng) -> (DVector<f64>, Vec<bool>, Vec<bool>) {
    let n = x.nrows();
    let active: Vec<usize> = (0..par.gamma.len()).filter(|&j| par.gamma[j]).collect();
    let mut y = DVector::zeros(n);
    let mut observed = vec![true; n];
    let mut z = vec![false; n];
    for i in 0..n {
        let mu = par.beta0 + active.iter().zip(par.beta.iter()).map(|(&j, b)| x[(i, j)] * b).sum::<f64>();
        y[i] = mu + par.sigma2.sqrt() * rng.sample::<f64, _>(StandardNormal);
        if y[i] <= xi {
            observed[i] = false;
            z[i] = true;
        } else if rng.random::<f64>() < par.theta {
            observed[i] = false;
        }
    }
    (y, observed, z)
}

#[test]
fn geweke_joint_consistency() {
    let (n, p) = (12, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let xi = -1.0;
    let mut hp = Hyperparameters::new(p);
    hp.nu = 10.0;
    hp.c = 1.0;
    hp.ising_a = vec![-0.5; p];

    let rounds = 10_000;
    let mut prior_draws = [Vec::new(), Vec::new(), Vec::new()];
    for _ in 0..rounds {
        let par = draw_prior(&hp, p, &mut rng);
        prior_draws[0].push(par.beta0);
        prior_draws[1].push(par.sigma2);
        prior_draws[2].push(par.theta);
    }

    let mut par = draw_prior(&hp, p, &mut rng);
    let mut chain_draws = [Vec::new(), Vec::new(), Vec::new()];
    let mut counts = AcceptCounts::default();
    for _ in 0..rounds {
        let (y, observed, z) = draw_data(&x, &par, xi, &mut rng);
        let mut y_obs = y.clone();
        for i in 0..n {
            if !observed[i] {
                y_obs[i] = f64::NAN;
            }
        }
        let ds = Dataset {
            x: x.clone(),
            y_obs,
            observed,
            xi,
            sample_ids: (0..n).map(|i| i.to_string()).collect(),
            feature_ids: (0..p).map(|j| j.to_string()).collect(),
        };
        let active: Vec<usize> = (0..p).filter(|&j| par.gamma[j]).collect();
        let selection = SelectionState::from_active(p, &active).unwrap();
        let missingness = MissingnessState {
            y_latent: y,
            z,
            theta: par.theta,
        };
        let mut state = ChainState::with_response(&ds, &hp, missingness, selection).unwrap();
        state.regression = RegressionState {
            beta0: par.beta0,
            beta_active: par.beta.clone(),
            sigma2: par.sigma2,
        };

        update_gamma(&mut state, &hp, p, &mut rng, &mut counts).unwrap();
        update_regression(&mut state, &ds, &hp, &mut rng).unwrap();
        update_missingness(&mut state, &ds, &mut rng).unwrap();
        update_theta(&mut state, &ds, &mut rng).unwrap();

        par = Params {
            gamma: state.selection.gamma().to_vec(),
            beta: state.regression.beta_active.clone(),
            beta0: state.regression.beta0,
            sigma2: state.regression.sigma2,
            theta: state.missingness.theta,
        };
        chain_draws[0].push(par.beta0);
        chain_draws[1].push(par.sigma2);
        chain_draws[2].push(par.theta);
    }

    for (k, name) in ["beta0", "sigma2", "theta"].iter().enumerate() {
        for power in [1, 2] {
            let f = |v: &Vec<f64>| v.iter().map(|x| x.powi(power)).collect::<Vec<_>>();
            let (m_prior, se_prior) = mean_se(&f(&prior_draws[k]), 50);
            let (m_chain, se_chain) = mean_se(&f(&chain_draws[k]), 50);
            let z = (m_chain - m_prior) / (se_prior.powi(2) + se_chain.powi(2)).sqrt();
            println!("geweke {name}^{power}: prior {m_prior:.4} chain {m_chain:.4} z {z:.2}");
            assert!(z.abs() < 4.0, "{name}^{power}: z = {z}");
        }
    }
}

#[test]
fn zero_sum_envelope_holds_for_every_draw() {
    let (n, p) = (60, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y: Vec<Option<f64>> = (0..n)
        .map(|i| {
            let v = x[(i, 0)] - x[(i, 1)] + 0.5 * x[(i, 2)] - 0.5 * x[(i, 3)] + 0.2 * rng.sample::<f64, _>(StandardNormal);
            (i % 5 != 0).then_some(v)
        })
        .collect();
    let ds = Dataset::new(x, &y, None).unwrap();
    let hp = Hyperparameters::new(p);
    let cfg = SamplerConfig {
        n_iterations: 600,
        burn_in: 100,
        store_traces: true,
        seed: 4,
        ..Default::default()
    };
    let s = run_chain(&ds, &hp, &cfg).unwrap();
    let draws = s.beta_trace.as_ref().unwrap();
    let mut checked = 0;
    for row in &s.trace[cfg.burn_in..] {
        let it = row.iteration;
        let betas: Vec<f64> = draws.iter().filter(|d| d.iteration == it).map(|d| d.value).collect();
        assert_eq!(betas.len(), row.p_gamma);
        if betas.is_empty() {
            continue;
        }
        let k = betas.len() as f64;
        let bound = 5.0 * (k / (1.0 + hp.c * hp.c * k)).sqrt() * row.sigma2.sqrt() * hp.tau2.sqrt();
        let sum: f64 = betas.iter().sum();
        assert!(sum.abs() <= bound, "iteration {it}: |Σβ| = {} > {bound}", sum.abs());
        checked += 1;
    }
    assert!(checked > 400);
}

#[test]
fn ppi_and_selection_are_consistent() {
    let (n, p) = (50, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y: Vec<Option<f64>> = (0..n).map(|i| Some(x[(i, 4)] - x[(i, 7)] + 0.3 * rng.sample::<f64, _>(StandardNormal))).collect();
    let ds = Dataset::new(x, &y, None).unwrap();
    let mut hp = Hyperparameters::new(p);
    hp.ising_a = vec![-2.0; p];
    let s = run_chain(&ds, &hp, &SamplerConfig { n_iterations: 400, burn_in: 100, seed: 2, ..Default::default() }).unwrap();
    assert!(s.ppi.iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(s.selected.len(), s.ppi.iter().filter(|v| **v > 0.5).count());
    assert!(s.selected.contains(&4) && s.selected.contains(&7));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_matrix_round_trip(
        rows in 1usize..6,
        cols in 1usize..6,
        seed in any::<u64>(),
        scale_exp in -300i32..300,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(rows, cols, |_, _| {
            let v: f64 = rng.sample(StandardNormal);
            v * 10f64.powi(scale_exp)
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let row_ids: Vec<String> = (0..rows).map(|i| format!("r{i}")).collect();
        let col_ids: Vec<String> = (0..cols).map(|j| format!("c{j}")).collect();
        write_matrix(&path, "id", &row_ids, &col_ids, &m).unwrap();
        let back = read_table(&path).unwrap().dense(&path).unwrap();
        prop_assert_eq!(back, m);
    }
}
