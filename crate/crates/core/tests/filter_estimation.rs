//! Filter and likelihood-maximisation properties against simulated data.

mod common;

use common::{kalman, linear_gaussian_prices, LinearGaussian, Normals};
use pairs_core::estimation::{fit_mle, get_params, ols_init, FitConfig, FreeMask};
use pairs_core::filter::{init_state, log_likelihood, run_filter, step, FilterConfig, InitialSpread};
use pairs_core::model::{simulate_spread, BenchmarkModel, DiffusionSpec, DriftSpec, ModelSpec, NoiseSpec};
use proptest::prelude::*;

fn linear_model(lg: &LinearGaussian, gamma: f64) -> ModelSpec {
    ModelSpec::new(
        DriftSpec::linear(lg.a, lg.b),
        DiffusionSpec::constant(lg.sigma),
        NoiseSpec::standard_normal(),
        gamma,
        lg.r,
    )
    .unwrap()
}

/// Prices whose spread follows `model` exactly, with `P_B` a random walk.
fn prices_for(model: &ModelSpec, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let x = simulate_spread(model, n, None, seed).unwrap().values;
    let mut z = Normals::new(seed ^ 0x5eed);
    let mut b = 30.0;
    let mut pa = Vec::with_capacity(n);
    let mut pb = Vec::with_capacity(n);
    for xt in &x {
        b += 0.3 * z.next();
        pb.push(b);
        pa.push(model.hedge_ratio * b + xt + model.obs_noise_var.sqrt() * z.next());
    }
    (pa, pb, x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn posterior_stays_a_proper_mixture(
        slope in -0.95f64..0.95,
        sigma in 0.005f64..0.2,
        r in 1e-4f64..0.1,
        heavy in any::<bool>(),
        seed in 0u64..1000,
    ) {
        let noise = if heavy { NoiseSpec::StudentT { dof: 3.0 } } else { NoiseSpec::standard_normal() };
        let model = ModelSpec::new(DriftSpec::linear(0.0, slope), DiffusionSpec::arch1(sigma * sigma, 0.1), noise, 1.2, r).unwrap();
        let config = FilterConfig::with_points(32);
        let noise_mix = config.noise_mixture(&model).unwrap();
        let (pa, pb, _) = prices_for(&model, 40, seed);
        let mut state = init_state(pa[0] - 1.2 * pb[0], 0.05).unwrap();
        for t in 1..pa.len() {
            let (next, inc) = step(&state, (pa[t], pb[t]), &model, &noise_mix, &config).unwrap();
            let w: f64 = next.posterior.components().iter().map(|c| c.weight).sum();
            prop_assert!((w - 1.0).abs() < 1e-12, "weights sum to {}", w);
            prop_assert!(next.posterior.components().iter().all(|c| c.var > 0.0));
            prop_assert!(next.posterior.len() <= config.max_components);
            prop_assert!(inc.is_finite());
            state = next;
        }
    }

    #[test]
    fn more_observation_noise_never_sharpens_the_posterior(r in 1e-4f64..0.05, bump in 1.01f64..10.0, seed in 0u64..1000) {
        let lg = LinearGaussian { a: 0.0, b: 0.9, sigma: 0.03, r };
        let (pa, pb, _) = linear_gaussian_prices(&lg, 1.5, 60, seed);
        let init = InitialSpread { mean: 0.0, var: 0.01 };
        let config = FilterConfig::with_points(64);
        let lo = run_filter(&linear_model(&lg, 1.5), &pa, &pb, init, &config).unwrap();
        let hi_lg = LinearGaussian { r: r * bump, ..lg };
        let hi = run_filter(&linear_model(&hi_lg, 1.5), &pa, &pb, init, &config).unwrap();
        for (a, b) in lo.filtered_var.iter().zip(&hi.filtered_var) {
            prop_assert!(b >= &(a * (1.0 - 1e-12)));
        }
    }
}

#[test]
fn likelihood_is_bitwise_reproducible() {
    let model = BenchmarkModel::Arch.spec();
    let model = ModelSpec::new(model.drift.clone(), model.diffusion.clone(), model.noise, 1.4, 1e-4).unwrap();
    let (pa, pb, _) = prices_for(&model, 300, 9);
    let init = InitialSpread { mean: pa[0] - 1.4 * pb[0], var: 1e-3 };
    let config = FilterConfig::default();
    let a = log_likelihood(&model, &pa, &pb, init, &config).unwrap();
    let b = log_likelihood(&model, &pa, &pb, init, &config).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn filtered_error_matches_reported_variance() {
    // in the linear-Gaussian case the posterior variance is the filter's MSE
    let lg = LinearGaussian { a: 0.0, b: 0.95, sigma: 0.03, r: 0.01 };
    let (pa, pb, x) = linear_gaussian_prices(&lg, 2.0, 5000, 21);
    let out = run_filter(&linear_model(&lg, 2.0), &pa, &pb, InitialSpread { mean: x[0], var: 0.01 }, &FilterConfig::default()).unwrap();
    let n = x.len() - 100;
    let mse = (100..x.len()).map(|t| (out.filtered_mean[t] - x[t]).powi(2)).sum::<f64>() / n as f64;
    let p = out.filtered_var[100..].iter().sum::<f64>() / n as f64;
    let exact = kalman(&lg, &pa.iter().zip(&pb).map(|(a, b)| a - 2.0 * b).collect::<Vec<_>>(), x[0], 0.01);
    assert!((p - exact.var[200]).abs() / exact.var[200] < 1e-9);
    // squared errors have relative sd ≈ √(2/n_eff); 10% is several of them
    assert!((mse / p - 1.0).abs() < 0.1, "mse {mse} vs variance {p}");
}

#[test]
fn true_parameters_beat_misspecified_ones() {
    let truth = BenchmarkModel::Arch.spec();
    let truth = ModelSpec::new(truth.drift.clone(), truth.diffusion.clone(), truth.noise, 1.4, 1e-5).unwrap();
    let (pa, pb, x) = prices_for(&truth, 1500, 4);
    let init = InitialSpread { mean: x[0], var: 1e-4 };
    let config = FilterConfig::default();
    let ll = |m: &ModelSpec| log_likelihood(m, &pa, &pb, init, &config).unwrap();
    let base = ll(&truth);
    let wrong_slope = ModelSpec { drift: DriftSpec::linear(0.0, 0.6), ..truth.clone() };
    let wrong_hedge = ModelSpec { hedge_ratio: 1.41, ..truth.clone() };
    let homoscedastic = ModelSpec { diffusion: DiffusionSpec::constant(0.0049), ..truth.clone() };
    for (name, m) in [("slope", wrong_slope), ("hedge", wrong_hedge), ("constant diffusion", homoscedastic)] {
        assert!(base > ll(&m), "{name}: {base} vs {}", ll(&m));
    }
}

#[test]
fn ols_start_recovers_the_hedge_ratio() {
    let mut z = Normals::new(77);
    let mut b = 40.0;
    let (mut pa, mut pb) = (Vec::new(), Vec::new());
    for _ in 0..2000 {
        b += 0.4 * z.next();
        pb.push(b);
        pa.push(1.98 * b + 0.1 * z.next());
    }
    let ols = ols_init(&pa, &pb).unwrap();
    assert!((ols.hedge_ratio - 1.98).abs() < 0.05, "{}", ols.hedge_ratio);
    assert!(!ols.low_sample);
}

#[test]
fn fits_are_reproducible_bounded_and_never_worse_than_the_start() {
    let truth = LinearGaussian { a: 0.0, b: 0.9572, sigma: 0.029, r: 0.012 };
    let (pa, pb, _) = linear_gaussian_prices(&truth, 1.98, 600, 8);
    let template = linear_model(&LinearGaussian { a: 0.0, b: 0.8, sigma: 0.05, r: 0.02 }, 1.0);
    let mask = FreeMask::default_for(&template);
    let config = FitConfig { restarts: 2, max_iterations: 200, seed: 3, ..FitConfig::default() };
    let fit = fit_mle(&template, &mask, &pa, &pb, &config).unwrap();
    assert!(fit.loglik >= fit.initial_loglik);
    for (i, v) in get_params(&fit.model).iter().enumerate() {
        if mask.free[i] {
            assert!(mask.bounds[i].contains(*v), "{} = {v}", fit.parameter_names[i]);
        }
    }
    let again = fit_mle(&template, &mask, &pa, &pb, &config).unwrap();
    assert_eq!(fit.to_json().unwrap(), again.to_json().unwrap());
}
