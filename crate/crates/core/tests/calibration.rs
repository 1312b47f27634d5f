use std::sync::atomic::{AtomicUsize, Ordering};

use coxfilter::calibration::{
    adapt_proposal_covariance, ess, fit_rmse_model, format_chain, haario_covariance, pmmh_run, rmse_cell, summarize,
    Adaptation, Backend, Method, PmmhConfig, RmseModel, ADAPT_WARMUP,
};
use coxfilter::filters::ObservationSet;
use coxfilter::oracles::likelihood_no_obs;
use coxfilter::rng::StreamKey;
use coxfilter::{CoxModel, Error};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

fn normals(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = StreamKey::new(seed).stream(0, 0);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

#[test]
fn ess_of_white_noise_is_the_length() {
    let x = normals(20_000, 1);
    let e = ess(&x).unwrap();
    assert!((e / 20_000.0 - 1.0).abs() < 0.15, "{e}");
}

#[test]
fn ess_of_ar1_matches_the_integrated_autocorrelation() {
    let rho = 0.9;
    let z = normals(100_000, 2);
    let mut x = Vec::with_capacity(z.len());
    let mut v = 0.0;
    for e in z {
        v = rho * v + (1.0f64 - rho * rho).sqrt() * e;
        x.push(v);
    }
    let want = x.len() as f64 * (1.0 - rho) / (1.0 + rho);
    let got = ess(&x).unwrap();
    assert!((got / want - 1.0).abs() < 0.2, "{got} vs {want}");
}

#[test]
fn ess_of_an_alternating_series_is_not_penalised() {
    let x: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    assert!(ess(&x).unwrap() >= 1000.0);
}

#[test]
fn haario_scaling_of_iid_draws() {
    let z = normals(40_000, 3);
    let draws: Vec<Vec<f64>> = z.chunks(2).map(|c| vec![c[0], 3.0 * c[1]]).collect();
    let cov = haario_covariance(&draws).unwrap();
    let sd = 2.38f64.powi(2) / 2.0;
    assert!((cov[(0, 0)] / sd - 1.0).abs() < 0.05);
    assert!((cov[(1, 1)] / (9.0 * sd) - 1.0).abs() < 0.05);
    assert!(cov[(0, 1)].abs() < 0.05 * 3.0 * sd);
    assert_eq!(cov[(0, 1)], cov[(1, 0)]);
}

#[test]
fn no_adaptation_before_warm_up() {
    let init = DMatrix::identity(2, 2) * 0.3;
    let few = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
    assert_eq!(adapt_proposal_covariance(&few, &init).unwrap(), init);
    let many: Vec<Vec<f64>> = (0..ADAPT_WARMUP).map(|i| vec![i as f64, 0.5 * i as f64]).collect();
    assert_ne!(adapt_proposal_covariance(&many, &init).unwrap(), init);
}

fn gaussian_config(iterations: usize, adaptation: Adaptation) -> PmmhConfig {
    let mut cfg = PmmhConfig::new(vec!["a".into()], vec![-10.0], vec![10.0], vec![0.0], iterations, iterations / 10);
    cfg.adaptation = adaptation;
    cfg
}

#[test]
fn exact_oracle_samples_the_posterior() {
    // Flat prior on [-10, 10] times N(1, 0.5²) likelihood.
    let cfg = gaussian_config(40_000, Adaptation::Continuous);
    let data = ObservationSet::empty(1.0, 1).unwrap();
    let ll = |t: &[f64]| Ok(-0.5 * ((t[0] - 1.0) / 0.5).powi(2));
    let build = |_: &[f64]| CoxModel::brownian_benchmark(1.0);
    let chain = pmmh_run(&cfg, &data, &build, &Backend::ExactOracle(&ll), StreamKey::new(4)).unwrap();
    let s = summarize(&chain, cfg.burn_in);
    let mcse = s.sd[0] / s.ess[0].unwrap().sqrt();
    assert!((s.mean[0] - 1.0).abs() < 4.0 * mcse, "{} ± {mcse}", s.mean[0]);
    assert!((s.sd[0] - 0.5).abs() < 0.05, "{}", s.sd[0]);
    assert!(s.acceptance_rate > 0.2 && s.acceptance_rate < 0.7);
}

#[test]
fn flat_likelihood_leaves_a_two_point_prior_invariant() {
    // Flat likelihood and a uniform prior: the chain should spend equal time
    // in each half of the support.
    let mut cfg = PmmhConfig::new(vec!["a".into()], vec![0.0], vec![2.0], vec![0.5], 20_000, 1000);
    cfg.adaptation = Adaptation::Off;
    cfg.initial_cov = DMatrix::identity(1, 1) * 0.5;
    let data = ObservationSet::empty(1.0, 1).unwrap();
    let ll = |_: &[f64]| Ok(0.0);
    let build = |_: &[f64]| CoxModel::brownian_benchmark(1.0);
    let chain = pmmh_run(&cfg, &data, &build, &Backend::ExactOracle(&ll), StreamKey::new(5)).unwrap();
    let upper: Vec<f64> = chain.column(0)[cfg.burn_in..].iter().map(|&a| f64::from(a > 1.0)).collect();
    let frac = upper.iter().sum::<f64>() / upper.len() as f64;
    let mcse = 0.5 / ess(&upper).unwrap().sqrt();
    assert!((frac - 0.5).abs() < 4.0 * mcse, "{frac} ± {mcse}");
    assert!(chain.params.iter().all(|p| cfg.in_support(p)));
}

#[test]
fn rejected_moves_keep_the_stored_estimate() {
    let cfg = PmmhConfig::new(vec!["sigma".into()], vec![0.2], vec![3.0], vec![1.0], 60, 10);
    let data = ObservationSet::new(vec![0.3, 0.7], vec![0.1, -0.4], 1, 1.0).unwrap();
    let build = |t: &[f64]| CoxModel::brownian_benchmark(t[0]);
    let backend = Backend::Discretised { delta: 0.1, n: 20 };
    let chain = pmmh_run(&cfg, &data, &build, &backend, StreamKey::new(6)).unwrap();
    assert!(chain.accepted.iter().any(|a| *a) && chain.accepted.iter().any(|a| !*a));
    for i in 1..chain.len() {
        if !chain.accepted[i] {
            assert_eq!(chain.log_lik[i], chain.log_lik[i - 1]);
            assert_eq!(chain.params[i], chain.params[i - 1]);
        } else {
            assert_ne!(chain.log_lik[i], chain.log_lik[i - 1]);
        }
    }
    let again = pmmh_run(&cfg, &data, &build, &backend, StreamKey::new(6)).unwrap();
    assert_eq!(chain, again);
}

#[test]
fn backend_errors_carry_the_iteration() {
    let cfg = gaussian_config(500, Adaptation::Off);
    let data = ObservationSet::empty(1.0, 1).unwrap();
    let calls = AtomicUsize::new(0);
    let ll = |_: &[f64]| {
        if calls.fetch_add(1, Ordering::SeqCst) == 3 {
            Err(Error::InvalidInput("boom".into()))
        } else {
            Ok(0.0)
        }
    };
    let build = |_: &[f64]| CoxModel::brownian_benchmark(1.0);
    let err = pmmh_run(&cfg, &data, &build, &Backend::ExactOracle(&ll), StreamKey::new(7)).unwrap_err();
    assert!(matches!(err, Error::Backend { iteration, .. } if iteration >= 3));
}

#[test]
fn burn_in_only_adaptation_freezes_the_proposal() {
    let cfg = gaussian_config(2000, Adaptation::BurnInOnly);
    let data = ObservationSet::empty(1.0, 1).unwrap();
    let ll = |t: &[f64]| Ok(-0.5 * t[0] * t[0]);
    let build = |_: &[f64]| CoxModel::brownian_benchmark(1.0);
    let chain = pmmh_run(&cfg, &data, &build, &Backend::ExactOracle(&ll), StreamKey::new(8)).unwrap();
    let frozen = &chain.proposal_cov[cfg.burn_in - 1];
    assert!(chain.proposal_cov[cfg.burn_in..].iter().all(|c| c == frozen));
    assert_ne!(chain.proposal_cov[0], *frozen);

    let off = pmmh_run(
        &gaussian_config(300, Adaptation::Off),
        &data,
        &build,
        &Backend::ExactOracle(&ll),
        StreamKey::new(8),
    )
    .unwrap();
    assert!(off.proposal_cov.iter().all(|c| c == &vec![0.1]));
}

#[test]
fn chain_text_has_one_row_per_iteration() {
    let cfg = gaussian_config(50, Adaptation::Off);
    let data = ObservationSet::empty(1.0, 1).unwrap();
    let ll = |t: &[f64]| Ok(-t[0].abs());
    let build = |_: &[f64]| CoxModel::brownian_benchmark(1.0);
    let chain = pmmh_run(&cfg, &data, &build, &Backend::ExactOracle(&ll), StreamKey::new(9)).unwrap();
    let text = format_chain(&chain);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "iteration,a,log_lik,accepted");
    assert_eq!(lines.len(), 51);
    let last: Vec<&str> = lines[50].split(',').collect();
    assert_eq!(last[0], "50");
    assert_eq!(last[1].parse::<f64>().unwrap(), chain.params[49][0]);
}

#[test]
fn poisson_rmse_model_recovers_its_coefficients() {
    let (c1, c2, budget) = (0.5, 30.0, 1e3);
    let pts: Vec<(f64, f64)> = [0.05f64, 0.08, 0.1, 0.15, 0.2, 0.3]
        .iter()
        .map(|&d| (d, c1 / (budget * d) + c2 * (-1.0 / (2.0 * d)).exp()))
        .collect();
    let fit = fit_rmse_model(&pts, budget, RmseModel::Poisson).unwrap();
    assert!((fit.c1 / c1 - 1.0).abs() < 1e-8 && (fit.c2 / c2 - 1.0).abs() < 1e-8);
    let f = |d: f64| fit.eval(RmseModel::Poisson, budget, d);
    let h = 1e-6 * fit.delta_min;
    let slope = (f(fit.delta_min + h) - f(fit.delta_min - h)) / (2.0 * h);
    assert!(slope.abs() < 1e-6 * f(fit.delta_min) / fit.delta_min);
    assert!(fit_rmse_model(&pts[..3], budget, RmseModel::Poisson).is_err());
}

#[test]
fn rmse_cells_count_particle_steps() {
    let model = CoxModel::brownian_benchmark(1.0).unwrap();
    let obs = ObservationSet::empty(1.0, 1).unwrap();
    let truth = likelihood_no_obs(1.0);
    let d = rmse_cell(Method::Discretised, &model, &obs, 0.25, 50, 20, truth, StreamKey::new(10)).unwrap();
    assert_eq!(d.cost, 200.0);
    assert_eq!(d.replicates, 20);
    assert!(d.rmse > 0.0 && d.rmse_se > 0.0);
    let c = rmse_cell(Method::Continuous, &model, &obs, 0.25, 50, 20, truth, StreamKey::new(10)).unwrap();
    assert_eq!(c.cost, 200.0);
    assert!(rmse_cell(Method::Continuous, &model, &obs, 0.25, 50, 1, truth, StreamKey::new(10)).is_err());
}
