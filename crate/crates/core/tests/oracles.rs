use coxfilter::filters::{run_continuous_pf, FilterOptions, ObservationSet};
use coxfilter::oracles::*;
use coxfilter::rng::StreamKey;
use coxfilter::estimator::EstimatorConfig;
use coxfilter::CoxModel;

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

#[test]
fn two_obs_closed_form_matches_quadrature() {
    for &(t1, t2, y1, y2, t, sy) in &[
        (0.5, 1.2, 0.3, -0.4, 2.0, 1.0),
        (0.2, 0.9, 1.5, 2.0, 1.5, 0.5),
        (1.0, 1.5, -1.0, 0.0, 2.0, 2.0),
    ] {
        let closed = likelihood_two_obs(t1, t2, y1, y2, t, sy).unwrap();
        let quad = two_obs_quadrature(t1, t2, y1, y2, t, sy, 60).unwrap();
        assert!(rel(closed, quad) < 1e-6, "closed {closed:e} quad {quad:e}");
    }
}

#[test]
fn two_obs_rejects_bad_times() {
    assert!(likelihood_two_obs(1.0, 0.5, 0.0, 0.0, 2.0, 1.0).is_err());
    assert!(likelihood_two_obs(0.5, 1.0, 0.0, 0.0, 1.0, 1.0).is_err());
    assert!(likelihood_two_obs(0.5, 1.0, 0.0, 0.0, 2.0, 0.0).is_err());
}

#[test]
fn quadrature_matches_no_obs_limit() {
    // With no arrivals the discretised likelihood tends to the closed form
    // and Richardson removes the first two error orders.
    let model = CoxModel::brownian_benchmark(1.0).unwrap();
    let obs = ObservationSet::empty(1.0, 1).unwrap();
    let f = |d: f64| quadrature_likelihood_delta(&model, &obs, d, 30).unwrap().ln();
    let ext = richardson3(f(1.0), f(0.5), f(0.25));
    assert!((ext - likelihood_no_obs(1.0).ln()).abs() < 1e-9, "{ext} vs {}", likelihood_no_obs(1.0).ln());
}

#[test]
fn quadrature_refuses_long_grids() {
    let model = CoxModel::brownian_benchmark(1.0).unwrap();
    let obs = ObservationSet::empty(2.0, 1).unwrap();
    assert!(quadrature_likelihood_delta(&model, &obs, 0.1, 10).is_err());
}

#[test]
fn exact_weight_filter_is_exact_without_arrivals() {
    // Exact segment weights from a point start leave only path sampling
    // noise in the product of means.
    let model = CoxModel::brownian_benchmark(1.0).unwrap();
    let obs = ObservationSet::empty(2.0, 1).unwrap();
    let out = run_exact_weight_pf(&model, &obs, 0.1, 20_000, StreamKey::new(3)).unwrap();
    assert!((out.log_likelihood - likelihood_no_obs(2.0).ln()).abs() < 0.02);
}

#[test]
fn continuous_filter_close_to_two_obs_truth() {
    let model = CoxModel::brownian_benchmark(1.0).unwrap();
    let obs = ObservationSet::new(vec![0.5, 1.2], vec![0.3, -0.4], 1, 2.0).unwrap();
    let truth = likelihood_two_obs(0.5, 1.2, 0.3, -0.4, 2.0, 1.0).unwrap();
    let out = run_continuous_pf(&model, &obs, &EstimatorConfig::new(0.05), 5_000, StreamKey::new(9), FilterOptions::default()).unwrap();
    assert!((out.log_likelihood - truth.ln()).abs() < 0.1, "{} vs {}", out.log_likelihood, truth.ln());
}
