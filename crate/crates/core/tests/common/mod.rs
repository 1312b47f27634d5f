//! Shared fixtures for integration and acceptance tests.
#![allow(dead_code)]

use std::sync::Arc;

use coxfilter::calibration::{pmmh_run, summarize, Backend, PmmhConfig};
use coxfilter::datagen::{simulate_observations, ThinningMode};
use coxfilter::estimator::EstimatorConfig;
use coxfilter::filters::ObservationSet;
use coxfilter::model::InitialLaw;
use coxfilter::observation::{BornWolf, BornWolfParams, Intensity, MarkModel};
use coxfilter::rng::StreamKey;
use coxfilter::sde::LinearSdeSpec;
use coxfilter::CoxModel;

/// Benchmark data on `[0, horizon]` simulated by thinning.
pub fn benchmark_obs(horizon: f64, seed: u64) -> ObservationSet {
    let model = CoxModel::brownian_benchmark(1.0).unwrap();
    simulate_observations(&model, 25.0, horizon, StreamKey::new(seed), ThinningMode::Listing)
        .unwrap()
        .obs
}

/// 3D OU molecule with `φ = (1, 1, φ3)`, `μ = (0, 0, μ3)`, stationary start,
/// depth-decaying intensity and Born–Wolf marks.
pub fn molecule(bw: &Arc<BornWolf>, phi3: f64, mu3: f64, lambda0: f64, depth: f64) -> coxfilter::Result<CoxModel> {
    let sde = LinearSdeSpec::ornstein_uhlenbeck(vec![1.0, 1.0, phi3], vec![0.0, 0.0, mu3])?;
    let init = InitialLaw::stationary(&sde)?;
    CoxModel::new(
        sde,
        init,
        Intensity::ExponentialDepth { lambda0, depth, axis: 2 },
        MarkModel::BornWolf(bw.clone()),
    )
}

fn env_or<T: std::str::FromStr>(name: &str, default: T) -> T {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

/// PMMH on a reduced molecule dataset with both backends on the
/// observation-spaced grid.
pub fn pmmh_bias() -> Result<String, String> {
    let depth: f64 = env_or("AC10_DEPTH", 1.0);
    let rate: f64 = env_or("AC10_RATE", 2.0);
    let horizon: f64 = env_or("AC10_T", 240.0);
    let n = env_or("AC10_N", 2000usize);
    let iterations = env_or("AC10_ITERS", 1000usize);
    let burn_in = iterations / 5;
    // Mean photon rate `rate` at the true mean depth 2.
    let lambda0 = rate * (2.0 / depth).exp();
    let bw = Arc::new(BornWolf::new(BornWolfParams::default()).map_err(|e| e.to_string())?);
    let truth = molecule(&bw, 4.0, 2.0, lambda0, depth).map_err(|e| e.to_string())?;
    // x3 stays above -1 with overwhelming probability, so this dominates.
    let lambda_max = lambda0 * (1.0 / depth).exp();
    let data = simulate_observations(&truth, lambda_max, horizon, StreamKey::new(1010), ThinningMode::Listing)
        .map_err(|e| e.to_string())?
        .obs;
    // Lower bounds of 1 keep the chain out of the slow-reversion corner where
    // excursions to negative depth inflate the Lipschitz tracker and with it
    // the cost of every continuous-filter call. The posterior sits far above.
    let cfg = PmmhConfig::new(
        vec!["phi3".into(), "mu3".into()],
        vec![1.0, 1.0],
        vec![10.0, 10.0],
        vec![4.0, 2.0],
        iterations,
        burn_in,
    );
    cfg.validate().map_err(|e| e.to_string())?;
    let build = |theta: &[f64]| molecule(&bw, theta[0], theta[1], lambda0, depth);
    let backends = [
        ("continuous", Backend::Continuous { cfg: EstimatorConfig::new(horizon), n }),
        ("discretised", Backend::Discretised { delta: horizon, n }),
    ];
    let mut summaries = Vec::new();
    for (i, (name, backend)) in backends.iter().enumerate() {
        let start = std::time::Instant::now();
        let chain = pmmh_run(&cfg, &data, &build, backend, StreamKey::new(2020 + i as u64)).map_err(|e| e.to_string())?;
        let s = summarize(&chain, burn_in);
        eprintln!(
            "{name}: {:.0}s mean {:.3?} sd {:.3?} ess {:.0?} acc {:.2}",
            start.elapsed().as_secs_f64(),
            s.mean,
            s.sd,
            s.ess,
            s.acceptance_rate
        );
        summaries.push(s);
    }
    let (c, d) = (&summaries[0], &summaries[1]);
    let covers = (c.mean[1] - 2.0).abs() <= 2.0 * c.sd[1];
    let pooled = ((c.sd[1].powi(2) + d.sd[1].powi(2)) / 2.0).sqrt();
    let gap = (c.mean[1] - d.mean[1]).abs() / pooled;
    let detail = format!(
        "{} arrivals; μ3 continuous {:.3} ± {:.3}, discretised {:.3} ± {:.3}; separation {gap:.2} pooled SD",
        data.len(),
        c.mean[1],
        c.sd[1],
        d.mean[1],
        d.sd[1]
    );
    if covers && gap > 1.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}
