//! Ground truths for the 1D Brownian benchmark (`X_0 = 0`, `λ(x) = x + 10`,
//! Gaussian marks): closed forms, Gauss–Hermite quadrature and the
//! exact-weight particle filter.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::GaussHermite;

use crate::error::{ensure, Error, Result};
use crate::estimator::EstimatorConfig;
use crate::filters::{build_time_grid, run_continuous_pf_with, FilterOptions, FilterOutput, ObservationSet, SegmentWeighting};
use crate::model::{CoxModel, InitialLaw};
use crate::rng::StreamKey;
use crate::sde::Dynamics;

#[inline]
pub(crate) fn bridge_pi_raw(alpha: f64, beta: f64, h: f64, x0: f64, x1: f64) -> f64 {
    (-0.5 * alpha * h * (x0 + x1) - beta * h + alpha * alpha * h.powi(3) / 24.0).exp()
}

/// `E[exp(-∫_τ^T (α X_t + β) dt) | X_τ = x0, X_T = x1]` for standard
/// Brownian motion. Filters call this with `τ < T`; a zero-length segment
/// returns 1.
#[inline]
pub fn bridge_path_integral_expectation(alpha: f64, beta: f64, tau: f64, t: f64, x0: f64, x1: f64) -> f64 {
    bridge_pi_raw(alpha, beta, t - tau, x0, x1)
}

/// Checked variant of [`bridge_path_integral_expectation`].
pub fn bridge_path_integral(alpha: f64, beta: f64, tau: f64, t: f64, x0: f64, x1: f64) -> Result<f64> {
    ensure(tau < t, || format!("need τ < T, got τ = {tau}, T = {t}"))?;
    Ok(bridge_pi_raw(alpha, beta, t - tau, x0, x1))
}

/// `L = exp(-10T + T³/6)` when nothing arrives in `[0, T]`.
pub fn likelihood_no_obs(horizon: f64) -> f64 {
    (-10.0 * horizon + horizon.powi(3) / 6.0).exp()
}

/// Closed-form likelihood with two arrivals `(t1, y1)`, `(t2, y2)` in
/// `[0, T]` and Gaussian marks of standard deviation `sigma_y`.
pub fn likelihood_two_obs(t1: f64, t2: f64, y1: f64, y2: f64, horizon: f64, sigma_y: f64) -> Result<f64> {
    ensure(0.0 < t1 && t1 < t2 && t2 < horizon, || {
        format!("need 0 < t1 < t2 < T, got ({t1}, {t2}, {horizon})")
    })?;
    ensure(sigma_y > 0.0, || "σ_y must be positive".into())?;
    let sy2 = sigma_y * sigma_y;
    let a = -1.0 / sy2;
    let b = y2 / sy2 + (t1 + t2 - 2.0 * horizon) / 2.0;
    let s2sq = 1.0 / (1.0 / sy2 + 1.0 / (t2 - t1));
    let s1sq = 1.0 / (2.0 / sy2 - a * a * s2sq + 1.0 / t1);
    let mu1 = s1sq * ((y1 + y2) / sy2 + a * b * s2sq + (t1 - 2.0 * horizon) / 2.0);
    let big_a = s2sq * a + 1.0;
    // (v1 + 10)(μ2 + v1 + 10) with μ2 = σ2²(a v1 + b), averaged over v1.
    let poly = big_a * (mu1 * mu1 + s1sq) + (10.0 * big_a + s2sq * b + 10.0) * mu1 + 10.0 * s2sq * b + 100.0;
    let pre = (s1sq * s2sq).sqrt() / (2.0 * PI * sy2 * (t1 * (t2 - t1)).sqrt());
    let e1 = -(y1 * y1 + y2 * y2) / (2.0 * sy2) + b * b * s2sq / 2.0 + mu1 * mu1 / (2.0 * s1sq);
    let e2 = -10.0 * horizon + (t1.powi(3) + (t2 - t1).powi(3) + (horizon - t2).powi(3)) / 24.0 + (horizon - t2).powi(3) / 8.0;
    Ok(pre * poly * (e1 + e2).exp())
}

/// Independent check of [`likelihood_two_obs`]: tensor Gauss–Hermite over
/// the three Brownian increments, with the path integral on each segment
/// replaced by its exact bridge expectation.
pub fn two_obs_quadrature(t1: f64, t2: f64, y1: f64, y2: f64, horizon: f64, sigma_y: f64, resolution: usize) -> Result<f64> {
    ensure(0.0 < t1 && t1 < t2 && t2 < horizon, || "need 0 < t1 < t2 < T".into())?;
    let rule = hermite(resolution)?;
    let sy2 = sigma_y * sigma_y;
    let g = |y: f64, x: f64| (-(y - x).powi(2) / (2.0 * sy2)).exp() / (2.0 * PI * sy2).sqrt();
    let (h1, h2, h3) = (t1, t2 - t1, horizon - t2);
    let (c1, c2, c3) = ((2.0 * h1).sqrt(), (2.0 * h2).sqrt(), (2.0 * h3).sqrt());
    let norm = PI.powf(-1.5);
    let mut total = 0.0;
    for &(u1, w1) in rule.iter() {
        let x1 = c1 * u1;
        let f1 = bridge_pi_raw(1.0, 10.0, h1, 0.0, x1) * (x1 + 10.0) * g(y1, x1);
        for &(u2, w2) in rule.iter() {
            let x2 = x1 + c2 * u2;
            let f2 = f1 * bridge_pi_raw(1.0, 10.0, h2, x1, x2) * (x2 + 10.0) * g(y2, x2);
            let mut inner = 0.0;
            for &(u3, w3) in rule.iter() {
                let x3 = x2 + c3 * u3;
                inner += w3 * bridge_pi_raw(1.0, 10.0, h3, x2, x3);
            }
            total += w1 * w2 * f2 * inner;
        }
    }
    Ok(norm * total)
}

/// `exp(-½h(x_prev + x_next) - 10h + h³/24)`, `h = t_next - t_prev`.
pub fn exact_segment_weight(t_prev: f64, t_next: f64, x_prev: f64, x_next: f64) -> Result<f64> {
    ensure(t_prev <= t_next, || format!("need t_prev ≤ t_next, got {t_prev} > {t_next}"))?;
    Ok(bridge_pi_raw(1.0, 10.0, t_next - t_prev, x_prev, x_next))
}

fn hermite(n: usize) -> Result<Vec<(f64, f64)>> {
    let n = NonZeroUsize::new(n).ok_or_else(|| Error::InvalidInput("resolution must be positive".into()))?;
    Ok(GaussHermite::new(n).as_node_weight_pairs().to_vec())
}

/// Most random grid states the tensor quadrature will integrate over.
pub const QUADRATURE_MAX_NODES: usize = 4;

/// Discretised likelihood by tensor Gauss–Hermite quadrature over the grid
/// states. The model must be one-dimensional with a point initial law and
/// closed-form dynamics. Fails unless doubling `resolution` changes the
/// value by less than 1e-8 relative.
pub fn quadrature_likelihood_delta(model: &CoxModel, obs: &ObservationSet, delta: f64, resolution: usize) -> Result<f64> {
    let coarse = quadrature_at(model, obs, delta, resolution)?;
    let fine = quadrature_at(model, obs, delta, 2 * resolution)?;
    let change = ((fine - coarse) / fine).abs();
    if !(change < 1e-8) {
        return Err(Error::NotConverged { change });
    }
    Ok(fine)
}

fn quadrature_at(model: &CoxModel, obs: &ObservationSet, delta: f64, resolution: usize) -> Result<f64> {
    ensure(model.dim() == 1, || "quadrature oracle is one-dimensional".into())?;
    ensure(matches!(model.sde.dynamics(), Dynamics::Brownian { .. } | Dynamics::OrnsteinUhlenbeck { .. }), || {
        "quadrature oracle needs closed-form dynamics".into()
    })?;
    let x0 = match &model.init {
        InitialLaw::Point(x) => x[0],
        InitialLaw::Gaussian { .. } => return Err(Error::Unsupported("quadrature oracle needs a point initial law".into())),
    };
    let grid = build_time_grid(obs, delta)?;
    let m = grid.segments();
    let terminal = grid.obs_index[m].is_some();
    // Nodes whose states enter the weights: 0..m-1, plus m for an arrival at T.
    let last = if terminal { m } else { m - 1 };
    if last > QUADRATURE_MAX_NODES {
        return Err(Error::InvalidInput(format!(
            "grid needs {last} random states, quadrature supports at most {QUADRATURE_MAX_NODES}"
        )));
    }
    let rule = hermite(resolution)?;
    let weight = |k: usize, x: f64| -> Result<f64> {
        // Unchecked: far Hermite nodes can leave the positive region of an
        // affine intensity, where the closed forms continue it linearly.
        let lam = model.intensity.value(&[x]);
        let h = if k < m { grid.times[k + 1] - grid.times[k] } else { 0.0 };
        let mut w = (-lam * h).exp();
        if let Some(j) = grid.obs_index[k] {
            w *= lam * model.marks.density(&[x], obs.mark(j));
        }
        Ok(w)
    };
    fn rec(
        k: usize,
        x_prev: f64,
        last: usize,
        grid: &[f64],
        model: &CoxModel,
        rule: &[(f64, f64)],
        weight: &dyn Fn(usize, f64) -> Result<f64>,
    ) -> Result<f64> {
        if k > last {
            return Ok(1.0);
        }
        let tr = model.sde.transition_moments(grid[k - 1], grid[k])?;
        let mean = tr.phi[(0, 0)] * x_prev + tr.offset[0];
        let sd = (2.0 * tr.cov[(0, 0)]).sqrt();
        let mut acc = 0.0;
        for &(u, w) in rule {
            let x = mean + sd * u;
            acc += w * weight(k, x)? * rec(k + 1, x, last, grid, model, rule, weight)?;
        }
        Ok(acc / PI.sqrt())
    }
    Ok(weight(0, x0)? * rec(1, x0, last, &grid.times, model, &rule, &weight)?)
}

/// Extrapolates `f(0)` from `f(Δ)`, `f(Δ/2)`, `f(Δ/4)` assuming
/// `f(Δ) = a + bΔ + cΔ²`.
pub fn richardson3(f_delta: f64, f_half: f64, f_quarter: f64) -> f64 {
    (8.0 * f_quarter - 6.0 * f_half + f_delta) / 3.0
}

/// Continuous filter with exact conditional segment weights in place of
/// Poisson estimates.
pub fn run_exact_weight_pf(model: &CoxModel, obs: &ObservationSet, delta: f64, n: usize, key: StreamKey) -> Result<FilterOutput> {
    run_continuous_pf_with(
        model,
        obs,
        &EstimatorConfig::new(delta),
        n,
        key,
        FilterOptions::default(),
        SegmentWeighting::ExactAffineBrownian,
    )
}
