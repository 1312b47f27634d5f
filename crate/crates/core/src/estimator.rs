//! The Poisson estimator of `exp(-∫ λ(X_s) ds)` over one grid segment, its
//! tuning rules, and the bounds that control how often it goes negative.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{ensure, Error, Result};
use crate::observation::Intensity;
use crate::sde::LinearSdeSpec;
use crate::special::log_norm_sf;

/// How a negative segment estimate enters the particle weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatePolicy {
    /// `max(E, 0)`.
    Truncate,
    /// `|E|`, with the number of sign flips tracked per trajectory.
    AbsoluteWithSign,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Maximum grid step Δ.
    pub delta: f64,
    /// Budget for the probability of any negative estimate in a run.
    pub epsilon: f64,
    /// Excursion constant used by [`choose_step_size`].
    pub d: f64,
    pub policy: EstimatePolicy,
}

impl EstimatorConfig {
    pub fn new(delta: f64) -> Self {
        Self {
            delta,
            epsilon: 1e-6,
            d: 3.0,
            policy: EstimatePolicy::Truncate,
        }
    }

    pub fn with_policy(mut self, policy: EstimatePolicy) -> Self {
        self.policy = policy;
        self
    }

    /// Picks Δ with [`choose_step_size`] for `n` particles on `[0, horizon]`.
    pub fn auto(n: usize, horizon: f64, lipschitz: f64, epsilon: f64, d: f64) -> Result<Self> {
        let delta = choose_step_size(n, horizon, lipschitz, d, epsilon)?;
        Ok(Self {
            delta,
            epsilon,
            d,
            policy: EstimatePolicy::Truncate,
        })
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.delta > 0.0 && self.delta.is_finite(), || format!("Δ must be positive, got {}", self.delta))?;
        ensure(self.epsilon > 0.0 && self.epsilon < 1.0, || {
            format!("ε must lie in (0, 1), got {}", self.epsilon)
        })?;
        ensure(self.d > 0.0, || format!("d must be positive, got {}", self.d))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentEstimate {
    pub value: f64,
    pub kappa: u32,
    pub t_prev: f64,
    pub t_next: f64,
    pub x_end: Vec<f64>,
}

impl SegmentEstimate {
    pub fn is_negative(&self) -> bool {
        self.value < 0.0
    }
}

/// Running product of the estimator factors that moves its magnitude into a
/// log scale before it can overflow, so far-out states give a clean zero
/// rather than `0 · inf`.
struct Product {
    value: f64,
    log_scale: f64,
}

impl Default for Product {
    fn default() -> Self {
        Self { value: 1.0, log_scale: 0.0 }
    }
}

impl Product {
    #[inline]
    fn mul(&mut self, f: f64) {
        self.value *= f;
        if self.value.abs() > 1e150 {
            self.log_scale += self.value.abs().ln();
            self.value = self.value.signum();
        }
    }

    /// `exp(log_base) · product`, with `base = exp(log_base)` precomputed.
    #[inline]
    fn times_exp(&self, base: f64, log_base: f64) -> f64 {
        if self.log_scale == 0.0 {
            base * self.value
        } else {
            self.value * (log_base + self.log_scale).exp()
        }
    }
}

/// Hot-path estimator. `poisson` is `None` when `η = 0`, which is only
/// exact for a constant intensity. Writes `X_{t_next}` into `x_end` and
/// returns `(E, κ)`.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn pe_into<R: Rng + ?Sized>(
    sde: &LinearSdeSpec,
    intensity: &Intensity,
    eta: f64,
    poisson: Option<&Poisson<f64>>,
    t_prev: f64,
    t_next: f64,
    x_start: &[f64],
    lam_start: f64,
    x_end: &mut [f64],
    rng: &mut R,
) -> Result<(f64, u32)> {
    let h = t_next - t_prev;
    let kappa = match poisson {
        Some(p) => p.sample(rng) as u32,
        None => 0,
    };
    let base = (-h * lam_start).exp();
    if kappa == 0 {
        sde.sample_transition_into(t_prev, t_next, x_start, x_end, rng)?;
        return Ok((base, 0));
    }
    let mut taus: SmallVec<[f64; 8]> = (0..kappa).map(|_| t_prev + h * rng.random::<f64>()).collect();
    taus.sort_unstable_by(|a, b| a.total_cmp(b));
    let dim = x_start.len();
    let mut cur: SmallVec<[f64; 4]> = SmallVec::from_slice(x_start);
    let mut nxt: SmallVec<[f64; 4]> = SmallVec::from_elem(0.0, dim);
    let mut t = t_prev;
    let scale = h / eta;
    let mut prod = Product::default();
    for &tau in &taus {
        sde.sample_transition_into(t, tau, &cur, &mut nxt, rng)?;
        let lam = intensity.eval(&nxt)?;
        prod.mul(1.0 + scale * (lam_start - lam));
        std::mem::swap(&mut cur, &mut nxt);
        t = tau;
    }
    sde.sample_transition_into(t, t_next, &cur, x_end, rng)?;
    Ok((prod.times_exp(base, -h * lam_start), kappa))
}

/// One Poisson estimate over `[t_prev, t_next]` started from `x_start`, with
/// `κ ~ Poisson(η)` auxiliary points sampled forward in time.
pub fn poisson_segment_estimate<R: Rng + ?Sized>(
    sde: &LinearSdeSpec,
    intensity: &Intensity,
    eta: f64,
    t_prev: f64,
    t_next: f64,
    x_start: &[f64],
    rng: &mut R,
) -> Result<SegmentEstimate> {
    ensure(eta > 0.0 && eta.is_finite(), || format!("η must be positive, got {eta}"))?;
    ensure(t_prev < t_next, || format!("empty segment [{t_prev}, {t_next}]"))?;
    let lam_start = intensity.eval(x_start)?;
    let poisson = Poisson::new(eta).map_err(|e| Error::InvalidInput(format!("Poisson rate {eta}: {e}")))?;
    let mut x_end = vec![0.0; x_start.len()];
    let (value, kappa) = pe_into(sde, intensity, eta, Some(&poisson), t_prev, t_next, x_start, lam_start, &mut x_end, rng)?;
    if !value.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite estimate from state {x_start:?}")));
    }
    Ok(SegmentEstimate {
        value,
        kappa,
        t_prev,
        t_next,
        x_end,
    })
}

/// Poisson estimate over `[t_prev, t_next]` with both endpoints fixed: the
/// auxiliary states are drawn from the bridge between `x_start` and `x_end`.
/// Returns `(E, κ)`.
#[allow(clippy::too_many_arguments)]
pub fn poisson_bridge_estimate<R: Rng + ?Sized>(
    sde: &LinearSdeSpec,
    intensity: &Intensity,
    eta: f64,
    t_prev: f64,
    t_next: f64,
    x_start: &[f64],
    x_end: &[f64],
    rng: &mut R,
) -> Result<(f64, u32)> {
    ensure(eta > 0.0 && eta.is_finite(), || format!("η must be positive, got {eta}"))?;
    ensure(t_prev < t_next, || format!("empty segment [{t_prev}, {t_next}]"))?;
    ensure(x_start.len() == x_end.len(), || "endpoint dimensions differ".into())?;
    let h = t_next - t_prev;
    let lam_start = intensity.eval(x_start)?;
    let poisson = Poisson::new(eta).map_err(|e| Error::InvalidInput(format!("Poisson rate {eta}: {e}")))?;
    let kappa = poisson.sample(rng) as u32;
    let mut taus: SmallVec<[f64; 8]> = (0..kappa).map(|_| t_prev + h * rng.random::<f64>()).collect();
    taus.sort_unstable_by(|a, b| a.total_cmp(b));
    let mut cur: SmallVec<[f64; 4]> = SmallVec::from_slice(x_start);
    let mut nxt: SmallVec<[f64; 4]> = SmallVec::from_elem(0.0, x_start.len());
    let mut t = t_prev;
    let mut prod = Product::default();
    for &tau in &taus {
        // Ties (or a draw at t_prev) reuse the current state.
        if tau > t {
            sde.sample_bridge_into(t, tau, t_next, &cur, x_end, &mut nxt, rng)?;
            std::mem::swap(&mut cur, &mut nxt);
            t = tau;
        }
        prod.mul(1.0 + (h / eta) * (lam_start - intensity.eval(&cur)?));
    }
    let base = (-h * lam_start).exp();
    Ok((prod.times_exp(base, -h * lam_start), kappa))
}

/// A probability (or bound) carried with its logarithm, since the values of
/// interest go far below `f64::MIN_POSITIVE`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub value: f64,
    pub log: f64,
}

impl Bound {
    /// The `η → ∞` limit of both bounds.
    pub const ZERO: Bound = Bound {
        value: 0.0,
        log: f64::NEG_INFINITY,
    };

    pub fn from_log(log: f64) -> Self {
        Self { value: log.exp(), log }
    }

    pub fn log10(&self) -> f64 {
        self.log / std::f64::consts::LN_10
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    ensure(v > 0.0 && v.is_finite(), || format!("{name} must be positive and finite, got {v}"))
}

/// Bound on `Pr(E < 0 | κ > 0, X_Δ)` for an `l`-Lipschitz intensity with
/// endpoint gap `|X_Δ - X_0| = gap`. Capped at 1, which keeps it monotone
/// in `η`.
pub fn neg_prob_bound_endpoint(eta: f64, delta: f64, l: f64, gap: f64) -> Result<Bound> {
    if eta == f64::INFINITY {
        return Ok(Bound::ZERO);
    }
    positive("η", eta)?;
    positive("Δ", delta)?;
    positive("l", l)?;
    ensure(gap >= 0.0 && gap.is_finite(), || format!("gap must be non-negative, got {gap}"))?;
    let a = eta / (delta * l);
    if a <= gap {
        return Ok(Bound { value: 1.0, log: 0.0 });
    }
    let log = std::f64::consts::LN_2 - 2.0 * a * (a - gap) / delta;
    Ok(Bound::from_log(log.min(0.0)))
}

/// The endpoint-averaged bound `2 + 4Φ(2z) − 6Φ(z)`, `z = η / (Δ^{3/2} l)`,
/// evaluated as `6Q(z) − 4Q(2z)` in log space.
pub fn neg_prob_bound_marginal(eta: f64, delta: f64, l: f64) -> Result<Bound> {
    if eta == f64::INFINITY {
        return Ok(Bound::ZERO);
    }
    positive("η", eta)?;
    positive("Δ", delta)?;
    positive("l", l)?;
    let z = eta / (delta.powf(1.5) * l);
    let lq1 = log_norm_sf(z);
    let lq2 = log_norm_sf(2.0 * z);
    let log = lq1 + (6.0 - 4.0 * (lq2 - lq1).exp()).ln();
    Ok(Bound::from_log(log.min(0.0)))
}

/// Both run-level constraints at step `delta` with `η = Δl`, as
/// `ln min(1, ⌈NT/Δ⌉ · bound)` for the endpoint and marginal bounds.
pub fn step_constraints(nt: f64, delta: f64, l: f64, d: f64) -> Result<(f64, f64)> {
    let count = (nt / delta).ceil().ln();
    let eta = delta * l;
    let e = neg_prob_bound_endpoint(eta, delta, l, d * delta.sqrt())?;
    let m = neg_prob_bound_marginal(eta, delta, l)?;
    Ok(((count + e.log).min(0.0), (count + m.log).min(0.0)))
}

pub const STEP_WINDOW: (f64, f64) = (1e-8, f64::INFINITY);

/// Largest Δ in `[1e-8, T]` (bisection on `ln Δ`, 1e-3 relative) for which
/// both run-level negative-estimate constraints hold at `η = Δl`.
pub fn choose_step_size(n: usize, horizon: f64, l: f64, d: f64, epsilon: f64) -> Result<f64> {
    ensure(n > 0, || "particle count must be positive".into())?;
    positive("T", horizon)?;
    positive("l", l)?;
    positive("d", d)?;
    ensure(epsilon > 0.0 && epsilon <= 1.0, || format!("ε must lie in (0, 1], got {epsilon}"))?;
    let nt = n as f64 * horizon;
    let log_eps = epsilon.ln();
    let feasible = |delta: f64| -> Result<bool> {
        let (e, m) = step_constraints(nt, delta, l, d)?;
        Ok(e <= log_eps && m <= log_eps)
    };
    let lo_bound = STEP_WINDOW.0;
    let hi_bound = horizon;
    if feasible(hi_bound)? {
        return Ok(hi_bound);
    }
    if !feasible(lo_bound)? {
        return Err(Error::NoFeasibleStep {
            lo: lo_bound,
            hi: hi_bound,
        });
    }
    let (mut lo, mut hi) = (lo_bound.ln(), hi_bound.ln());
    while hi - lo > 1e-3_f64.ln_1p() {
        let mid = 0.5 * (lo + hi);
        if feasible(mid.exp())? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo.exp())
}

/// Result of [`lipschitz_init`]; `fallback` is set when every pair of
/// states was degenerate and the floor value was returned.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzInit {
    pub value: f64,
    pub fallback: bool,
}

pub const LIPSCHITZ_FLOOR: f64 = 1e-6;
const MIN_SEPARATION: f64 = 1e-12;
/// Above this many states the multivariate pairwise scan uses the first
/// `PAIRWISE_LIMIT` states only.
pub const PAIRWISE_LIMIT: usize = 2000;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Largest difference quotient of `λ` over pairs of states (flat,
/// `dim` values per state).
pub fn lipschitz_init(intensity: &Intensity, states: &[f64], dim: usize) -> Result<LipschitzInit> {
    ensure(dim >= 1 && states.len() % dim == 0, || "state buffer does not match dimension".into())?;
    let n = states.len() / dim;
    let mut best: Option<f64> = None;
    if dim == 1 {
        // The steepest chord of a 1D point set joins neighbours in sorted
        // order, so one sweep suffices.
        let mut pts: Vec<(f64, f64)> = states
            .iter()
            .map(|&x| intensity.eval(&[x]).map(|l| (x, l)))
            .collect::<Result<_>>()?;
        pts.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let mut j = 0usize;
        for i in 1..pts.len() {
            while j + 1 < i && pts[i].0 - pts[j + 1].0 >= MIN_SEPARATION {
                j += 1;
            }
            let dx = pts[i].0 - pts[j].0;
            if dx >= MIN_SEPARATION {
                let r = (pts[i].1 - pts[j].1).abs() / dx;
                best = Some(best.map_or(r, |b: f64| b.max(r)));
            }
        }
    } else {
        let m = n.min(PAIRWISE_LIMIT);
        let lams: Vec<f64> = (0..m).map(|i| intensity.eval(&states[i * dim..(i + 1) * dim])).collect::<Result<_>>()?;
        for i in 0..m {
            let xi = &states[i * dim..(i + 1) * dim];
            for j in 0..i {
                let d = dist(xi, &states[j * dim..(j + 1) * dim]);
                if d >= MIN_SEPARATION {
                    let r = (lams[i] - lams[j]).abs() / d;
                    best = Some(best.map_or(r, |b: f64| b.max(r)));
                }
            }
        }
    }
    Ok(match best {
        Some(v) => LipschitzInit {
            value: v,
            fallback: false,
        },
        None => LipschitzInit {
            value: LIPSCHITZ_FLOOR,
            fallback: true,
        },
    })
}

/// Running empirical Lipschitz estimate; never decreases.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzTracker {
    pub value: f64,
    pub steps: usize,
}

impl LipschitzTracker {
    pub fn new(initial: f64) -> Self {
        Self {
            value: initial.max(0.0),
            steps: 0,
        }
    }

    /// Folds in a batch maximum.
    pub fn absorb(&mut self, candidate: f64) -> f64 {
        if candidate > self.value {
            self.value = candidate;
        }
        self.steps += 1;
        self.value
    }
}

/// Difference quotient between one particle's consecutive states, or `None`
/// if it did not move.
#[inline]
pub fn pair_ratio(lam_prev: f64, lam_next: f64, prev: &[f64], next: &[f64]) -> Option<f64> {
    let d = dist(prev, next);
    (d >= MIN_SEPARATION).then(|| (lam_next - lam_prev).abs() / d)
}

/// Updates the tracker from per-particle moves `prev[i] → next[i]`.
pub fn lipschitz_update(
    tracker: &mut LipschitzTracker,
    intensity: &Intensity,
    prev: &[f64],
    next: &[f64],
    dim: usize,
) -> Result<f64> {
    ensure(prev.len() == next.len() && prev.len() % dim == 0, || "state lists must pair up".into())?;
    let mut best: f64 = 0.0;
    for (p, q) in prev.chunks(dim).zip(next.chunks(dim)) {
        if let Some(r) = pair_ratio(intensity.eval(p)?, intensity.eval(q)?, p, q) {
            best = best.max(r);
        }
    }
    Ok(tracker.absorb(best))
}

/// Upper bound on the bias from truncating negative estimates at zero over
/// `m` segments of length Δ (requires `4Δ²l < 1`).
pub fn truncation_bias_bound(delta: f64, l: f64, horizon: f64, m: usize) -> Result<Bound> {
    positive("Δ", delta)?;
    positive("l", l)?;
    positive("T", horizon)?;
    ensure(m >= 1, || "m must be at least 1".into())?;
    let q = 4.0 * delta * delta * l;
    if q >= 1.0 {
        return Err(Error::InvalidBound(format!("4Δ²l = {q} ≥ 1")));
    }
    let mf = m as f64;
    let log = horizon * l / 2.0 + 0.5 * mf * ((1.0 + q) / (1.0 - q)).ln() + 0.5 * mf.ln()
        + 0.5 * (std::f64::consts::LN_2 - 1.0 / (2.0 * delta));
    Ok(Bound::from_log(log))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WaldEstimate {
    pub value: f64,
    pub draws: u64,
}

pub const WALD_CAP: u64 = 1_000_000;

/// Sums independent whole-interval Poisson estimates (`η = T`) until the
/// running sum is positive.
pub fn wald_estimate<R: Rng + ?Sized>(
    sde: &LinearSdeSpec,
    intensity: &Intensity,
    horizon: f64,
    x0: &[f64],
    rng: &mut R,
) -> Result<WaldEstimate> {
    positive("T", horizon)?;
    let eta = horizon;
    let lam0 = intensity.eval(x0)?;
    let poisson = Poisson::new(eta).map_err(|e| Error::InvalidInput(format!("Poisson rate {eta}: {e}")))?;
    let mut x_end = vec![0.0; x0.len()];
    let mut sum = 0.0;
    for k in 1..=WALD_CAP {
        let (e, _) = pe_into(sde, intensity, eta, Some(&poisson), 0.0, horizon, x0, lam0, &mut x_end, rng)?;
        sum += e;
        if sum > 0.0 {
            return Ok(WaldEstimate { value: sum, draws: k });
        }
    }
    Err(Error::CapExceeded {
        what: "Wald draws",
        cap: WALD_CAP,
    })
}
