//! Time grids, systematic resampling and the two bootstrap particle filters:
//! the Riemann-discretised filter and the continuous-time random-weight
//! filter driven by Poisson segment estimates.

use rand::Rng;
use rand_distr::Poisson;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::estimator::{lipschitz_init, pair_ratio, pe_into, EstimatePolicy, EstimatorConfig, LipschitzTracker};
use crate::model::CoxModel;
use crate::observation::Intensity;
use crate::oracles::bridge_path_integral_expectation;
use crate::rng::{tags, StreamKey};
use crate::sde::Dynamics;

/// Arrival times with their marks on `[0, horizon]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    times: Vec<f64>,
    marks: Vec<f64>,
    mark_dim: usize,
    horizon: f64,
}

impl ObservationSet {
    /// `marks` holds `mark_dim` values per arrival, row-major.
    pub fn new(times: Vec<f64>, marks: Vec<f64>, mark_dim: usize, horizon: f64) -> Result<Self> {
        ensure(horizon > 0.0 && horizon.is_finite(), || format!("horizon must be positive, got {horizon}"))?;
        ensure(marks.len() == times.len() * mark_dim, || {
            format!("{} marks do not match {} times × {mark_dim}", marks.len(), times.len())
        })?;
        ensure(marks.iter().all(|v| v.is_finite()), || "marks must be finite".into())?;
        for w in times.windows(2) {
            if w[1] == w[0] {
                return Err(Error::InvalidInput(format!("duplicate observation time {}", w[0])));
            }
            ensure(w[1] > w[0], || format!("observation times not increasing at {}", w[1]))?;
        }
        if let (Some(&first), Some(&last)) = (times.first(), times.last()) {
            ensure(first > 0.0 && last <= horizon, || {
                format!("observation times must lie in (0, {horizon}], got [{first}, {last}]")
            })?;
        }
        Ok(Self {
            times,
            marks,
            mark_dim,
            horizon,
        })
    }

    pub fn empty(horizon: f64, mark_dim: usize) -> Result<Self> {
        Self::new(Vec::new(), Vec::new(), mark_dim, horizon)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn marks(&self) -> &[f64] {
        &self.marks
    }

    pub fn mark(&self, i: usize) -> &[f64] {
        &self.marks[i * self.mark_dim..(i + 1) * self.mark_dim]
    }

    pub fn mark_dim(&self) -> usize {
        self.mark_dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }
}

/// Grid nodes `0 = t_0 < … < t_m = T`, refined so that every arrival time is
/// a node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub times: Vec<f64>,
    pub obs_index: Vec<Option<usize>>,
}

impl TimeGrid {
    /// Number of segments `m`.
    pub fn segments(&self) -> usize {
        self.times.len() - 1
    }

    pub fn max_gap(&self) -> f64 {
        self.times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }
}

/// Relative tolerance under which a leftover piece before an arrival or the
/// horizon is merged into the preceding step instead of becoming its own
/// segment.
pub const GRID_SNAP: f64 = 1e-9;

/// `t_k = t_{k-1} + min(Δ, T - t_{k-1}, next arrival - t_{k-1})`.
pub fn build_time_grid(obs: &ObservationSet, delta: f64) -> Result<TimeGrid> {
    ensure(delta > 0.0 && delta.is_finite(), || format!("Δ must be positive, got {delta}"))?;
    let horizon = obs.horizon;
    let n_max = (horizon / delta).ceil() as usize + obs.len() + 2;
    let mut times = Vec::with_capacity(n_max);
    let mut obs_index = Vec::with_capacity(n_max);
    times.push(0.0);
    obs_index.push(None);
    let mut t = 0.0;
    let mut j = 0usize;
    while t < horizon {
        let next_obs = obs.times.get(j).copied().unwrap_or(f64::INFINITY);
        let to_obs = next_obs - t;
        let to_end = horizon - t;
        let mut tn = if to_obs <= delta && to_obs <= to_end {
            next_obs
        } else if to_end <= delta {
            horizon
        } else {
            t + delta
        };
        if tn != next_obs && next_obs - tn < GRID_SNAP * delta {
            tn = next_obs;
        }
        if tn != horizon && horizon - tn < GRID_SNAP * delta {
            tn = horizon;
        }
        let flag = if tn == next_obs {
            j += 1;
            Some(j - 1)
        } else {
            None
        };
        times.push(tn);
        obs_index.push(flag);
        t = tn;
    }
    Ok(TimeGrid { times, obs_index })
}

/// Systematic resampling with offset `u ∈ [0, 1)`; returns ancestor indices.
pub fn systematic_resample_with(weights: &[f64], u: f64, out: &mut Vec<usize>) -> Result<()> {
    let n = weights.len();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::ZeroWeights);
    }
    out.clear();
    out.reserve(n);
    let step = total / n as f64;
    let mut target = u * step;
    let mut cum = 0.0;
    let mut i = 0usize;
    for _ in 0..n {
        while i + 1 < n && cum + weights[i] <= target {
            cum += weights[i];
            i += 1;
        }
        out.push(i);
        target += step;
    }
    Ok(())
}

pub fn systematic_resample<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(weights.len());
    systematic_resample_with(weights, rng.random::<f64>(), &mut out)?;
    Ok(out)
}

/// Stored particle history: states at every node and, for each node after
/// the first, the index of each particle's parent at the previous node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectories {
    pub dim: usize,
    pub node_times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub parents: Vec<Vec<u32>>,
}

impl Trajectories {
    /// Path of final particle `i` through the genealogy, one state per node.
    pub fn trace(&self, i: usize) -> Vec<f64> {
        let nodes = self.states.len();
        let mut out = vec![0.0; nodes * self.dim];
        let mut idx = i;
        for k in (0..nodes).rev() {
            out[k * self.dim..(k + 1) * self.dim].copy_from_slice(&self.states[k][idx * self.dim..(idx + 1) * self.dim]);
            if k > 0 {
                idx = self.parents[k - 1][idx] as usize;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterOutput {
    /// `ln L̂`; `-inf` when a step had all-zero weights.
    pub log_likelihood: f64,
    pub grid: Vec<f64>,
    /// ESS of the normalised weights at each weighting step.
    pub ess: Vec<f64>,
    pub negatives: u64,
    pub final_lipschitz: Option<f64>,
    /// Grid step at which every weight vanished, if any.
    pub degenerate_step: Option<usize>,
    pub policy: Option<EstimatePolicy>,
    /// Unnormalised weights of the last weighting step.
    pub final_weights: Vec<f64>,
    /// Negative-estimate count along each final trajectory.
    pub sign_counts: Option<Vec<u32>>,
    #[serde(skip)]
    pub trajectories: Option<Trajectories>,
}

impl FilterOutput {
    pub fn likelihood(&self) -> f64 {
        self.log_likelihood.exp()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterOptions {
    pub store_trajectories: bool,
}

/// Below this particle count per-step work stays on the calling thread.
const PARALLEL_MIN: usize = 4096;

fn map_particles<T, F>(out: &mut [f64], dim: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut [f64]) -> Result<T> + Sync + Send,
{
    let n = out.len() / dim;
    if n >= PARALLEL_MIN && rayon::current_num_threads() > 1 {
        out.par_chunks_mut(dim).enumerate().map(|(i, c)| f(i, c)).collect()
    } else {
        out.chunks_mut(dim).enumerate().map(|(i, c)| f(i, c)).collect()
    }
}

fn ess_of(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

fn validate_run(model: &CoxModel, obs: &ObservationSet, n: usize) -> Result<()> {
    ensure(n >= 1, || "need at least one particle".into())?;
    let md = model.marks.mark_dim(model.dim());
    ensure(obs.is_empty() || obs.mark_dim == md, || {
        format!("observations carry {}-dimensional marks, model expects {md}", obs.mark_dim)
    })
}

#[inline]
fn obs_factor(model: &CoxModel, obs: &ObservationSet, j: usize, x: &[f64], lam: f64) -> f64 {
    lam * model.marks.density(x, obs.mark(j))
}

fn sample_initial(model: &CoxModel, n: usize, key: &StreamKey) -> Vec<f64> {
    let dim = model.dim();
    let mut xs = vec![0.0; n * dim];
    let init = key.child(tags::INIT);
    for (i, c) in xs.chunks_mut(dim).enumerate() {
        model.init.sample_into(c, &mut init.stream(0, i as u64));
    }
    xs
}

fn gather(src: &[f64], dim: usize, anc: &[usize], dst: &mut Vec<f64>) {
    dst.clear();
    for &a in anc {
        dst.extend_from_slice(&src[a * dim..(a + 1) * dim]);
    }
}

fn check_weight(w: f64, step: usize, particle: usize, x: &[f64]) -> Result<f64> {
    if w.is_finite() && w >= 0.0 {
        Ok(w)
    } else {
        Err(Error::NonFiniteWeight {
            step,
            particle,
            state: x.to_vec(),
        })
    }
}

/// Bootstrap filter with Riemann weights `exp(-λ(X_k)(t_{k+1} - t_k))`.
/// Unbiased for the discretised likelihood, not for the continuous one.
pub fn run_discretised_pf(
    model: &CoxModel,
    obs: &ObservationSet,
    delta: f64,
    n: usize,
    key: StreamKey,
    opts: FilterOptions,
) -> Result<FilterOutput> {
    validate_run(model, obs, n)?;
    let grid = build_time_grid(obs, delta)?;
    let dim = model.dim();
    let m = grid.segments();
    let terminal = grid.obs_index[m];
    let prop = key.child(tags::PROPAGATE);
    let res = key.child(tags::RESAMPLE);

    let mut cur = sample_initial(model, n, &key);
    let mut next = vec![0.0; n * dim];
    let mut anc = Vec::with_capacity(n);
    let mut log_lik = 0.0;
    let mut ess = Vec::with_capacity(m + 1);
    let mut traj = opts.store_trajectories.then(|| Trajectories {
        dim,
        node_times: Vec::new(),
        states: Vec::new(),
        parents: Vec::new(),
    });
    let steps = m + usize::from(terminal.is_some());
    let mut weights = Vec::new();

    for k in 0..steps {
        // Particles at node k: for k = 0 the initial draws, otherwise
        // propagated from the resampled cloud at node k-1.
        if k > 0 {
            let (s, t) = (grid.times[k - 1], grid.times[k]);
            let src = &cur;
            map_particles(&mut next, dim, |i, out| {
                model
                    .sde
                    .sample_transition_into(s, t, &src[i * dim..(i + 1) * dim], out, &mut prop.stream(k as u64, i as u64))
            })?;
            std::mem::swap(&mut cur, &mut next);
        }
        let h_next = if k < m { grid.times[k + 1] - grid.times[k] } else { 0.0 };
        let oi = grid.obs_index[k];
        weights = cur
            .chunks(dim)
            .enumerate()
            .map(|(i, x)| {
                let lam = model.intensity.eval(x)?;
                let mut w = (-lam * h_next).exp();
                if let Some(j) = oi {
                    w *= obs_factor(model, obs, j, x, lam);
                }
                check_weight(w, k, i, x)
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(tr) = traj.as_mut() {
            tr.node_times.push(grid.times[k]);
            tr.states.push(cur.clone());
        }
        let total: f64 = weights.iter().sum();
        ess.push(ess_of(&weights));
        if !(total > 0.0) {
            return Ok(FilterOutput {
                log_likelihood: f64::NEG_INFINITY,
                grid: grid.times,
                ess,
                negatives: 0,
                final_lipschitz: None,
                degenerate_step: Some(k),
                policy: None,
                final_weights: weights,
                sign_counts: None,
                trajectories: traj,
            });
        }
        log_lik += (total / n as f64).ln();
        if k + 1 < steps {
            let u: f64 = res.stream(k as u64, 0).random();
            systematic_resample_with(&weights, u, &mut anc)?;
            gather(&cur, dim, &anc, &mut next);
            std::mem::swap(&mut cur, &mut next);
            if let Some(tr) = traj.as_mut() {
                tr.parents.push(anc.iter().map(|&a| a as u32).collect());
            }
        }
    }
    Ok(FilterOutput {
        log_likelihood: log_lik,
        grid: grid.times,
        ess,
        negatives: 0,
        final_lipschitz: None,
        degenerate_step: None,
        policy: None,
        final_weights: weights,
        sign_counts: None,
        trajectories: traj,
    })
}

/// How the continuous filter weighs a segment.
#[derive(Clone, Debug, PartialEq)]
pub enum SegmentWeighting {
    /// Poisson estimates.
    Poisson,
    /// The exact conditional path-integral expectation given both segment
    /// endpoints; only available for driftless 1D Brownian motion with an
    /// affine intensity.
    ExactAffineBrownian,
}

/// Continuous-time random-weight filter. Observation factors for the arrival
/// at `t_{k-1}` multiply step `k`'s weight at the resampled particle; an
/// arrival exactly at the horizon multiplies the final weight.
pub fn run_continuous_pf(
    model: &CoxModel,
    obs: &ObservationSet,
    cfg: &EstimatorConfig,
    n: usize,
    key: StreamKey,
    opts: FilterOptions,
) -> Result<FilterOutput> {
    run_continuous_pf_with(model, obs, cfg, n, key, opts, SegmentWeighting::Poisson)
}

struct StepResult {
    w: f64,
    negative: bool,
    ratio: f64,
    lam: f64,
}

pub fn run_continuous_pf_with(
    model: &CoxModel,
    obs: &ObservationSet,
    cfg: &EstimatorConfig,
    n: usize,
    key: StreamKey,
    opts: FilterOptions,
    weighting: SegmentWeighting,
) -> Result<FilterOutput> {
    validate_run(model, obs, n)?;
    ensure(cfg.delta > 0.0 && cfg.delta.is_finite(), || format!("Δ must be positive, got {}", cfg.delta))?;
    let exact = match weighting {
        SegmentWeighting::Poisson => None,
        SegmentWeighting::ExactAffineBrownian => Some(exact_affine_params(model)?),
    };
    let grid = build_time_grid(obs, cfg.delta)?;
    let dim = model.dim();
    let m = grid.segments();
    let policy = cfg.policy;
    let prop = key.child(tags::PROPAGATE);
    let res = key.child(tags::RESAMPLE);

    let mut cur = sample_initial(model, n, &key);
    let mut lam_cur: Vec<f64> = cur.chunks(dim).map(|x| model.intensity.eval(x)).collect::<Result<_>>()?;
    let init = lipschitz_init(&model.intensity, &cur, dim)?;
    let seed = if init.fallback {
        model.intensity.lipschitz_hint().unwrap_or(init.value)
    } else {
        init.value
    };
    let mut tracker = LipschitzTracker::new(seed);

    let mut next = vec![0.0; n * dim];
    let mut scratch = Vec::with_capacity(n * dim);
    let mut lam_next = vec![0.0; n];
    let mut signs = vec![0u32; n];
    let mut signs_next = vec![0u32; n];
    let mut anc = Vec::with_capacity(n);
    let mut weights = vec![0.0; n];
    let mut log_lik = 0.0;
    let mut negatives = 0u64;
    let mut ess = Vec::with_capacity(m);
    let mut traj = opts.store_trajectories.then(|| Trajectories {
        dim,
        node_times: vec![0.0],
        states: vec![cur.clone()],
        parents: Vec::new(),
    });
    let mut pending_parents: Vec<u32> = (0..n as u32).collect();

    for k in 1..=m {
        let (s, t) = (grid.times[k - 1], grid.times[k]);
        let h = t - s;
        let eta = h * tracker.value;
        let poisson = if eta > 0.0 {
            Some(Poisson::new(eta).map_err(|e| Error::InvalidInput(format!("Poisson rate {eta}: {e}")))?)
        } else {
            None
        };
        let obs_prev = grid.obs_index[k - 1];
        let obs_end = if k == m { grid.obs_index[m] } else { None };
        let src = &cur;
        let lam_src = &lam_cur;
        let results = map_particles(&mut next, dim, |i, out| {
            let x = &src[i * dim..(i + 1) * dim];
            let lam0 = lam_src[i];
            let mut rng = prop.stream(k as u64, i as u64);
            let e = match exact {
                None => pe_into(&model.sde, &model.intensity, eta, poisson.as_ref(), s, t, x, lam0, out, &mut rng)?.0,
                Some((alpha, beta)) => {
                    model.sde.sample_transition_into(s, t, x, out, &mut rng)?;
                    bridge_path_integral_expectation(alpha, beta, s, t, x[0], out[0])
                }
            };
            if !e.is_finite() {
                return Err(Error::NonFiniteWeight {
                    step: k,
                    particle: i,
                    state: x.to_vec(),
                });
            }
            let lam1 = model.intensity.eval(out)?;
            let mut w = match policy {
                EstimatePolicy::Truncate => e.max(0.0),
                EstimatePolicy::AbsoluteWithSign => e.abs(),
            };
            if let Some(j) = obs_prev {
                w *= obs_factor(model, obs, j, x, lam0);
            }
            if let Some(j) = obs_end {
                w *= obs_factor(model, obs, j, out, lam1);
            }
            Ok(StepResult {
                w: check_weight(w, k, i, x)?,
                negative: e < 0.0,
                ratio: pair_ratio(lam0, lam1, x, out).unwrap_or(0.0),
                lam: lam1,
            })
        })?;
        let mut batch_max: f64 = 0.0;
        for (i, r) in results.iter().enumerate() {
            weights[i] = r.w;
            lam_next[i] = r.lam;
            signs_next[i] = signs[i] + u32::from(r.negative);
            negatives += u64::from(r.negative);
            batch_max = batch_max.max(r.ratio);
        }
        tracker.absorb(batch_max);
        std::mem::swap(&mut signs, &mut signs_next);
        if let Some(tr) = traj.as_mut() {
            tr.node_times.push(t);
            tr.states.push(next.clone());
            tr.parents.push(pending_parents.clone());
        }
        let total: f64 = weights.iter().sum();
        ess.push(ess_of(&weights));
        if !(total > 0.0) {
            return Ok(FilterOutput {
                log_likelihood: f64::NEG_INFINITY,
                grid: grid.times,
                ess,
                negatives,
                final_lipschitz: Some(tracker.value),
                degenerate_step: Some(k),
                policy: Some(policy),
                final_weights: weights,
                sign_counts: (policy == EstimatePolicy::AbsoluteWithSign).then_some(signs),
                trajectories: traj,
            });
        }
        log_lik += (total / n as f64).ln();
        if k < m {
            let u: f64 = res.stream(k as u64, 0).random();
            systematic_resample_with(&weights, u, &mut anc)?;
            gather(&next, dim, &anc, &mut scratch);
            std::mem::swap(&mut cur, &mut scratch);
            for (i, &a) in anc.iter().enumerate() {
                lam_cur[i] = lam_next[a];
                signs_next[i] = signs[a];
            }
            std::mem::swap(&mut signs, &mut signs_next);
            if traj.is_some() {
                pending_parents.clear();
                pending_parents.extend(anc.iter().map(|&a| a as u32));
            }
        }
    }
    Ok(FilterOutput {
        log_likelihood: log_lik,
        grid: grid.times,
        ess,
        negatives,
        final_lipschitz: Some(tracker.value),
        degenerate_step: None,
        policy: Some(policy),
        final_weights: weights,
        sign_counts: (policy == EstimatePolicy::AbsoluteWithSign).then_some(signs),
        trajectories: traj,
    })
}

fn exact_affine_params(model: &CoxModel) -> Result<(f64, f64)> {
    let ok_dyn = matches!(model.sde.dynamics(), Dynamics::Brownian { drift } if drift.len() == 1 && drift[0] == 0.0);
    match (&model.intensity, ok_dyn) {
        (Intensity::Affine { slope, intercept }, true) if slope.len() == 1 => Ok((slope[0], *intercept)),
        (Intensity::Constant { rate }, true) => Ok((0.0, *rate)),
        _ => Err(Error::Unsupported(
            "exact segment weights need driftless 1D Brownian motion with an affine intensity".into(),
        )),
    }
}

/// `L̂ · Σ W_m (-1)^{n_i} / Σ W_m` for a run made with the
/// absolute-value policy.
pub fn signed_likelihood_estimate(out: &FilterOutput) -> Result<f64> {
    let signs = out
        .sign_counts
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("run did not track estimate signs".into()))?;
    if out.degenerate_step.is_some() {
        return Ok(0.0);
    }
    let total: f64 = out.final_weights.iter().sum();
    let signed: f64 = out
        .final_weights
        .iter()
        .zip(signs)
        .map(|(w, &s)| if s % 2 == 0 { *w } else { -*w })
        .sum();
    Ok(out.likelihood() * signed / total)
}

/// Weighted mean and standard deviation of one coordinate at every stored
/// node, over final trajectories weighted by the last step's weights.
pub fn filtered_moments(out: &FilterOutput, coordinate: usize) -> Result<Vec<(f64, f64)>> {
    let tr = out
        .trajectories
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("run did not store trajectories".into()))?;
    ensure(coordinate < tr.dim, || format!("coordinate {coordinate} out of range"))?;
    let w = &out.final_weights;
    let total: f64 = w.iter().sum();
    ensure(total > 0.0, || "final weights are all zero".into())?;
    let nodes = tr.states.len();
    let mut sum = vec![0.0; nodes];
    let mut sum2 = vec![0.0; nodes];
    for (i, &wi) in w.iter().enumerate() {
        if wi == 0.0 {
            continue;
        }
        let path = tr.trace(i);
        for k in 0..nodes {
            let v = path[k * tr.dim + coordinate];
            sum[k] += wi * v;
            sum2[k] += wi * v * v;
        }
    }
    Ok(sum
        .iter()
        .zip(&sum2)
        .map(|(s, s2)| {
            let mean = s / total;
            (mean, (s2 / total - mean * mean).max(0.0).sqrt())
        })
        .collect())
}

/// JSON-friendly summary of a run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FilterReport {
    pub log_likelihood: f64,
    pub negatives: u64,
    pub final_lipschitz: Option<f64>,
    pub degenerate_step: Option<usize>,
    pub signed_likelihood: Option<f64>,
    pub ess: Vec<f64>,
    pub node_times: Vec<f64>,
    /// Per coordinate, per node `(mean, sd)`.
    pub moments: Vec<Vec<(f64, f64)>>,
}

impl FilterReport {
    pub fn from_output(out: &FilterOutput) -> Result<Self> {
        let (node_times, moments) = match &out.trajectories {
            Some(tr) if out.degenerate_step.is_none() => (
                tr.node_times.clone(),
                (0..tr.dim).map(|c| filtered_moments(out, c)).collect::<Result<_>>()?,
            ),
            _ => (Vec::new(), Vec::new()),
        };
        Ok(Self {
            log_likelihood: out.log_likelihood,
            negatives: out.negatives,
            final_lipschitz: out.final_lipschitz,
            degenerate_step: out.degenerate_step,
            signed_likelihood: out.sign_counts.as_ref().and_then(|_| signed_likelihood_estimate(out).ok()),
            ess: out.ess.clone(),
            node_times,
            moments,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_examples() {
        let none = ObservationSet::empty(1.0, 0).unwrap();
        assert_eq!(build_time_grid(&none, 0.25).unwrap().times, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let one = ObservationSet::new(vec![0.3], vec![], 0, 1.0).unwrap();
        let g = build_time_grid(&one, 0.25).unwrap();
        let want = [0.0, 0.25, 0.3, 0.55, 0.8, 1.0];
        assert_eq!(g.times.len(), want.len());
        for (a, b) in g.times.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(g.obs_index[2], Some(0));
        let tie = ObservationSet::new(vec![0.25], vec![], 0, 1.0).unwrap();
        let g = build_time_grid(&tie, 0.25).unwrap();
        assert_eq!(g.times, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.obs_index[1], Some(0));
    }

    #[test]
    fn duplicate_times_rejected() {
        assert!(ObservationSet::new(vec![0.3, 0.3], vec![], 0, 1.0).is_err());
    }

    #[test]
    fn resample_basics() {
        let mut out = Vec::new();
        systematic_resample_with(&[1.0; 5], 0.3, &mut out).unwrap();
        assert_eq!(out, vec![0, 1, 2, 3, 4]);
        systematic_resample_with(&[0.0, 0.0, 2.0, 0.0], 0.9, &mut out).unwrap();
        assert_eq!(out, vec![2, 2, 2, 2]);
        assert!(matches!(systematic_resample_with(&[0.0; 3], 0.5, &mut out), Err(Error::ZeroWeights)));
    }
}
