//! Particle marginal Metropolis–Hastings with adaptive random-walk
//! proposals, effective sample size, and the rMSE-versus-Δ model fits.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::estimator::EstimatorConfig;
use crate::filters::{run_continuous_pf, run_discretised_pf, FilterOptions, ObservationSet};
use crate::model::CoxModel;
use crate::rng::{tags, StreamKey};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adaptation {
    Off,
    /// Adapt at every iteration once the warm-up is over.
    #[default]
    Continuous,
    /// Adapt during burn-in only, then freeze the proposal.
    BurnInOnly,
}

pub const ADAPT_WARMUP: usize = 100;
pub const ADAPT_EPSILON: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct PmmhConfig {
    pub names: Vec<String>,
    /// Uniform prior bounds.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub initial: Vec<f64>,
    pub initial_cov: DMatrix<f64>,
    pub iterations: usize,
    pub burn_in: usize,
    pub adaptation: Adaptation,
}

impl PmmhConfig {
    /// Uniform priors on `[lower, upper]` with initial covariance `0.1 I`.
    pub fn new(names: Vec<String>, lower: Vec<f64>, upper: Vec<f64>, initial: Vec<f64>, iterations: usize, burn_in: usize) -> Self {
        let d = names.len();
        Self {
            names,
            lower,
            upper,
            initial,
            initial_cov: DMatrix::identity(d, d) * 0.1,
            iterations,
            burn_in,
            adaptation: Adaptation::Continuous,
        }
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        ensure(d >= 1, || "need at least one parameter".into())?;
        ensure(self.lower.len() == d && self.upper.len() == d && self.initial.len() == d, || {
            "bounds and initial value must match the parameter count".into()
        })?;
        for i in 0..d {
            ensure(self.lower[i].is_finite() && self.upper[i].is_finite() && self.lower[i] < self.upper[i], || {
                format!("bad bounds for {}", self.names[i])
            })?;
        }
        ensure(self.in_support(&self.initial), || "initial value outside the prior support".into())?;
        ensure(self.initial_cov.nrows() == d && self.initial_cov.ncols() == d, || {
            "initial covariance has the wrong shape".into()
        })?;
        ensure(self.iterations > self.burn_in, || "iterations must exceed burn-in".into())
    }

    pub fn in_support(&self, theta: &[f64]) -> bool {
        theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(t, (lo, hi))| *t >= *lo && *t <= *hi)
    }
}

pub type LogLikelihoodFn<'a> = dyn Fn(&[f64]) -> Result<f64> + Sync + 'a;

/// Where a chain gets its log-likelihood estimates from.
pub enum Backend<'a> {
    Discretised { delta: f64, n: usize },
    Continuous { cfg: EstimatorConfig, n: usize },
    /// Exact (or externally computed) log-likelihood.
    ExactOracle(&'a LogLikelihoodFn<'a>),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub names: Vec<String>,
    pub params: Vec<Vec<f64>>,
    pub log_lik: Vec<f64>,
    pub accepted: Vec<bool>,
    /// Proposal covariance (row-major) used at each iteration.
    pub proposal_cov: Vec<Vec<f64>>,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.accepted.iter().filter(|a| **a).count() as f64 / self.accepted.len().max(1) as f64
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.params.iter().map(|p| p[j]).collect()
    }
}

/// Running mean and covariance of the chain states.
#[derive(Clone, Debug)]
struct Welford {
    n: usize,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl Welford {
    fn new(d: usize) -> Self {
        Self {
            n: 0,
            mean: DVector::zeros(d),
            m2: DMatrix::zeros(d, d),
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let x = DVector::from_column_slice(x);
        let delta = &x - &self.mean;
        self.mean += &delta / self.n as f64;
        let delta2 = &x - &self.mean;
        self.m2 += &delta * delta2.transpose();
    }

    fn cov(&self) -> DMatrix<f64> {
        &self.m2 / (self.n.max(2) - 1) as f64
    }
}

/// `s_d (Cov(draws) + ε I)` with `s_d = 2.38² / dim`.
pub fn haario_covariance(draws: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    ensure(draws.len() >= 2, || "need at least two draws".into())?;
    let d = draws[0].len();
    let mut w = Welford::new(d);
    for x in draws {
        w.push(x);
    }
    Ok(scaled(&w.cov(), d))
}

fn scaled(cov: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let sd = 2.38 * 2.38 / d as f64;
    let sym = (cov + cov.transpose()) * 0.5;
    (sym + DMatrix::identity(d, d) * ADAPT_EPSILON) * sd
}

/// Proposal covariance after `draws`: the initial covariance until
/// [`ADAPT_WARMUP`] draws exist, the Haario covariance afterwards.
pub fn adapt_proposal_covariance(draws: &[Vec<f64>], initial: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if draws.len() < ADAPT_WARMUP {
        Ok(initial.clone())
    } else {
        haario_covariance(draws)
    }
}

fn chol_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    cov.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::InvalidInput("proposal covariance is not positive definite".into()))
}

/// Runs PMMH. `build` maps a parameter vector to a model; the stored
/// estimate of the current state is reused until a proposal is accepted.
pub fn pmmh_run(
    cfg: &PmmhConfig,
    data: &ObservationSet,
    build: &(dyn Fn(&[f64]) -> Result<CoxModel> + Sync),
    backend: &Backend<'_>,
    key: StreamKey,
) -> Result<Chain> {
    cfg.validate()?;
    let d = cfg.dim();
    let lik_key = key.child(tags::LIKELIHOOD);
    let estimate = |theta: &[f64], iteration: usize| -> Result<f64> {
        let run = || -> Result<f64> {
            match backend {
                Backend::ExactOracle(f) => f(theta),
                Backend::Discretised { delta, n } => {
                    let model = build(theta)?;
                    Ok(run_discretised_pf(&model, data, *delta, *n, lik_key.child(iteration as u64), FilterOptions::default())?.log_likelihood)
                }
                Backend::Continuous { cfg, n } => {
                    let model = build(theta)?;
                    Ok(run_continuous_pf(&model, data, cfg, *n, lik_key.child(iteration as u64), FilterOptions::default())?.log_likelihood)
                }
            }
        };
        run().map_err(|e| Error::Backend {
            iteration,
            source: Box::new(e),
        })
    };
    let prop_key = key.child(tags::PROPOSAL);
    let acc_key = key.child(tags::ACCEPT);

    let mut theta = cfg.initial.clone();
    let mut ll = estimate(&theta, 0)?;
    let mut stats = Welford::new(d);
    stats.push(&theta);
    let mut cov = cfg.initial_cov.clone();
    let mut chol = chol_factor(&cov)?;
    let mut chain = Chain {
        names: cfg.names.clone(),
        params: Vec::with_capacity(cfg.iterations),
        log_lik: Vec::with_capacity(cfg.iterations),
        accepted: Vec::with_capacity(cfg.iterations),
        proposal_cov: Vec::with_capacity(cfg.iterations),
    };
    for it in 1..=cfg.iterations {
        let adapt_now = match cfg.adaptation {
            Adaptation::Off => false,
            Adaptation::Continuous => true,
            Adaptation::BurnInOnly => it <= cfg.burn_in,
        };
        if adapt_now && stats.n >= ADAPT_WARMUP {
            cov = scaled(&stats.cov(), d);
            chol = chol_factor(&cov)?;
        }
        let mut rng = prop_key.stream(it as u64, 0);
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let step = &chol * z;
        let proposal: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let mut accepted = false;
        if cfg.in_support(&proposal) {
            let ll_new = estimate(&proposal, it)?;
            let log_u = acc_key.stream(it as u64, 0).random::<f64>().ln();
            let accept = if ll_new == f64::NEG_INFINITY || ll_new.is_nan() {
                false
            } else if ll == f64::NEG_INFINITY {
                true
            } else {
                log_u < ll_new - ll
            };
            if accept {
                theta = proposal;
                ll = ll_new;
                accepted = true;
            }
        }
        stats.push(&theta);
        chain.params.push(theta.clone());
        chain.log_lik.push(ll);
        chain.accepted.push(accepted);
        chain.proposal_cov.push(cov.transpose().iter().copied().collect());
    }
    Ok(chain)
}

/// Effective sample size with initial-positive-sequence truncation of the
/// paired autocorrelations. Returns `+inf` if the truncated sum leaves a
/// non-positive denominator (strongly anticorrelated series).
pub fn ess(series: &[f64]) -> Result<f64> {
    let m = series.len();
    ensure(m >= 10, || format!("need at least 10 values, got {m}"))?;
    ensure(series.iter().all(|v| v.is_finite()), || "series must be finite".into())?;
    let mean = series.iter().sum::<f64>() / m as f64;
    let c: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let gamma = |t: usize| -> f64 { c[..m - t].iter().zip(&c[t..]).map(|(a, b)| a * b).sum::<f64>() / m as f64 };
    let g0 = gamma(0);
    if g0 <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let mut sum = 0.0;
    let mut k = 0;
    while 2 * k + 1 < m {
        let pair = (gamma(2 * k) + gamma(2 * k + 1)) / g0;
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        k += 1;
    }
    let denom = -1.0 + 2.0 * sum;
    Ok(if denom > 0.0 { m as f64 / denom } else { f64::INFINITY })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainSummary {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub ess: Vec<Option<f64>>,
    pub acceptance_rate: f64,
    pub kept: usize,
}

/// Posterior means, SDs and ESS per parameter after discarding `burn_in`.
pub fn summarize(chain: &Chain, burn_in: usize) -> ChainSummary {
    let kept = &chain.params[burn_in.min(chain.len())..];
    let d = chain.names.len();
    let mut mean = vec![0.0; d];
    let mut sd = vec![0.0; d];
    let mut e = vec![None; d];
    for j in 0..d {
        let col: Vec<f64> = kept.iter().map(|p| p[j]).collect();
        let n = col.len().max(1) as f64;
        mean[j] = col.iter().sum::<f64>() / n;
        sd[j] = (col.iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
        e[j] = ess(&col).ok();
    }
    ChainSummary {
        names: chain.names.clone(),
        mean,
        sd,
        ess: e,
        acceptance_rate: chain.acceptance_rate(),
        kept: kept.len(),
    }
}

/// Columnar text: `iteration,<params…>,log_lik,accepted`.
pub fn format_chain(chain: &Chain) -> String {
    let mut s = String::new();
    writeln!(s, "iteration,{},log_lik,accepted", chain.names.join(",")).unwrap();
    for (i, p) in chain.params.iter().enumerate() {
        write!(s, "{}", i + 1).unwrap();
        for v in p {
            write!(s, ",{v:.16e}").unwrap();
        }
        writeln!(s, ",{:.16e},{}", chain.log_lik[i], u8::from(chain.accepted[i])).unwrap();
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RmseModel {
    /// `c1/(CΔ) + c2 Δ²`.
    Discretised,
    /// `c1/(CΔ) + c2 exp(-1/(2Δ))`.
    Poisson,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmseFit {
    pub c1: f64,
    pub c2: f64,
    /// Step size from the closed-form rule: `(c1/(c2 C))^{1/3}` for the
    /// discretised model, `(2 ln(c2 C/(2 c1)))^{-1}` for the Poisson one.
    pub delta_star: f64,
    /// Exact minimiser of the fitted curve.
    pub delta_min: f64,
}

impl RmseFit {
    pub fn eval(&self, model: RmseModel, budget: f64, delta: f64) -> f64 {
        self.c1 / (budget * delta) + self.c2 * basis(model, delta)
    }
}

fn basis(model: RmseModel, delta: f64) -> f64 {
    match model {
        RmseModel::Discretised => delta * delta,
        RmseModel::Poisson => (-1.0 / (2.0 * delta)).exp(),
    }
}

/// Least-squares fit of the rMSE model to `(Δ, rMSE)` points at budget `C`.
pub fn fit_rmse_model(points: &[(f64, f64)], budget: f64, model: RmseModel) -> Result<RmseFit> {
    ensure(points.len() >= 4, || format!("need at least 4 points, got {}", points.len()))?;
    ensure(budget > 0.0, || "budget must be positive".into())?;
    let (mut s11, mut s12, mut s22, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(delta, y) in points {
        ensure(delta > 0.0 && y.is_finite(), || format!("bad point ({delta}, {y})"))?;
        let f1 = 1.0 / (budget * delta);
        let f2 = basis(model, delta);
        s11 += f1 * f1;
        s12 += f1 * f2;
        s22 += f2 * f2;
        r1 += f1 * y;
        r2 += f2 * y;
    }
    let det = s11 * s22 - s12 * s12;
    ensure(det.abs() > 1e-300, || "degenerate design".into())?;
    let c1 = (s22 * r1 - s12 * r2) / det;
    let c2 = (s11 * r2 - s12 * r1) / det;
    if !(c1 > 0.0 && c2 > 0.0) {
        return Err(Error::Fit(format!("non-positive coefficients c1 = {c1:e}, c2 = {c2:e}")));
    }
    let (delta_star, delta_min) = match model {
        RmseModel::Discretised => ((c1 / (c2 * budget)).cbrt(), (c1 / (2.0 * c2 * budget)).cbrt()),
        RmseModel::Poisson => {
            let arg = c2 * budget / (2.0 * c1);
            if arg <= 1.0 {
                return Err(Error::Fit(format!("c2 C / (2 c1) = {arg} ≤ 1, no interior minimum")));
            }
            let d = 1.0 / (2.0 * arg.ln());
            (d, d)
        }
    };
    Ok(RmseFit {
        c1,
        c2,
        delta_star,
        delta_min,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Discretised,
    Continuous,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Discretised => "discretised",
            Method::Continuous => "continuous",
        }
    }
}

/// Relative MSE of one `(method, Δ, N)` cell against a known likelihood.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmseCell {
    pub method: Method,
    pub delta: f64,
    pub n: usize,
    /// Particle-steps per run, `N` times the number of grid segments.
    pub cost: f64,
    pub replicates: usize,
    pub rmse: f64,
    pub rmse_se: f64,
    /// Mean wall time per run.
    pub seconds: f64,
}

/// Runs `replicates` independent filters and measures
/// `mean((L̂/L - 1)²)` against `truth`.
#[allow(clippy::too_many_arguments)]
pub fn rmse_cell(
    method: Method,
    model: &CoxModel,
    obs: &ObservationSet,
    delta: f64,
    n: usize,
    replicates: usize,
    truth: f64,
    key: StreamKey,
) -> Result<RmseCell> {
    ensure(replicates >= 2, || "need at least two replicates".into())?;
    ensure(truth > 0.0 && truth.is_finite(), || format!("reference likelihood must be positive, got {truth}"))?;
    let cfg = EstimatorConfig::new(delta);
    let start = std::time::Instant::now();
    let mut errs = Vec::with_capacity(replicates);
    let mut segments = 0;
    for r in 0..replicates {
        let out = match method {
            Method::Discretised => run_discretised_pf(model, obs, delta, n, key.child(r as u64), FilterOptions::default())?,
            Method::Continuous => run_continuous_pf(model, obs, &cfg, n, key.child(r as u64), FilterOptions::default())?,
        };
        segments = out.grid.len() - 1;
        errs.push((out.likelihood() / truth - 1.0).powi(2));
    }
    let seconds = start.elapsed().as_secs_f64() / replicates as f64;
    let (rmse, se) = crate::special::mean_se(&errs);
    Ok(RmseCell {
        method,
        delta,
        n,
        cost: (n * segments) as f64,
        replicates,
        rmse,
        rmse_se: se,
        seconds,
    })
}
