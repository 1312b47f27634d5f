//! TOML configuration. Units: time in seconds, positions in μm, rates in
//! arrivals per second. See `configs/` for annotated examples.

use std::path::Path;
use std::sync::Arc;

use coxfilter::calibration::{Adaptation, Method};
use coxfilter::datagen::ThinningMode;
use coxfilter::estimator::EstimatePolicy;
use coxfilter::filters::ObservationSet;
use coxfilter::observation::{BornWolf, BornWolfParams, Intensity, MarkModel, PsfCacheConfig};
use coxfilter::oracles::{likelihood_no_obs, likelihood_two_obs};
use coxfilter::sde::LinearSdeSpec;
use coxfilter::{CoxModel, InitialLaw};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub model: Option<ModelConfig>,
    pub simulate: Option<SimulateConfig>,
    pub filter: Option<FilterConfig>,
    pub bench: Option<BenchConfig>,
    pub pmmh: Option<PmmhSection>,
    pub bounds: Option<BoundsConfig>,
}

impl Config {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::config(e.to_string()))
    }

    pub fn model(&self) -> CliResult<&ModelConfig> {
        require(&self.model, "model")
    }
}

pub fn require<'a, T>(section: &'a Option<T>, name: &str) -> CliResult<&'a T> {
    section.as_ref().ok_or_else(|| CliError::config(format!("missing [{name}] section")))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_model_name")]
    pub name: String,
    pub dynamics: DynamicsConfig,
    pub initial: InitialConfig,
    pub intensity: Intensity,
    #[serde(default)]
    pub marks: MarksConfig,
}

fn default_model_name() -> String {
    "custom".into()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DynamicsConfig {
    /// Standard Brownian motion, optionally with constant drift.
    Brownian {
        dim: usize,
        #[serde(default)]
        drift: Option<Vec<f64>>,
    },
    /// `dX = φ(μ - X) dt + dW`, per coordinate.
    OrnsteinUhlenbeck { phi: Vec<f64>, mu: Vec<f64> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialConfig {
    Point { x: Vec<f64> },
    /// Stationary law of the OU dynamics.
    Stationary,
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MarksConfig {
    #[default]
    None,
    Gaussian {
        sigma: f64,
    },
    BornWolf {
        #[serde(default)]
        optics: BornWolfParams,
        /// Interpolate the PSF from a precomputed grid.
        #[serde(default = "yes")]
        cached: bool,
        #[serde(default)]
        grid: PsfCacheConfig,
    },
}

fn yes() -> bool {
    true
}

impl ModelConfig {
    fn sde(&self) -> coxfilter::Result<LinearSdeSpec> {
        match &self.dynamics {
            DynamicsConfig::Brownian { dim, drift: None } => Ok(LinearSdeSpec::brownian(*dim)),
            DynamicsConfig::Brownian { dim, drift: Some(b) } => {
                if b.len() != *dim {
                    return Err(coxfilter::Error::InvalidInput(format!("drift has length {}, dim is {dim}", b.len())));
                }
                LinearSdeSpec::brownian_with_drift(b.clone())
            }
            DynamicsConfig::OrnsteinUhlenbeck { phi, mu } => LinearSdeSpec::ornstein_uhlenbeck(phi.clone(), mu.clone()),
        }
    }

    fn born_wolf(&self) -> coxfilter::Result<Option<Arc<BornWolf>>> {
        match &self.marks {
            MarksConfig::BornWolf { optics, cached, grid } => {
                let cache = cached.then(|| grid.clone());
                Ok(Some(Arc::new(BornWolf::with_cache(optics.clone(), cache)?)))
            }
            _ => Ok(None),
        }
    }

    fn build_with(&self, bw: Option<&Arc<BornWolf>>) -> coxfilter::Result<CoxModel> {
        let sde = self.sde()?;
        let init = match &self.initial {
            InitialConfig::Point { x } => InitialLaw::point(x.clone()),
            InitialConfig::Stationary => InitialLaw::stationary(&sde)?,
            InitialConfig::Gaussian { mean, cov } => {
                let n = mean.len();
                if cov.len() != n || cov.iter().any(|r| r.len() != n) {
                    return Err(coxfilter::Error::InvalidInput("initial covariance has the wrong shape".into()));
                }
                InitialLaw::gaussian(mean.clone(), &DMatrix::from_fn(n, n, |i, j| cov[i][j]))?
            }
        };
        let marks = match (&self.marks, bw) {
            (MarksConfig::None, _) => MarkModel::None,
            (MarksConfig::Gaussian { sigma }, _) => MarkModel::Gaussian { sigma: *sigma },
            (MarksConfig::BornWolf { .. }, Some(bw)) => MarkModel::BornWolf(bw.clone()),
            (MarksConfig::BornWolf { .. }, None) => unreachable!("Born–Wolf optics are built with the factory"),
        };
        CoxModel::new(sde, init, self.intensity.clone(), marks)
    }

    /// Sets the parameter called `name` (`phi.2`, `mu.2`, `drift.0`,
    /// `intensity.lambda0`, `intensity.depth`, `intensity.intercept`,
    /// `intensity.slope.0`, `intensity.rate`, `marks.sigma`).
    pub fn set(&mut self, name: &str, value: f64) -> Result<(), String> {
        let (head, index) = match name.rsplit_once('.') {
            Some((h, i)) if i.parse::<usize>().is_ok() => (h, i.parse::<usize>().ok()),
            _ => (name, None),
        };
        let unknown = || format!("unknown or inapplicable parameter `{name}`");
        let slot: Option<&mut f64> = match (head, index) {
            ("phi", Some(i)) => match &mut self.dynamics {
                DynamicsConfig::OrnsteinUhlenbeck { phi, .. } => phi.get_mut(i),
                _ => None,
            },
            ("mu", Some(i)) => match &mut self.dynamics {
                DynamicsConfig::OrnsteinUhlenbeck { mu, .. } => mu.get_mut(i),
                _ => None,
            },
            ("drift", Some(i)) => match &mut self.dynamics {
                DynamicsConfig::Brownian { drift: Some(b), .. } => b.get_mut(i),
                _ => None,
            },
            ("intensity.slope", Some(i)) => match &mut self.intensity {
                Intensity::Affine { slope, .. } => slope.get_mut(i),
                _ => None,
            },
            ("intensity.intercept", None) => match &mut self.intensity {
                Intensity::Affine { intercept, .. } => Some(intercept),
                _ => None,
            },
            ("intensity.lambda0", None) => match &mut self.intensity {
                Intensity::ExponentialDepth { lambda0, .. } => Some(lambda0),
                _ => None,
            },
            ("intensity.depth", None) => match &mut self.intensity {
                Intensity::ExponentialDepth { depth, .. } => Some(depth),
                _ => None,
            },
            ("intensity.rate", None) => match &mut self.intensity {
                Intensity::Constant { rate } => Some(rate),
                _ => None,
            },
            ("marks.sigma", None) => match &mut self.marks {
                MarksConfig::Gaussian { sigma } => Some(sigma),
                _ => None,
            },
            _ => None,
        };
        *slot.ok_or_else(unknown)? = value;
        Ok(())
    }

    /// Default dominating rate for thinning: λ0 for the depth profile (its
    /// value at the surface), the rate itself for a constant intensity.
    pub fn default_lambda_max(&self) -> Option<f64> {
        match &self.intensity {
            Intensity::ExponentialDepth { lambda0, .. } => Some(*lambda0),
            Intensity::Constant { rate } => Some(*rate),
            Intensity::Affine { .. } => None,
        }
    }

    fn is_benchmark(&self) -> bool {
        let still = match &self.dynamics {
            DynamicsConfig::Brownian { dim: 1, drift } => drift.as_ref().is_none_or(|b| b.iter().all(|v| *v == 0.0)),
            _ => false,
        };
        let origin = matches!(&self.initial, InitialConfig::Point { x } if x.as_slice() == [0.0]);
        let affine = self.intensity
            == Intensity::Affine {
                slope: vec![1.0],
                intercept: 10.0,
            };
        still && origin && affine
    }

    /// Closed-form log-likelihood, available for the 1D Brownian benchmark
    /// with no arrivals or with two Gaussian-marked arrivals.
    pub fn exact_log_likelihood(&self, obs: &ObservationSet) -> coxfilter::Result<f64> {
        if !self.is_benchmark() {
            return Err(coxfilter::Error::Unsupported(
                "no closed-form likelihood: model is not the 1D Brownian benchmark (x0 = 0, λ(x) = x + 10)".into(),
            ));
        }
        let t = obs.times();
        match (t.len(), &self.marks) {
            (0, _) => Ok(likelihood_no_obs(obs.horizon()).ln()),
            (2, MarksConfig::Gaussian { sigma }) => {
                Ok(likelihood_two_obs(t[0], t[1], obs.mark(0)[0], obs.mark(1)[0], obs.horizon(), *sigma)?.ln())
            }
            (k, _) => Err(coxfilter::Error::Unsupported(format!(
                "no closed-form likelihood for {k} arrivals with these marks"
            ))),
        }
    }
}

/// Builds models from a config, sharing expensive pieces (the PSF cache)
/// across parameter changes.
pub struct ModelFactory {
    pub config: ModelConfig,
    bw: Option<Arc<BornWolf>>,
}

impl ModelFactory {
    pub fn new(config: &ModelConfig) -> CliResult<Self> {
        let bw = config.born_wolf()?;
        let f = Self {
            config: config.clone(),
            bw,
        };
        f.build().map_err(|e| CliError::config(format!("model: {e}")))?;
        Ok(f)
    }

    pub fn build(&self) -> coxfilter::Result<CoxModel> {
        self.config.build_with(self.bw.as_ref())
    }

    pub fn config_with(&self, names: &[String], theta: &[f64]) -> coxfilter::Result<ModelConfig> {
        let mut c = self.config.clone();
        for (n, v) in names.iter().zip(theta) {
            c.set(n, *v).map_err(coxfilter::Error::InvalidInput)?;
        }
        Ok(c)
    }

    pub fn build_params(&self, names: &[String], theta: &[f64]) -> coxfilter::Result<CoxModel> {
        self.config_with(names, theta)?.build_with(self.bw.as_ref())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub horizon: f64,
    /// Dominating rate; defaults to the model's surface rate.
    pub lambda_max: Option<f64>,
    #[serde(default)]
    pub mode: ThinningMode,
    #[serde(default = "default_dataset")]
    pub output: String,
}

fn default_dataset() -> String {
    "dataset.csv".into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Discretised,
    Continuous,
    ExactOracle,
}

impl BackendKind {
    pub fn name(self) -> &'static str {
        match self {
            BackendKind::Discretised => "discretised",
            BackendKind::Continuous => "continuous",
            BackendKind::ExactOracle => "exact_oracle",
        }
    }
}

/// Continuous-filter estimator settings shared by `[filter]` and `[pmmh]`.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSettings {
    #[serde(default = "default_policy")]
    pub policy: EstimatePolicy,
    /// Negative-estimate budget used when Δ is chosen automatically.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_d")]
    pub d: f64,
    /// Lipschitz constant of the intensity; defaults to the analytic one.
    pub lipschitz: Option<f64>,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            policy: default_policy(),
            epsilon: default_epsilon(),
            d: default_d(),
            lipschitz: None,
        }
    }
}

fn default_policy() -> EstimatePolicy {
    EstimatePolicy::Truncate
}

fn default_epsilon() -> f64 {
    1e-6
}

fn default_d() -> f64 {
    3.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub backend: BackendKind,
    pub particles: usize,
    /// Grid step. Required for the discretised filter; the continuous filter
    /// picks one from the negative-estimate budget when it is absent.
    pub delta: Option<f64>,
    #[serde(default)]
    pub estimator: EstimatorSettings,
    #[serde(default)]
    pub trajectories: bool,
    #[serde(default = "one")]
    pub replicates: usize,
    #[serde(default = "default_filter_output")]
    pub output: String,
}

fn one() -> usize {
    1
}

fn default_filter_output() -> String {
    "filter.json".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default = "both_methods")]
    pub methods: Vec<Method>,
    pub deltas: Vec<f64>,
    /// Fixed particle counts; every `(Δ, N)` pair is a cell.
    pub particles: Option<Vec<usize>>,
    /// CPU budgets in particle-steps; `N = C / segments(Δ)` per cell.
    pub budgets: Option<Vec<f64>>,
    pub replicates: usize,
    /// Inline observations, used when no dataset is given.
    pub horizon: Option<f64>,
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default)]
    pub marks: Vec<f64>,
}

fn both_methods() -> Vec<Method> {
    vec![Method::Discretised, Method::Continuous]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    pub name: String,
    /// Uniform prior bounds.
    pub lower: f64,
    pub upper: f64,
    pub initial: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PmmhSection {
    pub parameters: Vec<ParamSpec>,
    pub iterations: usize,
    pub burn_in: usize,
    #[serde(default)]
    pub adaptation: Adaptation,
    /// Initial proposal covariance is this times the identity.
    #[serde(default = "default_cov_scale")]
    pub initial_cov_scale: f64,
    pub backend: BackendKind,
    #[serde(default)]
    pub particles: usize,
    /// Grid step; defaults to the horizon, i.e. the observation-spaced grid.
    pub delta: Option<f64>,
    #[serde(default)]
    pub estimator: EstimatorSettings,
}

fn default_cov_scale() -> f64 {
    0.1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsConfig {
    pub deltas: Vec<f64>,
    pub l: f64,
    /// `η = s · Δ^power · l` for each scale `s`; `inf` gives the limit rows.
    pub eta_scales: Vec<f64>,
    pub eta_power: f64,
    /// Endpoint gap is `gap_scale · √Δ`.
    pub gap_scale: f64,
    pub horizon: f64,
    pub particles: usize,
    pub d: f64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            deltas: vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0],
            l: 1.0,
            eta_scales: vec![1.0],
            eta_power: 1.0,
            gap_scale: 1.0,
            horizon: 1.0,
            particles: 10_000,
            d: 3.0,
        }
    }
}
