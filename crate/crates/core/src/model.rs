//! A complete Cox-process model: latent SDE, initial law, intensity and marks.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure, Result};
use crate::observation::{Intensity, MarkModel};
use crate::sde::{sym_sqrt, LinearSdeSpec};

#[derive(Clone, Debug)]
pub enum InitialLaw {
    Point(Vec<f64>),
    Gaussian { mean: Vec<f64>, root: DMatrix<f64> },
}

impl InitialLaw {
    pub fn point(x: Vec<f64>) -> Self {
        InitialLaw::Point(x)
    }

    pub fn gaussian(mean: Vec<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        ensure(cov.nrows() == mean.len() && cov.ncols() == mean.len(), || {
            "initial covariance has the wrong shape".into()
        })?;
        Ok(InitialLaw::Gaussian {
            root: sym_sqrt(cov)?,
            mean,
        })
    }

    /// The stationary law of an OU process.
    pub fn stationary(sde: &LinearSdeSpec) -> Result<Self> {
        let law = sde.stationary_moments()?;
        Self::gaussian(law.mean.iter().copied().collect(), &law.cov)
    }

    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Point(x) => x.len(),
            InitialLaw::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn is_point(&self) -> bool {
        matches!(self, InitialLaw::Point(_))
    }

    pub fn mean(&self) -> &[f64] {
        match self {
            InitialLaw::Point(x) => x,
            InitialLaw::Gaussian { mean, .. } => mean,
        }
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, out: &mut [f64], rng: &mut R) {
        match self {
            InitialLaw::Point(x) => out.copy_from_slice(x),
            InitialLaw::Gaussian { mean, root } => {
                let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
                let dx = root * z;
                for i in 0..mean.len() {
                    out[i] = mean[i] + dx[i];
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct CoxModel {
    pub sde: LinearSdeSpec,
    pub init: InitialLaw,
    pub intensity: Intensity,
    pub marks: MarkModel,
}

impl CoxModel {
    pub fn new(sde: LinearSdeSpec, init: InitialLaw, intensity: Intensity, marks: MarkModel) -> Result<Self> {
        let n = sde.dim();
        ensure(init.dim() == n, || format!("initial law has dimension {}, SDE has {n}", init.dim()))?;
        intensity.validate(n)?;
        marks.validate(n)?;
        Ok(Self {
            sde,
            init,
            intensity,
            marks,
        })
    }

    pub fn dim(&self) -> usize {
        self.sde.dim()
    }

    /// The 1D benchmark: Brownian motion from `x0 = 0`, `λ(x) = x + 10`,
    /// Gaussian marks with standard deviation `sigma_y`.
    pub fn brownian_benchmark(sigma_y: f64) -> Result<Self> {
        Self::new(
            LinearSdeSpec::brownian(1),
            InitialLaw::point(vec![0.0]),
            Intensity::Affine {
                slope: vec![1.0],
                intercept: 10.0,
            },
            MarkModel::Gaussian { sigma: sigma_y },
        )
    }
}
