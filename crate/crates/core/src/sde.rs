//! Linear Gaussian diffusions `dX = (b0 + b1(t) X) dt + σ(t) dW` and their
//! exact transition and bridge laws.
//!
//! Brownian motion (optionally with constant drift) and the diagonal
//! Ornstein–Uhlenbeck process have closed forms and a per-coordinate fast
//! path. The generic case integrates the moment ODEs with fixed-step RK4.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure, Error, Result};

pub type MatrixFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

/// Eigenvalues below this (after symmetrisation) are treated as genuine
/// indefiniteness rather than round-off.
pub const PSD_TOLERANCE: f64 = 1e-10;

#[derive(Clone)]
pub enum Dynamics {
    /// `dX = drift dt + dW`.
    Brownian { drift: Vec<f64> },
    /// Independent coordinates, `dX_i = -φ_i (X_i - μ_i) dt + dW_i`.
    OrnsteinUhlenbeck { phi: Vec<f64>, mu: Vec<f64> },
    Generic {
        b0: DVector<f64>,
        b1: MatrixFn,
        sigma: MatrixFn,
        steps_per_unit: usize,
    },
}

impl fmt::Debug for Dynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dynamics::Brownian { drift } => f.debug_struct("Brownian").field("drift", drift).finish(),
            Dynamics::OrnsteinUhlenbeck { phi, mu } => f
                .debug_struct("OrnsteinUhlenbeck")
                .field("phi", phi)
                .field("mu", mu)
                .finish(),
            Dynamics::Generic { b0, steps_per_unit, .. } => f
                .debug_struct("Generic")
                .field("b0", b0)
                .field("steps_per_unit", steps_per_unit)
                .finish_non_exhaustive(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LinearSdeSpec {
    dim: usize,
    dynamics: Dynamics,
}

/// `X_t | X_s = x ~ N(Φ x + a, R)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianTransition {
    pub s: f64,
    pub t: f64,
    pub phi: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianTransition {
    pub fn mean(&self, x: &[f64]) -> DVector<f64> {
        &self.phi * DVector::from_column_slice(x) + &self.offset
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianLaw {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianLaw {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let root = sym_sqrt(&self.cov)?;
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        Ok((&self.mean + root * z).iter().copied().collect())
    }
}

impl LinearSdeSpec {
    pub fn brownian(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be at least 1");
        Self {
            dim,
            dynamics: Dynamics::Brownian { drift: vec![0.0; dim] },
        }
    }

    pub fn brownian_with_drift(drift: Vec<f64>) -> Result<Self> {
        ensure(!drift.is_empty(), || "dimension must be at least 1".into())?;
        ensure(drift.iter().all(|b| b.is_finite()), || "drift must be finite".into())?;
        Ok(Self {
            dim: drift.len(),
            dynamics: Dynamics::Brownian { drift },
        })
    }

    pub fn ornstein_uhlenbeck(phi: Vec<f64>, mu: Vec<f64>) -> Result<Self> {
        ensure(!phi.is_empty() && phi.len() == mu.len(), || {
            "phi and mu must be non-empty and of equal length".into()
        })?;
        ensure(phi.iter().all(|p| p.is_finite() && *p > 0.0), || {
            format!("OU rates must be positive and finite, got {phi:?}")
        })?;
        ensure(mu.iter().all(|m| m.is_finite()), || "OU means must be finite".into())?;
        Ok(Self {
            dim: phi.len(),
            dynamics: Dynamics::OrnsteinUhlenbeck { phi, mu },
        })
    }

    /// Generic time-inhomogeneous linear SDE. `steps_per_unit` sets the RK4
    /// resolution used for the moment ODEs.
    pub fn generic(b0: Vec<f64>, b1: MatrixFn, sigma: MatrixFn, steps_per_unit: usize) -> Result<Self> {
        let dim = b0.len();
        ensure(dim >= 1, || "dimension must be at least 1".into())?;
        ensure(b0.iter().all(|v| v.is_finite()), || "b0 must be finite".into())?;
        ensure(steps_per_unit >= 1, || "steps_per_unit must be positive".into())?;
        let m = b1(0.0);
        let s = sigma(0.0);
        ensure(m.nrows() == dim && m.ncols() == dim, || "b1 has the wrong shape".into())?;
        ensure(s.nrows() == dim, || "sigma has the wrong number of rows".into())?;
        Ok(Self {
            dim,
            dynamics: Dynamics::Generic {
                b0: DVector::from_vec(b0),
                b1,
                sigma,
                steps_per_unit,
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn is_diagonal(&self) -> bool {
        !matches!(self.dynamics, Dynamics::Generic { .. })
    }

    /// Per-coordinate `(Φ_ii, a_i, R_ii)` over an interval of length `h`
    /// for the diagonal cases.
    #[inline]
    fn coord(&self, i: usize, h: f64) -> (f64, f64, f64) {
        match &self.dynamics {
            Dynamics::Brownian { drift } => (1.0, drift[i] * h, h),
            Dynamics::OrnsteinUhlenbeck { phi, mu } => {
                let p = phi[i];
                let e = (-p * h).exp();
                let one_minus_e = -(-p * h).exp_m1();
                let var = -(-2.0 * p * h).exp_m1() / (2.0 * p);
                (e, mu[i] * one_minus_e, var)
            }
            Dynamics::Generic { .. } => unreachable!("coord() called on generic dynamics"),
        }
    }

    fn check_interval(s: f64, t: f64) -> Result<()> {
        ensure(s.is_finite() && t.is_finite(), || format!("non-finite times s={s}, t={t}"))?;
        if t < s {
            return Err(Error::NegativeInterval { s, t });
        }
        Ok(())
    }

    pub fn transition_moments(&self, s: f64, t: f64) -> Result<GaussianTransition> {
        Self::check_interval(s, t)?;
        let n = self.dim;
        if self.is_diagonal() {
            let h = t - s;
            let mut phi = DMatrix::zeros(n, n);
            let mut offset = DVector::zeros(n);
            let mut cov = DMatrix::zeros(n, n);
            for i in 0..n {
                let (p, a, v) = self.coord(i, h);
                phi[(i, i)] = p;
                offset[i] = a;
                cov[(i, i)] = v;
            }
            return Ok(GaussianTransition { s, t, phi, offset, cov });
        }
        let Dynamics::Generic {
            b0,
            b1,
            sigma,
            steps_per_unit,
        } = &self.dynamics
        else {
            unreachable!()
        };
        let (phi, offset, cov) = integrate_moments(b0, b1, sigma, *steps_per_unit, s, t);
        ensure(
            phi.iter().chain(offset.iter()).chain(cov.iter()).all(|v| v.is_finite()),
            || "non-finite transition moments".into(),
        )?;
        Ok(GaussianTransition { s, t, phi, offset, cov })
    }

    /// Draws `X_t | X_s = x` into `out`. Zero-length intervals return the
    /// mean exactly.
    pub fn sample_transition_into<R: Rng + ?Sized>(
        &self,
        s: f64,
        t: f64,
        x: &[f64],
        out: &mut [f64],
        rng: &mut R,
    ) -> Result<()> {
        if self.is_diagonal() {
            let h = t - s;
            if !(h >= 0.0) {
                Self::check_interval(s, t)?;
            }
            for i in 0..self.dim {
                let (p, a, v) = self.coord(i, h);
                let z: f64 = if v > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
                out[i] = p * x[i] + a + v.sqrt() * z;
            }
            return Ok(());
        }
        let tr = self.transition_moments(s, t)?;
        let mean = tr.mean(x);
        let root = sym_sqrt(&tr.cov)?;
        let z = DVector::from_fn(self.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let draw = mean + root * z;
        out.copy_from_slice(draw.as_slice());
        Ok(())
    }

    pub fn sample_transition<R: Rng + ?Sized>(&self, s: f64, t: f64, x: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.sample_transition_into(s, t, x, &mut out, rng)?;
        Ok(out)
    }

    /// Law of `X_τ` given `X_s = x_s` and `X_t = x_t`, `s < τ < t`.
    pub fn bridge_moments(&self, s: f64, tau: f64, t: f64, x_s: &[f64], x_t: &[f64]) -> Result<GaussianLaw> {
        if !(s < tau && tau < t) {
            return Err(Error::BridgeTime { s, tau, t });
        }
        let n = self.dim;
        if self.is_diagonal() {
            let mut mean = DVector::zeros(n);
            let mut cov = DMatrix::zeros(n, n);
            for i in 0..n {
                let (m, v) = self.bridge_coord(i, tau - s, t - tau, x_s[i], x_t[i]);
                mean[i] = m;
                cov[(i, i)] = v;
            }
            return Ok(GaussianLaw { mean, cov });
        }
        let first = self.transition_moments(s, tau)?;
        let second = self.transition_moments(tau, t)?;
        let r1_inv = first
            .cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidInput("singular covariance on (s, τ)".into()))?
            .inverse();
        let r2_inv = second
            .cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidInput("singular covariance on (τ, t)".into()))?
            .inverse();
        let precision = &r1_inv + second.phi.transpose() * &r2_inv * &second.phi;
        let cov = precision
            .cholesky()
            .ok_or_else(|| Error::InvalidInput("singular bridge precision".into()))?
            .inverse();
        let m1 = first.mean(x_s);
        let resid = DVector::from_column_slice(x_t) - &second.offset;
        let mean = &cov * (&r1_inv * m1 + second.phi.transpose() * &r2_inv * resid);
        Ok(GaussianLaw { mean, cov })
    }

    #[inline]
    fn bridge_coord(&self, i: usize, h1: f64, h2: f64, xs: f64, xt: f64) -> (f64, f64) {
        let (p1, a1, v1) = self.coord(i, h1);
        let (p2, a2, v2) = self.coord(i, h2);
        let m1 = p1 * xs + a1;
        if v1 <= 0.0 {
            return (m1, 0.0);
        }
        if v2 <= 0.0 {
            return ((xt - a2) / p2, 0.0);
        }
        let prec = 1.0 / v1 + p2 * p2 / v2;
        let var = 1.0 / prec;
        (var * (m1 / v1 + p2 * (xt - a2) / v2), var)
    }

    pub fn sample_bridge_into<R: Rng + ?Sized>(
        &self,
        s: f64,
        tau: f64,
        t: f64,
        x_s: &[f64],
        x_t: &[f64],
        out: &mut [f64],
        rng: &mut R,
    ) -> Result<()> {
        if self.is_diagonal() {
            if !(s < tau && tau < t) {
                return Err(Error::BridgeTime { s, tau, t });
            }
            for i in 0..self.dim {
                let (m, v) = self.bridge_coord(i, tau - s, t - tau, x_s[i], x_t[i]);
                let z: f64 = rng.sample(StandardNormal);
                out[i] = m + v.sqrt() * z;
            }
            return Ok(());
        }
        let law = self.bridge_moments(s, tau, t, x_s, x_t)?;
        out.copy_from_slice(&law.sample(rng)?);
        Ok(())
    }

    pub fn sample_bridge<R: Rng + ?Sized>(
        &self,
        s: f64,
        tau: f64,
        t: f64,
        x_s: &[f64],
        x_t: &[f64],
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.sample_bridge_into(s, tau, t, x_s, x_t, &mut out, rng)?;
        Ok(out)
    }

    /// Stationary law of the OU specialisation.
    pub fn stationary_moments(&self) -> Result<GaussianLaw> {
        match &self.dynamics {
            Dynamics::OrnsteinUhlenbeck { phi, mu } => Ok(GaussianLaw {
                mean: DVector::from_column_slice(mu),
                cov: DMatrix::from_diagonal(&DVector::from_iterator(phi.len(), phi.iter().map(|p| 0.5 / p))),
            }),
            _ => Err(Error::Unsupported(
                "stationary law exists only for the Ornstein–Uhlenbeck specialisation".into(),
            )),
        }
    }
}

/// RK4 on `Φ' = B1 Φ`, `a' = B1 a + b0`, `R' = B1 R + R B1ᵀ + σσᵀ` from `s` to `t`.
fn integrate_moments(
    b0: &DVector<f64>,
    b1: &MatrixFn,
    sigma: &MatrixFn,
    steps_per_unit: usize,
    s: f64,
    t: f64,
) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let n = b0.len();
    let mut phi = DMatrix::<f64>::identity(n, n);
    let mut a = DVector::<f64>::zeros(n);
    let mut r = DMatrix::<f64>::zeros(n, n);
    if t == s {
        return (phi, a, r);
    }
    let steps = ((t - s) * steps_per_unit as f64).ceil().max(1.0) as usize;
    let h = (t - s) / steps as f64;
    let deriv = |u: f64, phi: &DMatrix<f64>, a: &DVector<f64>, r: &DMatrix<f64>| {
        let b = b1(u);
        let sg = sigma(u);
        let dphi = &b * phi;
        let da = &b * a + b0;
        let dr = &b * r + r * b.transpose() + &sg * sg.transpose();
        (dphi, da, dr)
    };
    for k in 0..steps {
        let u = s + k as f64 * h;
        let (p1, a1, r1) = deriv(u, &phi, &a, &r);
        let (p2, a2, r2) = deriv(u + 0.5 * h, &(&phi + &p1 * (0.5 * h)), &(&a + &a1 * (0.5 * h)), &(&r + &r1 * (0.5 * h)));
        let (p3, a3, r3) = deriv(u + 0.5 * h, &(&phi + &p2 * (0.5 * h)), &(&a + &a2 * (0.5 * h)), &(&r + &r2 * (0.5 * h)));
        let (p4, a4, r4) = deriv(u + h, &(&phi + &p3 * h), &(&a + &a3 * h), &(&r + &r3 * h));
        phi += (p1 + p2 * 2.0 + p3 * 2.0 + p4) * (h / 6.0);
        a += (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (h / 6.0);
        r += (r1 + r2 * 2.0 + r3 * 2.0 + r4) * (h / 6.0);
    }
    let r = (&r + r.transpose()) * 0.5;
    (phi, a, r)
}

/// Symmetric square root with negative eigenvalues clamped at zero.
pub fn sym_sqrt(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOLERANCE {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}
