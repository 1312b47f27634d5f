//! Intensity functions `λ(x)` and mark densities `g(y | x)`.

use std::f64::consts::PI;
use std::num::NonZeroUsize;
use std::sync::Arc;

use gauss_quad::GaussLegendre;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Intensity {
    /// `λ(x) = slope · x + intercept`.
    Affine { slope: Vec<f64>, intercept: f64 },
    /// `λ(x) = λ0 exp(-x[axis] / depth)`, the TIRF excitation profile.
    ExponentialDepth { lambda0: f64, depth: f64, axis: usize },
    Constant { rate: f64 },
}

impl Intensity {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Intensity::Affine { slope, intercept } => {
                ensure(slope.len() == dim, || format!("affine slope has length {}, state has {dim}", slope.len()))?;
                ensure(slope.iter().all(|v| v.is_finite()) && intercept.is_finite(), || {
                    "affine intensity parameters must be finite".into()
                })
            }
            Intensity::ExponentialDepth { lambda0, depth, axis } => {
                ensure(*lambda0 > 0.0 && lambda0.is_finite(), || "lambda0 must be positive".into())?;
                ensure(*depth > 0.0 && depth.is_finite(), || "depth must be positive".into())?;
                ensure(*axis < dim, || format!("depth axis {axis} out of range for dimension {dim}"))
            }
            Intensity::Constant { rate } => {
                ensure(*rate >= 0.0 && rate.is_finite(), || "constant rate must be non-negative".into())
            }
        }
    }

    /// Unchecked evaluation.
    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Intensity::Affine { slope, intercept } => {
                intercept + slope.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            }
            Intensity::ExponentialDepth { lambda0, depth, axis } => lambda0 * (-x[*axis] / depth).exp(),
            Intensity::Constant { rate } => *rate,
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let v = self.value(x);
        if v >= 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(Error::BadIntensity {
                value: v,
                state: x.to_vec(),
            })
        }
    }

    /// Analytic Lipschitz constant, used to seed the empirical tracker. For
    /// the depth profile this is the slope bound on the half-space
    /// `x[axis] >= 0`.
    pub fn lipschitz_hint(&self) -> Option<f64> {
        match self {
            Intensity::Affine { slope, .. } => Some(slope.iter().map(|v| v * v).sum::<f64>().sqrt()),
            Intensity::ExponentialDepth { lambda0, depth, .. } => Some(lambda0 / depth),
            Intensity::Constant { .. } => Some(0.0),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Intensity::Constant { .. } => true,
            Intensity::Affine { slope, .. } => slope.iter().all(|v| *v == 0.0),
            Intensity::ExponentialDepth { .. } => false,
        }
    }
}

#[derive(Clone, Debug)]
pub enum MarkModel {
    /// Unmarked point process, `g ≡ 1`.
    None,
    /// `y ~ N(x, σ² I)` in state space.
    Gaussian { sigma: f64 },
    BornWolf(Arc<BornWolf>),
}

impl MarkModel {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            MarkModel::None => Ok(()),
            MarkModel::Gaussian { sigma } => ensure(*sigma > 0.0 && sigma.is_finite(), || {
                "mark standard deviation must be positive".into()
            }),
            MarkModel::BornWolf(_) => ensure(dim == 3, || "Born–Wolf marks need a 3D state".into()),
        }
    }

    pub fn mark_dim(&self, state_dim: usize) -> usize {
        match self {
            MarkModel::None => 0,
            MarkModel::Gaussian { .. } => state_dim,
            MarkModel::BornWolf(_) => 2,
        }
    }

    #[inline]
    pub fn density(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            MarkModel::None => 1.0,
            MarkModel::Gaussian { sigma } => {
                let norm = (2.0 * PI).sqrt() * sigma;
                x.iter()
                    .zip(y)
                    .map(|(a, b)| (-0.5 * ((b - a) / sigma).powi(2)).exp() / norm)
                    .product()
            }
            MarkModel::BornWolf(bw) => bw.mark_density(x, y),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        match self {
            MarkModel::None => Ok(Vec::new()),
            MarkModel::Gaussian { sigma } => Ok(x
                .iter()
                .map(|m| m + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect()),
            MarkModel::BornWolf(bw) => bw.sample_mark(x, rng).map(|y| y.to_vec()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BornWolfParams {
    pub numerical_aperture: f64,
    /// Emission wavelength, μm.
    pub wavelength: f64,
    pub immersion_index: f64,
    /// Lateral magnification, object μm → detector μm.
    pub magnification: [[f64; 2]; 2],
    /// Minimum number of Gauss–Legendre nodes for the ρ-integral.
    pub nodes: usize,
}

impl Default for BornWolfParams {
    fn default() -> Self {
        Self {
            numerical_aperture: 1.4,
            wavelength: 0.52,
            immersion_index: 1.515,
            magnification: [[100.0, 0.0], [0.0, 100.0]],
            nodes: 64,
        }
    }
}

/// Grid of the interpolation cache over `(|x3|, r)`, μm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsfCacheConfig {
    pub z_max: f64,
    pub r_max: f64,
    pub dz: f64,
    pub dr: f64,
}

impl Default for PsfCacheConfig {
    fn default() -> Self {
        Self {
            z_max: 10.0,
            r_max: 12.0,
            dz: 0.025,
            dr: 0.01,
        }
    }
}

const PANEL_NODES: usize = 16;
const ENVELOPE_BUCKET: f64 = 0.5;
const ENVELOPE_SAFETY: f64 = 1.2;
const SAMPLER_CAP: u64 = 100_000;
/// Object-space radius beyond which mark proposals are discarded.
pub const SAMPLER_RADIUS: f64 = 100.0;

#[derive(Debug)]
struct PsfCache {
    cfg: PsfCacheConfig,
    nz: usize,
    nr: usize,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Envelope {
    scale: f64,
    constant: f64,
}

/// The Born–Wolf defocus PSF and the mark model built on it.
#[derive(Debug)]
pub struct BornWolf {
    params: BornWolfParams,
    m_inv: [[f64; 2]; 2],
    abs_det: f64,
    panel: Vec<(f64, f64)>,
    cache: Option<PsfCache>,
    envelopes: Vec<Envelope>,
}

impl BornWolf {
    /// Builds the PSF with the default interpolation cache.
    pub fn new(params: BornWolfParams) -> Result<Self> {
        Self::with_cache(params, Some(PsfCacheConfig::default()))
    }

    /// `cache = None` makes every evaluation use exact quadrature.
    pub fn with_cache(params: BornWolfParams, cache: Option<PsfCacheConfig>) -> Result<Self> {
        ensure(
            params.numerical_aperture > 0.0 && params.wavelength > 0.0 && params.immersion_index > 0.0,
            || "optical parameters must be positive".into(),
        )?;
        ensure(params.nodes >= 64, || "at least 64 quadrature nodes are required".into())?;
        let m = params.magnification;
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        ensure(det.is_finite() && det.abs() > 1e-300, || "magnification matrix is singular".into())?;
        let m_inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
        let panel = GaussLegendre::new(NonZeroUsize::new(PANEL_NODES).unwrap())
            .as_node_weight_pairs()
            .to_vec();
        let mut bw = Self {
            params,
            m_inv,
            abs_det: det.abs(),
            panel,
            cache: None,
            envelopes: Vec::new(),
        };
        if let Some(cfg) = cache {
            ensure(cfg.z_max > 0.0 && cfg.r_max > 0.0 && cfg.dz > 0.0 && cfg.dr > 0.0, || {
                "cache grid must be positive".into()
            })?;
            bw.cache = Some(bw.build_cache(cfg));
        }
        bw.envelopes = bw.build_envelopes();
        Ok(bw)
    }

    pub fn params(&self) -> &BornWolfParams {
        &self.params
    }

    fn k(&self) -> f64 {
        2.0 * PI * self.params.numerical_aperture / self.params.wavelength
    }

    fn c(&self) -> f64 {
        PI * self.params.numerical_aperture.powi(2) / (self.params.immersion_index * self.params.wavelength)
    }

    fn prefactor(&self) -> f64 {
        4.0 * PI * self.params.numerical_aperture.powi(2) / self.params.wavelength.powi(2)
    }

    /// Panels needed for a 16-node rule per oscillation of the integrand.
    fn panels_for(&self, r: f64, z: f64, min_nodes: usize) -> usize {
        let cycles = (self.k() * r + self.c() * z.abs()) / (2.0 * PI);
        (cycles.ceil() as usize + 4).max(min_nodes.div_ceil(PANEL_NODES))
    }

    fn rho_integral(&self, z: f64, r: f64, panels: usize) -> f64 {
        let kr = self.k() * r;
        let cz = self.c() * z;
        let h = 1.0 / panels as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for p in 0..panels {
            let a = p as f64 * h;
            for &(node, weight) in &self.panel {
                let rho = a + 0.5 * h * (node + 1.0);
                let w = 0.5 * h * weight * rho * libm::j0(kr * rho);
                let (s, c) = (cz * rho * rho).sin_cos();
                re += w * c;
                im += w * s;
            }
        }
        self.prefactor() * (re * re + im * im)
    }

    /// Exact quadrature of the PSF at defocus `z` and radial offset `r`.
    pub fn psf_exact(&self, z: f64, r: f64) -> f64 {
        self.rho_integral(z, r, self.panels_for(r, z, self.params.nodes))
    }

    /// Number of 16-node panels the exact evaluator uses at `(z, r)`.
    pub fn default_panels(&self, z: f64, r: f64) -> usize {
        self.panels_for(r, z, self.params.nodes)
    }

    /// Exact quadrature with an explicit panel count, for convergence checks.
    pub fn psf_with_panels(&self, z: f64, r: f64, panels: usize) -> f64 {
        self.rho_integral(z.abs(), r, panels.max(1))
    }

    /// PSF density (1/μm²) at defocus `z` and radius `r`, from the cache where
    /// available.
    #[inline]
    pub fn psf_radial(&self, z: f64, r: f64) -> f64 {
        let z = z.abs();
        if let Some(c) = &self.cache {
            if z <= c.cfg.z_max && r <= c.cfg.r_max {
                return c.lookup(z, r);
            }
        }
        self.psf_exact(z, r)
    }

    /// `q_{x3}(u)` for a 2D object-space offset `u`.
    pub fn psf(&self, z: f64, u: [f64; 2]) -> f64 {
        self.psf_radial(z, u[0].hypot(u[1]))
    }

    /// Same as [`psf`](Self::psf) but bypassing the cache.
    pub fn psf_uncached(&self, z: f64, u: [f64; 2]) -> f64 {
        self.psf_exact(z.abs(), u[0].hypot(u[1]))
    }

    pub fn to_object(&self, y: &[f64]) -> [f64; 2] {
        let m = &self.m_inv;
        [m[0][0] * y[0] + m[0][1] * y[1], m[1][0] * y[0] + m[1][1] * y[1]]
    }

    pub fn to_detector(&self, u: [f64; 2]) -> [f64; 2] {
        let m = &self.params.magnification;
        [m[0][0] * u[0] + m[0][1] * u[1], m[1][0] * u[0] + m[1][1] * u[1]]
    }

    /// `g(y | x) = q_{x3}(M⁻¹y - (x1, x2)) / |det M|`.
    #[inline]
    pub fn mark_density(&self, x: &[f64], y: &[f64]) -> f64 {
        let o = self.to_object(y);
        self.psf(x[2], [o[0] - x[0], o[1] - x[1]]) / self.abs_det
    }

    fn envelope_scale(&self, z: f64) -> f64 {
        let p = &self.params;
        (p.wavelength / (2.0 * p.numerical_aperture)).max(0.5 * z.abs() * p.numerical_aperture / p.immersion_index)
    }

    fn cauchy_density(scale: f64, r: f64) -> f64 {
        scale / (2.0 * PI * (r * r + scale * scale).powf(1.5))
    }

    fn envelope_for(&self, z_lo: f64, z_hi: f64) -> Envelope {
        let scale = self.envelope_scale(z_hi);
        let r_max = self.cache.as_ref().map_or(12.0, |c| c.cfg.r_max);
        let dr = self.cache.as_ref().map_or(0.02, |c| c.cfg.dr);
        let nr = (r_max / dr).ceil() as usize;
        let zs: Vec<f64> = (0..=4).map(|i| z_lo + (z_hi - z_lo) * i as f64 / 4.0).collect();
        let mut worst: f64 = 0.0;
        for &z in &zs {
            for i in 0..=nr {
                let r = i as f64 * dr;
                worst = worst.max(self.psf_radial(z, r) / Self::cauchy_density(scale, r));
            }
        }
        Envelope {
            scale,
            constant: ENVELOPE_SAFETY * worst,
        }
    }

    fn build_envelopes(&self) -> Vec<Envelope> {
        let z_max = self.cache.as_ref().map_or(10.0, |c| c.cfg.z_max);
        let buckets = (z_max / ENVELOPE_BUCKET).ceil() as usize;
        (0..buckets)
            .into_par_iter()
            .map(|b| self.envelope_for(b as f64 * ENVELOPE_BUCKET, (b + 1) as f64 * ENVELOPE_BUCKET))
            .collect()
    }

    /// Rejection sampler for the object-space offset at defocus `z`, using a
    /// bivariate Cauchy envelope (the PSF has `r⁻³` tails).
    pub fn sample_offset<R: Rng + ?Sized>(&self, z: f64, rng: &mut R) -> Result<[f64; 2]> {
        let z = z.abs();
        let bucket = (z / ENVELOPE_BUCKET) as usize;
        let env = match self.envelopes.get(bucket) {
            Some(e) => *e,
            None => self.envelope_for(z, z),
        };
        for _ in 0..SAMPLER_CAP {
            let u: f64 = rng.random();
            let r = env.scale * ((1.0 / (1.0 - u)).powi(2) - 1.0).sqrt();
            let theta = 2.0 * PI * rng.random::<f64>();
            let v: f64 = rng.random();
            if r > SAMPLER_RADIUS {
                continue;
            }
            if v * env.constant * Self::cauchy_density(env.scale, r) <= self.psf_radial(z, r) {
                return Ok([r * theta.cos(), r * theta.sin()]);
            }
        }
        Err(Error::CapExceeded {
            what: "mark rejection sampler",
            cap: SAMPLER_CAP,
        })
    }

    /// A detector-space mark for emitter state `x`.
    pub fn sample_mark<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<[f64; 2]> {
        let off = self.sample_offset(x[2], rng)?;
        Ok(self.to_detector([x[0] + off[0], x[1] + off[1]]))
    }

    fn build_cache(&self, cfg: PsfCacheConfig) -> PsfCache {
        let nz = (cfg.z_max / cfg.dz).ceil() as usize + 1;
        let nr = (cfg.r_max / cfg.dr).ceil() as usize + 1;
        let panels = self.panels_for(cfg.r_max, cfg.z_max, self.params.nodes);
        let h = 1.0 / panels as f64;
        let mut rho = Vec::with_capacity(panels * PANEL_NODES);
        let mut w = Vec::with_capacity(panels * PANEL_NODES);
        for p in 0..panels {
            for &(node, weight) in &self.panel {
                let x = p as f64 * h + 0.5 * h * (node + 1.0);
                rho.push(x);
                w.push(0.5 * h * weight * x);
            }
        }
        let k = self.k();
        let c = self.c();
        let pre = self.prefactor();
        let cos_sin: Vec<(Vec<f64>, Vec<f64>)> = (0..nz)
            .into_par_iter()
            .map(|iz| {
                let z = iz as f64 * cfg.dz;
                rho.iter().map(|r| (c * z * r * r).sin_cos()).map(|(s, c)| (c, s)).unzip()
            })
            .collect();
        let columns: Vec<Vec<f64>> = (0..nr)
            .into_par_iter()
            .map(|ir| {
                let r = ir as f64 * cfg.dr;
                let j: Vec<f64> = rho.iter().zip(&w).map(|(x, wt)| wt * libm::j0(k * r * x)).collect();
                cos_sin
                    .iter()
                    .map(|(cs, sn)| {
                        let mut re = 0.0;
                        let mut im = 0.0;
                        for i in 0..j.len() {
                            re += j[i] * cs[i];
                            im += j[i] * sn[i];
                        }
                        pre * (re * re + im * im)
                    })
                    .collect()
            })
            .collect();
        let mut values = vec![0.0; nz * nr];
        for (ir, col) in columns.into_iter().enumerate() {
            for (iz, v) in col.into_iter().enumerate() {
                values[iz * nr + ir] = v;
            }
        }
        PsfCache { cfg, nz, nr, values }
    }
}

impl PsfCache {
    #[inline]
    fn lookup(&self, z: f64, r: f64) -> f64 {
        let fz = z / self.cfg.dz;
        let fr = r / self.cfg.dr;
        let iz = (fz as usize).min(self.nz - 2);
        let ir = (fr as usize).min(self.nr - 2);
        let tz = fz - iz as f64;
        let tr = fr - ir as f64;
        let v = |a: usize, b: usize| self.values[a * self.nr + b];
        (1.0 - tz) * ((1.0 - tr) * v(iz, ir) + tr * v(iz, ir + 1)) + tz * ((1.0 - tr) * v(iz + 1, ir) + tr * v(iz + 1, ir + 1))
    }
}
