//! Target and initial densities.
//!
//! Every density exposes an unnormalized log-density and its score. Targets
//! in one or two dimensions can carry a log-normalizer computed by quadrature
//! on a [`Grid`], which the KL estimators need.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::grid::Grid;

#[derive(Debug, Error, PartialEq)]
pub enum DensityError {
    #[error("mixture has no components")]
    EmptyMixture,
    #[error("mixture weights sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("mixture weight {0} is not positive")]
    NonPositiveWeight(f64),
    #[error("variance {0} is not positive")]
    NonPositiveVariance(f64),
    #[error("mixture parameter lengths differ: {weights} weights, {means} means, {variances} variances")]
    LengthMismatch {
        weights: usize,
        means: usize,
        variances: usize,
    },
    #[error("component means have inconsistent dimension")]
    DimensionMismatch,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// An unnormalized log-density together with its gradient.
///
/// Implementations must be pure: the samplers call them from hot loops and the
/// results must not depend on call order.
pub trait LogDensity: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &[f64]) -> f64;
    /// Writes `∇ log p(x)` into `out`.
    fn score(&self, x: &[f64], out: &mut [f64]);
}

/// `N(mean, variance · I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsotropicGaussian {
    pub mean: Vec<f64>,
    pub variance: f64,
}

impl IsotropicGaussian {
    pub fn new(mean: Vec<f64>, variance: f64) -> Result<Self, DensityError> {
        if !(variance > 0.0) {
            return Err(DensityError::NonPositiveVariance(variance));
        }
        if mean.is_empty() {
            return Err(DensityError::InvalidParameter("dimension must be at least 1".into()));
        }
        Ok(Self { mean, variance })
    }

    pub fn standard(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], variance: 1.0 }
    }
}

impl LogDensity for IsotropicGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Normalized log-density.
    fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.mean.len() as f64;
        let r2: f64 = x.iter().zip(&self.mean).map(|(a, m)| (a - m) * (a - m)).sum();
        -0.5 * r2 / self.variance - 0.5 * d * (2.0 * PI * self.variance).ln()
    }

    fn score(&self, x: &[f64], out: &mut [f64]) {
        for ((o, a), m) in out.iter_mut().zip(x).zip(&self.mean) {
            *o = -(a - m) / self.variance;
        }
    }
}

/// Finite mixture of isotropic Gaussians, evaluated with log-sum-exp.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    log_weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(weights: &[f64], means: Vec<Vec<f64>>, variances: &[f64]) -> Result<Self, DensityError> {
        if weights.is_empty() {
            return Err(DensityError::EmptyMixture);
        }
        if weights.len() != means.len() || weights.len() != variances.len() {
            return Err(DensityError::LengthMismatch {
                weights: weights.len(),
                means: means.len(),
                variances: variances.len(),
            });
        }
        if let Some(&w) = weights.iter().find(|&&w| !(w > 0.0)) {
            return Err(DensityError::NonPositiveWeight(w));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(DensityError::NotNormalized(total));
        }
        if let Some(&v) = variances.iter().find(|&&v| !(v > 0.0)) {
            return Err(DensityError::NonPositiveVariance(v));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(DensityError::DimensionMismatch);
        }
        Ok(Self {
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            means,
            variances: variances.to_vec(),
        })
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    fn component_log_densities(&self, x: &[f64], out: &mut Vec<f64>) {
        let d = x.len() as f64;
        out.clear();
        for ((lw, m), v) in self.log_weights.iter().zip(&self.means).zip(&self.variances) {
            let r2: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
            out.push(lw - 0.5 * r2 / v - 0.5 * d * (2.0 * PI * v).ln());
        }
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl LogDensity for GaussianMixture {
    fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let mut comps = Vec::with_capacity(self.means.len());
        self.component_log_densities(x, &mut comps);
        log_sum_exp(&comps)
    }

    fn score(&self, x: &[f64], out: &mut [f64]) {
        let mut comps = Vec::with_capacity(self.means.len());
        self.component_log_densities(x, &mut comps);
        let total = log_sum_exp(&comps);
        out.iter_mut().for_each(|o| *o = 0.0);
        for ((lc, m), v) in comps.iter().zip(&self.means).zip(&self.variances) {
            let r = (lc - total).exp();
            for ((o, a), b) in out.iter_mut().zip(x).zip(m) {
                *o -= r * (a - b) / v;
            }
        }
    }
}

/// `log p(x) = −(‖x − c‖ − r)² / temperature` in two dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyCircle {
    pub center: [f64; 2],
    pub radius: f64,
    pub temperature: f64,
}

impl LogDensity for NoisyCircle {
    fn dim(&self) -> usize {
        2
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let r = (x[0] - self.center[0]).hypot(x[1] - self.center[1]);
        -(r - self.radius).powi(2) / self.temperature
    }

    fn score(&self, x: &[f64], out: &mut [f64]) {
        let dx = x[0] - self.center[0];
        let dy = x[1] - self.center[1];
        let r = dx.hypot(dy);
        // the radial direction is undefined at the center; the score is set to 0 there
        if r == 0.0 {
            out[0] = 0.0;
            out[1] = 0.0;
            return;
        }
        let g = -2.0 * (r - self.radius) / (self.temperature * r);
        out[0] = g * dx;
        out[1] = g * dy;
    }
}

type LogFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type ScoreFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// User-supplied log-density / score pair.
pub struct FnDensity {
    dim: usize,
    log_density: Box<LogFn>,
    score: Box<ScoreFn>,
}

impl FnDensity {
    pub fn new(
        dim: usize,
        log_density: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        score: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self { dim, log_density: Box::new(log_density), score: Box::new(score) }
    }
}

impl fmt::Debug for FnDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnDensity").field("dim", &self.dim).finish_non_exhaustive()
    }
}

impl LogDensity for FnDensity {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        (self.log_density)(x)
    }

    fn score(&self, x: &[f64], out: &mut [f64]) {
        (self.score)(x, out)
    }
}

/// The unnormalized target π.
#[derive(Debug, Clone)]
pub struct TargetDensity {
    density: Arc<dyn LogDensity>,
    log_normalizer: Option<f64>,
}

impl TargetDensity {
    pub fn new(density: impl LogDensity + 'static) -> Self {
        Self { density: Arc::new(density), log_normalizer: None }
    }

    pub fn from_arc(density: Arc<dyn LogDensity>) -> Self {
        Self { density, log_normalizer: None }
    }

    pub fn dim(&self) -> usize {
        self.density.dim()
    }

    pub fn log_density_unnormalized(&self, x: &[f64]) -> f64 {
        self.density.log_density(x)
    }

    pub fn score(&self, x: &[f64], out: &mut [f64]) {
        self.density.score(x, out)
    }

    pub fn score_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.density.score(x, &mut out);
        out
    }

    pub fn log_normalizer(&self) -> Option<f64> {
        self.log_normalizer
    }

    /// Normalized log-density, when a normalizer is attached.
    pub fn log_density(&self, x: &[f64]) -> Option<f64> {
        self.log_normalizer.map(|z| self.density.log_density(x) - z)
    }

    pub fn inner(&self) -> &Arc<dyn LogDensity> {
        &self.density
    }

    pub fn with_log_normalizer(mut self, log_normalizer: f64) -> Self {
        self.log_normalizer = Some(log_normalizer);
        self
    }

    /// Attaches `log Σ_grid exp(log p) · cell_volume` as the normalizer.
    pub fn with_quadrature_normalizer(self, grid: &Grid) -> Self {
        assert_eq!(grid.dim(), self.dim(), "grid dimension must match the target");
        let mut logs = Vec::with_capacity(grid.len());
        grid.for_each_point(|_, x| logs.push(self.density.log_density(x)));
        let z = log_sum_exp(&logs) + grid.cell_volume().ln();
        self.with_log_normalizer(z)
    }
}

/// The initial law f₀, an isotropic Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialDensity {
    pub gaussian: IsotropicGaussian,
}

impl InitialDensity {
    pub fn new(gaussian: IsotropicGaussian) -> Self {
        Self { gaussian }
    }

    pub fn standard(dim: usize) -> Self {
        Self::new(IsotropicGaussian::standard(dim))
    }

    pub fn dim(&self) -> usize {
        self.gaussian.dim()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.gaussian.log_density(x)
    }

    pub fn score(&self, x: &[f64], out: &mut [f64]) {
        self.gaussian.score(x, out)
    }

    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let sd = self.gaussian.variance.sqrt();
        self.gaussian
            .mean
            .iter()
            .map(|m| m + sd * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// `n × dim` matrix of iid draws.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        let d = self.dim();
        let sd = self.gaussian.variance.sqrt();
        Array2::from_shape_fn((n, d), |(_, k)| self.gaussian.mean[k] + sd * rng.sample::<f64, _>(StandardNormal))
    }

    pub fn as_target(&self) -> TargetDensity {
        TargetDensity::new(self.gaussian.clone()).with_log_normalizer(0.0)
    }
}

/// Closed-form gradient flow from `N(0, v₀ I)` towards `N(0, I)`:
/// `σ_t² = 1 − (1 − v₀) e^{−2t}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticSolution {
    pub dim: usize,
    pub initial_variance: f64,
}

impl AnalyticSolution {
    pub fn new(dim: usize, initial_variance: f64) -> Self {
        Self { dim, initial_variance }
    }

    /// The log-concave experiment: `f_t = N(0, 1 − e^{−2(t+0.1)})`.
    pub fn shifted_standard(dim: usize) -> Self {
        Self::new(dim, 1.0 - (-0.2f64).exp())
    }

    pub fn variance_at(&self, t: f64) -> f64 {
        1.0 - (1.0 - self.initial_variance) * (-2.0 * t).exp()
    }

    pub fn density_at(&self, t: f64, x: &[f64]) -> f64 {
        IsotropicGaussian { mean: vec![0.0; self.dim], variance: self.variance_at(t) }
            .log_density(x)
            .exp()
    }

    pub fn score_at(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let v = self.variance_at(t);
        for (o, a) in out.iter_mut().zip(x) {
            *o = -a / v;
        }
    }

    /// `KL(N(0, σ²I) ‖ N(0, I)) = (d/2)(σ² − 1 − log σ²)`.
    pub fn kl_to_target_at(&self, t: f64) -> f64 {
        let v = self.variance_at(t);
        0.5 * self.dim as f64 * (v - 1.0 - v.ln())
    }

    /// Relative Fisher information `d (1 − σ²)² / σ²`.
    pub fn fisher_at(&self, t: f64) -> f64 {
        let v = self.variance_at(t);
        self.dim as f64 * (1.0 - v).powi(2) / v
    }

    pub fn initial(&self) -> InitialDensity {
        InitialDensity::new(IsotropicGaussian { mean: vec![0.0; self.dim], variance: self.initial_variance })
    }
}

pub fn make_standard_gaussian(dim: usize) -> (TargetDensity, InitialDensity) {
    assert!(dim >= 1);
    (TargetDensity::new(IsotropicGaussian::standard(dim)), InitialDensity::standard(dim))
}

/// Mixture of isotropic Gaussians; `means[i]` is the i-th component mean.
pub fn make_gaussian_mixture(weights: &[f64], means: Vec<Vec<f64>>, variances: &[f64]) -> Result<TargetDensity, DensityError> {
    GaussianMixture::new(weights, means, variances).map(TargetDensity::new)
}

/// 1D mixture with scalar means.
pub fn make_gaussian_mixture_1d(weights: &[f64], means: &[f64], variances: &[f64]) -> Result<TargetDensity, DensityError> {
    make_gaussian_mixture(weights, means.iter().map(|&m| vec![m]).collect(), variances)
}

pub fn make_noisy_circle(center: [f64; 2], radius: f64, temperature: f64) -> Result<TargetDensity, DensityError> {
    if !(radius > 0.0) || !(temperature > 0.0) {
        return Err(DensityError::InvalidParameter(format!(
            "noisy circle needs positive radius and temperature, got {radius} and {temperature}"
        )));
    }
    Ok(TargetDensity::new(NoisyCircle { center, radius, temperature }))
}

/// Equal-weight 2D mixture on a `k × k` grid centered at the origin.
pub fn make_grid_mixture(modes_per_side: usize, spacing: f64, variance: f64) -> Result<TargetDensity, DensityError> {
    if modes_per_side == 0 {
        return Err(DensityError::InvalidParameter("modes_per_side must be at least 1".into()));
    }
    let k = modes_per_side;
    let offset = 0.5 * (k as f64 - 1.0) * spacing;
    let mut means = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            means.push(vec![i as f64 * spacing - offset, j as f64 * spacing - offset]);
        }
    }
    let m = k * k;
    // equal weights summing to exactly one within rounding
    let weights = vec![1.0 / m as f64; m];
    let total: f64 = weights.iter().sum();
    let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
    make_gaussian_mixture(&weights, means, &vec![variance; m])
}
