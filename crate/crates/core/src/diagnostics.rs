//! Measurements on particle ensembles: KDE, KL, Fisher information,
//! dissipation rate, the annealed entropy identity, L2 error, cosine
//! similarity and the NTK probe.
//!
//! Grid-based estimators (KDE, KL, L2) are restricted to `d ≤ 2`.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::densities::{AnalyticSolution, TargetDensity};
use crate::grid::Grid;
use crate::samplers::AnnealingSchedule;
use crate::score_model::ScoreModel;

/// Largest `n·d` for which [`ntk_matrix`] will assemble the dense Gram matrix.
pub const NTK_MAX_SIZE: usize = 512;

/// Density values below this are treated as zero inside KL integrands.
const KL_FLOOR: f64 = 1e-12;

/// Kernel support in bandwidths; `exp(-32)` is below f64 noise for our grids.
const KERNEL_RADIUS: f64 = 8.0;

#[derive(Debug, Error, PartialEq)]
pub enum DiagnosticsError {
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error("grid estimators support d ≤ 2, got d = {0}")]
    UnsupportedDimension(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("target has no normalizing constant")]
    MissingNormalizer,
    #[error("bandwidth must be positive and finite")]
    InvalidBandwidth,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("NTK of size {size} exceeds the limit {limit}")]
    NtkTooLarge { size: usize, limit: usize },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("values length {got} does not match grid size {expected}")]
    GridMismatch { expected: usize, got: usize },
}

/// A nonnegative density tabulated on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridDensity {
    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self, DiagnosticsError> {
        if values.len() != grid.len() {
            return Err(DiagnosticsError::GridMismatch { expected: grid.len(), got: values.len() });
        }
        Ok(Self { grid, values })
    }

    /// Tabulates `exp(log_f)` and rescales to unit quadrature mass.
    pub fn from_log_fn(grid: Grid, log_f: impl Fn(&[f64]) -> f64) -> Self {
        let mut logs = vec![0.0; grid.len()];
        grid.for_each_point(|i, x| logs[i] = log_f(x));
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let values = logs.iter().map(|l| (l - m).exp()).collect();
        let mut g = Self { grid, values };
        g.normalize();
        g
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn normalize(&mut self) {
        let m = self.mass();
        if m > 0.0 {
            self.values.iter_mut().for_each(|v| *v /= m);
        }
    }

    pub fn l1_distance(&self, other: &GridDensity) -> f64 {
        self.check_same_grid(other);
        let s: f64 = self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum();
        s * self.grid.cell_volume()
    }

    pub fn l2_distance(&self, other: &GridDensity) -> f64 {
        self.check_same_grid(other);
        let s: f64 = self.values.iter().zip(&other.values).map(|(a, b)| (a - b).powi(2)).sum();
        (s * self.grid.cell_volume()).sqrt()
    }

    /// `∫ f log(f/g)` by quadrature; cells with `f < 1e-12` contribute zero and
    /// `g` is floored at the smallest positive double.
    pub fn kl_to(&self, other: &GridDensity) -> f64 {
        self.check_same_grid(other);
        let s: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .filter(|(f, _)| **f >= KL_FLOOR)
            .map(|(f, g)| f * (f.ln() - g.max(f64::MIN_POSITIVE).ln()))
            .sum();
        s * self.grid.cell_volume()
    }

    /// Mean and variance along one axis.
    pub fn moments(&self, axis: usize) -> (f64, f64) {
        let dv = self.grid.cell_volume();
        let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
        let mut x = vec![0.0; self.grid.dim()];
        for (i, v) in self.values.iter().enumerate() {
            self.grid.point(i, &mut x);
            m0 += v * dv;
            m1 += v * dv * x[axis];
            m2 += v * dv * x[axis] * x[axis];
        }
        let mean = m1 / m0;
        (mean, m2 / m0 - mean * mean)
    }

    fn check_same_grid(&self, other: &GridDensity) {
        assert_eq!(self.grid, other.grid, "densities live on different grids");
    }
}

/// Kernel bandwidth selection for [`kde`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BandwidthRule {
    /// `0.9 · min(σ̂, IQR/1.34) · n^{-1/5}` independently per axis.
    Silverman,
    /// One bandwidth per axis (or a single value broadcast to all axes).
    Fixed { h: Vec<f64> },
}

impl BandwidthRule {
    pub fn bandwidths(&self, points: ArrayView2<'_, f64>) -> Result<Vec<f64>, DiagnosticsError> {
        let d = points.ncols();
        let h = match self {
            BandwidthRule::Silverman => silverman_bandwidth(points),
            BandwidthRule::Fixed { h } if h.len() == 1 => vec![h[0]; d],
            BandwidthRule::Fixed { h } if h.len() == d => h.clone(),
            BandwidthRule::Fixed { h } => {
                return Err(DiagnosticsError::DimensionMismatch { expected: d, got: h.len() })
            }
        };
        if h.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(h)
        } else {
            Err(DiagnosticsError::InvalidBandwidth)
        }
    }
}

/// Silverman's rule of thumb per axis. Falls back to `σ̂` when the IQR is
/// zero and to `1e-3` for a fully degenerate axis.
pub fn silverman_bandwidth(points: ArrayView2<'_, f64>) -> Vec<f64> {
    let n = points.nrows();
    let factor = 0.9 * (n as f64).powf(-0.2);
    points
        .columns()
        .into_iter()
        .map(|col| {
            let mut v = col.to_vec();
            let mean = v.iter().sum::<f64>() / n as f64;
            let sd = if n > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            v.sort_by(f64::total_cmp);
            let iqr = quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25);
            let spread = match (sd > 0.0, iqr > 0.0) {
                (true, true) => sd.min(iqr / 1.34),
                (true, false) => sd,
                _ => 0.0,
            };
            if spread > 0.0 {
                factor * spread
            } else {
                1e-3
            }
        })
        .collect()
}

fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

fn check_grid_dim(grid: &Grid, d: usize) -> Result<(), DiagnosticsError> {
    if d > 2 {
        return Err(DiagnosticsError::UnsupportedDimension(d));
    }
    if grid.dim() != d {
        return Err(DiagnosticsError::DimensionMismatch { expected: grid.dim(), got: d });
    }
    Ok(())
}

/// Truncated 1D Gaussian weights of one particle on one axis: returns the
/// first node index and the (unnormalized) weights.
fn axis_kernel(grid: &Grid, axis: usize, center: f64, h: f64) -> (usize, Vec<f64>) {
    let dx = grid.spacing(axis);
    let lo = grid.lo[axis];
    let last = grid.points[axis] as isize - 1;
    let i0 = (((center - KERNEL_RADIUS * h - lo) / dx).floor() as isize).clamp(0, last);
    let i1 = (((center + KERNEL_RADIUS * h - lo) / dx).ceil() as isize).clamp(0, last);
    let w = (i0..=i1)
        .map(|i| {
            let z = (lo + i as f64 * dx - center) / h;
            (-0.5 * z * z).exp()
        })
        .collect();
    (i0 as usize, w)
}

/// Gaussian-kernel density estimate on `grid`, renormalized to unit
/// quadrature mass (kernel mass leaking off the grid is redistributed).
pub fn kde(points: ArrayView2<'_, f64>, grid: &Grid, rule: &BandwidthRule) -> Result<GridDensity, DiagnosticsError> {
    let h = rule.bandwidths(points)?;
    kde_with_bandwidth(points, grid, &h)
}

pub fn kde_with_bandwidth(points: ArrayView2<'_, f64>, grid: &Grid, h: &[f64]) -> Result<GridDensity, DiagnosticsError> {
    if points.nrows() == 0 {
        return Err(DiagnosticsError::EmptyEnsemble);
    }
    let d = points.ncols();
    check_grid_dim(grid, d)?;
    let mut values = vec![0.0; grid.len()];
    match d {
        1 => {
            for x in points.column(0) {
                let (i0, w) = axis_kernel(grid, 0, *x, h[0]);
                for (k, wk) in w.iter().enumerate() {
                    values[i0 + k] += wk;
                }
            }
        }
        _ => {
            let ny = grid.points[1];
            for p in points.rows() {
                let (i0, wx) = axis_kernel(grid, 0, p[0], h[0]);
                let (j0, wy) = axis_kernel(grid, 1, p[1], h[1]);
                for (a, wa) in wx.iter().enumerate() {
                    let row = &mut values[(i0 + a) * ny + j0..(i0 + a) * ny + j0 + wy.len()];
                    for (v, wb) in row.iter_mut().zip(&wy) {
                        *v += wa * wb;
                    }
                }
            }
        }
    }
    let mut g = GridDensity { grid: grid.clone(), values };
    g.normalize();
    Ok(g)
}

/// Separable Gaussian smoothing of a grid density with per-axis bandwidth `h`,
/// mass-preserving up to the boundary renormalization.
pub fn smooth(density: &GridDensity, h: &[f64]) -> Result<GridDensity, DiagnosticsError> {
    let grid = &density.grid;
    let d = grid.dim();
    check_grid_dim(grid, d)?;
    if h.len() != d {
        return Err(DiagnosticsError::DimensionMismatch { expected: d, got: h.len() });
    }
    let mut values = density.values.clone();
    for axis in 0..d {
        let n = grid.points[axis];
        let stride: usize = grid.points[axis + 1..].iter().product();
        let dx = grid.spacing(axis);
        // Offsets beyond the grid length never land on a node.
        let half = (KERNEL_RADIUS * h[axis] / dx).ceil().min(n as f64) as isize;
        let kernel: Vec<f64> = (-half..=half).map(|k| (-0.5 * (k as f64 * dx / h[axis]).powi(2)).exp()).collect();
        let mut out = vec![0.0; values.len()];
        for (start, _) in values.iter().enumerate().filter(|(i, _)| (i / stride) % n == 0) {
            // `start` is the first node of one line along `axis`.
            for i in 0..n {
                let v = values[start + i * stride];
                if v == 0.0 {
                    continue;
                }
                for (k, w) in kernel.iter().enumerate() {
                    let j = i as isize + k as isize - half;
                    if (0..n as isize).contains(&j) {
                        out[start + j as usize * stride] += v * w;
                    }
                }
            }
        }
        values = out;
    }
    let mut g = GridDensity { grid: grid.clone(), values };
    g.normalize();
    Ok(g)
}

/// The normalized target tabulated on `grid`.
pub fn target_on_grid(target: &TargetDensity, grid: &Grid) -> Result<GridDensity, DiagnosticsError> {
    check_grid_dim(grid, target.dim())?;
    let z = target.log_normalizer().ok_or(DiagnosticsError::MissingNormalizer)?;
    let mut values = vec![0.0; grid.len()];
    grid.for_each_point(|i, x| values[i] = (target.log_density_unnormalized(x) - z).exp());
    Ok(GridDensity { grid: grid.clone(), values })
}

/// What the particle KDE is compared against in [`KlEstimator`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlReference {
    /// `KL(f̂ ‖ π)`.
    Target,
    /// `KL(f̂ ‖ π * K_h)`: the target smoothed by the same kernel as the KDE,
    /// which cancels most of the kernel's variance inflation.
    SmoothedTarget,
}

/// KDE + grid-quadrature estimate of `KL(f_t ‖ π)`, with the tabulated target
/// cached across calls.
#[derive(Debug, Clone)]
pub struct KlEstimator {
    grid: Grid,
    rule: BandwidthRule,
    reference: KlReference,
    target: GridDensity,
}

impl KlEstimator {
    pub fn new(
        target: &TargetDensity,
        grid: Grid,
        rule: BandwidthRule,
        reference: KlReference,
    ) -> Result<Self, DiagnosticsError> {
        let target = target_on_grid(target, &grid)?;
        Ok(Self { grid, rule, reference, target })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn target_density(&self) -> &GridDensity {
        &self.target
    }

    pub fn estimate(&self, points: ArrayView2<'_, f64>) -> Result<f64, DiagnosticsError> {
        let h = self.rule.bandwidths(points)?;
        let f = kde_with_bandwidth(points, &self.grid, &h)?;
        Ok(match self.reference {
            KlReference::Target => f.kl_to(&self.target),
            KlReference::SmoothedTarget => f.kl_to(&smooth(&self.target, &h)?),
        })
    }
}

/// `∫ f̂ log(f̂/π)` with `f̂ = kde(points)` and the normalized target.
pub fn estimate_kl(
    points: ArrayView2<'_, f64>,
    target: &TargetDensity,
    grid: &Grid,
    rule: &BandwidthRule,
) -> Result<f64, DiagnosticsError> {
    let f = kde(points, grid, rule)?;
    Ok(f.kl_to(&target_on_grid(target, grid)?))
}

/// Target score evaluated at every row of `points`.
pub fn target_scores(target: &TargetDensity, points: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros(points.raw_dim());
    let mut buf = vec![0.0; points.ncols()];
    for (x, mut o) in points.rows().into_iter().zip(out.rows_mut()) {
        target.score(&x.to_vec(), &mut buf);
        o.assign(&ndarray::ArrayView1::from(&buf));
    }
    out
}

/// `Fⁿ = (1/n) Σ ‖s(Xⁱ) − ∇log π(Xⁱ)‖²`.
pub fn fisher_estimate(model: &ScoreModel, points: ArrayView2<'_, f64>, target: &TargetDensity) -> f64 {
    let s = model.forward_batch(points);
    fisher_from_scores(s.view(), target_scores(target, points).view())
}

pub fn fisher_from_scores(scores: ArrayView2<'_, f64>, target_scores: ArrayView2<'_, f64>) -> f64 {
    let diff = &scores - &target_scores;
    diff.iter().map(|v| v * v).sum::<f64>() / scores.nrows().max(1) as f64
}

/// Time derivative of a sampled series: second-order centered differences
/// (valid for non-uniform spacing) in the interior, one-sided at the ends.
pub fn dissipation_rate(t: &[f64], kl: &[f64]) -> Result<Vec<f64>, DiagnosticsError> {
    let n = t.len();
    if n < 3 {
        return Err(DiagnosticsError::TooFewSamples { needed: 3, got: n });
    }
    assert_eq!(n, kl.len());
    let mut out = vec![0.0; n];
    out[0] = (kl[1] - kl[0]) / (t[1] - t[0]);
    out[n - 1] = (kl[n - 1] - kl[n - 2]) / (t[n - 1] - t[n - 2]);
    for i in 1..n - 1 {
        let (h0, h1) = (t[i] - t[i - 1], t[i + 1] - t[i]);
        out[i] = (h0 * h0 * kl[i + 1] - h1 * h1 * kl[i - 1] + (h1 * h1 - h0 * h0) * kl[i]) / (h0 * h1 * (h0 + h1));
    }
    Ok(out)
}

/// Right-hand side of the annealed entropy identity,
/// `(1/n) Σ ⟨s − ∇log π_t, s − ∇log π⟩` at the particles. The left-hand side
/// is `−dKL/dt`, filled in afterwards from the KL series.
pub fn annealed_identity_rhs(
    model: &ScoreModel,
    points: ArrayView2<'_, f64>,
    schedule: &AnnealingSchedule,
    t: f64,
) -> f64 {
    let s = model.forward_batch(points);
    identity_rhs_from_scores(
        s.view(),
        schedule.scores(t, points).view(),
        target_scores(schedule.target(), points).view(),
    )
}

pub fn identity_rhs_from_scores(
    scores: ArrayView2<'_, f64>,
    annealed: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
) -> f64 {
    let a = &scores - &annealed;
    let b = &scores - &target;
    (&a * &b).sum() / scores.nrows().max(1) as f64
}

/// Grid L2 norm of `kde(points) − f_t` for the analytic Gaussian flow.
pub fn l2_error(
    points: ArrayView2<'_, f64>,
    analytic: &AnalyticSolution,
    t: f64,
    grid: &Grid,
    rule: &BandwidthRule,
) -> Result<f64, DiagnosticsError> {
    let f = kde(points, grid, rule)?;
    let mut exact = vec![0.0; grid.len()];
    grid.for_each_point(|i, x| exact[i] = analytic.density_at(t, x));
    Ok(f.l2_distance(&GridDensity { grid: grid.clone(), values: exact }))
}

/// Mean cosine between learned and target scores, skipping particles where
/// either norm is below `1e-12`. Returns NaN when every particle is skipped.
pub fn cosine_similarity(model: &ScoreModel, target: &TargetDensity, points: ArrayView2<'_, f64>) -> f64 {
    let s = model.forward_batch(points);
    cosine_from_scores(s.view(), target_scores(target, points).view())
}

pub fn cosine_from_scores(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    let (mut total, mut count) = (0.0, 0usize);
    for (u, v) in a.rows().into_iter().zip(b.rows()) {
        let (nu, nv) = (u.dot(&u).sqrt(), v.dot(&v).sqrt());
        if nu < 1e-12 || nv < 1e-12 {
            continue;
        }
        total += u.dot(&v) / (nu * nv);
        count += 1;
    }
    if count == 0 {
        f64::NAN
    } else {
        total / count as f64
    }
}

/// Dense NTK `H[(i,α),(j,β)] = Σ_k ∂_k s^α(Xⁱ) ∂_k s^β(Xʲ)`, rows ordered
/// particle-major.
pub fn ntk_matrix(model: &ScoreModel, points: ArrayView2<'_, f64>) -> Result<Array2<f64>, DiagnosticsError> {
    let (n, d) = points.dim();
    if n * d > NTK_MAX_SIZE {
        return Err(DiagnosticsError::NtkTooLarge { size: n * d, limit: NTK_MAX_SIZE });
    }
    let mut jac = Array2::zeros((n * d, model.param_count()));
    for (i, x) in points.rows().into_iter().enumerate() {
        let j = model.param_jacobian(&x.to_vec());
        jac.slice_mut(ndarray::s![i * d..(i + 1) * d, ..]).assign(&j);
    }
    Ok(jac.dot(&jac.t()))
}

/// Smallest eigenvalue of a symmetric matrix (dense symmetric eigensolve,
/// accurate to ~1e-10 relative to the largest eigenvalue). Inputs whose
/// asymmetry exceeds `1e-9 · max(1, max|H|)` are rejected.
pub fn ntk_min_eigenvalue(h: &Array2<f64>) -> Result<f64, DiagnosticsError> {
    let n = h.nrows();
    assert_eq!(n, h.ncols(), "matrix must be square");
    if n == 0 {
        return Ok(f64::NAN);
    }
    let scale = h.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let asym = (0..n).flat_map(|i| (0..i).map(move |j| (i, j))).fold(0.0f64, |m, (i, j)| m.max((h[[i, j]] - h[[j, i]]).abs()));
    if asym > 1e-9 * scale {
        return Err(DiagnosticsError::NotSymmetric(asym));
    }
    let m = DMatrix::from_fn(n, n, |i, j| 0.5 * (h[[i, j]] + h[[j, i]]));
    Ok(SymmetricEigen::new(m).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// One row of the diagnostics time series. Optional columns are empty in CSV
/// when not measured (e.g. `loss` for Langevin).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub loss: Option<f64>,
    pub kl: Option<f64>,
    pub fisher: Option<f64>,
    pub dissipation: Option<f64>,
    pub identity_lhs: Option<f64>,
    pub identity_rhs: Option<f64>,
    pub l2_error: Option<f64>,
    pub cosine_sim: Option<f64>,
}

impl DiagnosticsRecord {
    pub fn at(t: f64) -> Self {
        Self {
            t,
            loss: None,
            kl: None,
            fisher: None,
            dissipation: None,
            identity_lhs: None,
            identity_rhs: None,
            l2_error: None,
            cosine_sim: None,
        }
    }
}

/// Fills `dissipation = dKL/dt` and `identity_lhs = −dKL/dt` from the KL
/// column. Leaves the series untouched when fewer than three KL values exist.
pub fn finalize_series(records: &mut [DiagnosticsRecord]) {
    let idx: Vec<usize> = (0..records.len()).filter(|&i| records[i].kl.is_some_and(f64::is_finite)).collect();
    let t: Vec<f64> = idx.iter().map(|&i| records[i].t).collect();
    let kl: Vec<f64> = idx.iter().map(|&i| records[i].kl.unwrap()).collect();
    if let Ok(rate) = dissipation_rate(&t, &kl) {
        for (&i, r) in idx.iter().zip(rate) {
            records[i].dissipation = Some(r);
            records[i].identity_lhs = Some(-r);
        }
    }
}
