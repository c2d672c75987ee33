//! Score-matching objectives and their parameter gradients.
//!
//! All losses are weighted means over a batch: uniform weights `1/B` for a
//! particle mini-batch, or quadrature weights when a batch stands in for an
//! integral against a known density.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::score_model::{coordinate_directions, rademacher, OutputAdjoint, ScoreModel};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("loss batch is empty")]
    EmptyBatch,
    #[error("explicit loss needs reference scores")]
    MissingReference,
    #[error("noise scale must be positive, got {0}")]
    NonPositiveNoise(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// How `∇·s` enters the implicit loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DivergenceMode {
    Exact,
    Hutchinson { probes: usize },
}

/// Points (and optionally reference scores / quadrature weights) for one loss
/// evaluation.
#[derive(Debug, Clone)]
pub struct LossBatch<'a> {
    pub points: ArrayView2<'a, f64>,
    pub reference_scores: Option<ArrayView2<'a, f64>>,
    pub weights: Option<ArrayView1<'a, f64>>,
}

impl<'a> LossBatch<'a> {
    pub fn new(points: ArrayView2<'a, f64>) -> Self {
        Self { points, reference_scores: None, weights: None }
    }

    pub fn with_reference(mut self, scores: ArrayView2<'a, f64>) -> Self {
        self.reference_scores = Some(scores);
        self
    }

    /// Replaces the uniform `1/B` weights; weights should sum to one when the
    /// batch approximates an expectation.
    pub fn with_weights(mut self, weights: ArrayView1<'a, f64>) -> Self {
        self.weights = Some(weights);
        self
    }

    fn validate(&self, dim: usize) -> Result<(), LossError> {
        let b = self.points.nrows();
        if b == 0 {
            return Err(LossError::EmptyBatch);
        }
        if self.points.ncols() != dim {
            return Err(LossError::Shape(format!("points have {} columns, model expects {dim}", self.points.ncols())));
        }
        if let Some(r) = &self.reference_scores {
            if r.dim() != self.points.dim() {
                return Err(LossError::Shape("reference scores must match points".into()));
            }
        }
        if let Some(w) = &self.weights {
            if w.len() != b {
                return Err(LossError::Shape("one weight per point".into()));
            }
        }
        Ok(())
    }

    fn weights_vec(&self) -> Array1<f64> {
        match &self.weights {
            Some(w) => w.to_owned(),
            None => Array1::from_elem(self.points.nrows(), 1.0 / self.points.nrows() as f64),
        }
    }
}

/// Loss value with its gradient over the model parameters.
#[derive(Debug, Clone)]
pub struct LossAndGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// `Σ_i w_i ‖s(Xⁱ) − yⁱ‖²` against known reference scores.
pub fn explicit_mse_loss(model: &ScoreModel, batch: &LossBatch<'_>) -> Result<f64, LossError> {
    batch.validate(model.dim())?;
    let reference = batch.reference_scores.ok_or(LossError::MissingReference)?;
    let out = model.forward_batch(batch.points);
    let w = batch.weights_vec();
    Ok(weighted_sq_error(&out, reference, &w))
}

pub fn explicit_mse_loss_and_grad(model: &ScoreModel, batch: &LossBatch<'_>) -> Result<LossAndGrad, LossError> {
    batch.validate(model.dim())?;
    let reference = batch.reference_scores.ok_or(LossError::MissingReference)?;
    let tape = model.forward_with_tangents(batch.points, &[]);
    let w = batch.weights_vec();
    let out = tape.primal().to_owned();
    let loss = weighted_sq_error(&out, reference, &w);
    let mut adj = &out - &reference;
    scale_rows(&mut adj, &w, 2.0);
    let grad = model.param_gradient(&tape, &OutputAdjoint { primal: adj, tangents: vec![] });
    Ok(LossAndGrad { loss, grad })
}

fn weighted_sq_error(out: &Array2<f64>, reference: ArrayView2<'_, f64>, w: &Array1<f64>) -> f64 {
    out.rows()
        .into_iter()
        .zip(reference.rows())
        .zip(w.iter())
        .map(|((a, b), wi)| wi * a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        .sum()
}

fn scale_rows(m: &mut Array2<f64>, w: &Array1<f64>, factor: f64) {
    for (mut row, wi) in m.rows_mut().into_iter().zip(w.iter()) {
        row *= factor * wi;
    }
}

fn implicit_directions<R: Rng + ?Sized>(b: usize, d: usize, mode: DivergenceMode, rng: &mut R) -> (Vec<Array2<f64>>, f64) {
    match mode {
        DivergenceMode::Exact => (coordinate_directions(b, d), 1.0),
        DivergenceMode::Hutchinson { probes } => {
            assert!(probes >= 1, "need at least one Hutchinson probe");
            ((0..probes).map(|_| rademacher(b, d, rng)).collect(), 1.0 / probes as f64)
        }
    }
}

/// `Σ_i w_i (‖s(Xⁱ)‖² + 2 ∇·s(Xⁱ))`, equal to `E‖s − ∇log f‖²` up to an
/// `s`-independent constant. The RNG is only used in Hutchinson mode.
pub fn implicit_loss<R: Rng + ?Sized>(
    model: &ScoreModel,
    batch: &LossBatch<'_>,
    mode: DivergenceMode,
    rng: &mut R,
) -> Result<f64, LossError> {
    Ok(implicit_loss_and_grad(model, batch, mode, rng)?.loss)
}

pub fn implicit_loss_and_grad<R: Rng + ?Sized>(
    model: &ScoreModel,
    batch: &LossBatch<'_>,
    mode: DivergenceMode,
    rng: &mut R,
) -> Result<LossAndGrad, LossError> {
    batch.validate(model.dim())?;
    let (b, d) = batch.points.dim();
    let (dirs, probe_weight) = implicit_directions(b, d, mode, rng);
    let tape = model.forward_with_tangents(batch.points, &dirs);
    let w = batch.weights_vec();
    let s = tape.primal();
    let mut per_point: Array1<f64> = s.rows().into_iter().map(|r| r.dot(&r)).collect();
    for (j, e) in dirs.iter().enumerate() {
        let jvp = tape.tangent(j);
        for (i, acc) in per_point.iter_mut().enumerate() {
            *acc += 2.0 * probe_weight * e.row(i).dot(&jvp.row(i));
        }
    }
    let loss = per_point.dot(&w);
    let mut primal = s.to_owned();
    scale_rows(&mut primal, &w, 2.0);
    let tangents = dirs
        .into_iter()
        .map(|mut e| {
            scale_rows(&mut e, &w, 2.0 * probe_weight);
            e
        })
        .collect();
    let grad = model.param_gradient(&tape, &OutputAdjoint { primal, tangents });
    Ok(LossAndGrad { loss, grad })
}

/// `Σ_i w_i ‖s(Xⁱ + σεⁱ) + εⁱ/σ‖²` with fresh standard-normal `εⁱ`.
pub fn denoising_loss<R: Rng + ?Sized>(
    model: &ScoreModel,
    batch: &LossBatch<'_>,
    noise_scale: f64,
    rng: &mut R,
) -> Result<f64, LossError> {
    Ok(denoising_loss_and_grad(model, batch, noise_scale, rng)?.loss)
}

pub fn denoising_loss_and_grad<R: Rng + ?Sized>(
    model: &ScoreModel,
    batch: &LossBatch<'_>,
    noise_scale: f64,
    rng: &mut R,
) -> Result<LossAndGrad, LossError> {
    if !(noise_scale > 0.0) {
        return Err(LossError::NonPositiveNoise(noise_scale));
    }
    batch.validate(model.dim())?;
    let eps = Array2::from_shape_fn(batch.points.raw_dim(), |_| rng.sample::<f64, _>(StandardNormal));
    let noisy = &batch.points + &(&eps * noise_scale);
    let target = eps.mapv(|e| -e / noise_scale);
    let sub = LossBatch { points: noisy.view(), reference_scores: Some(target.view()), weights: batch.weights };
    explicit_mse_loss_and_grad(model, &sub)
}

/// `(1/n) Σ ‖s(Xⁱ) − ∇log f(Xⁱ)‖²` against a known reference score field.
pub fn empirical_loss_ln(
    model: &ScoreModel,
    points: ArrayView2<'_, f64>,
    reference: impl Fn(&[f64], &mut [f64]),
) -> f64 {
    let out = model.forward_batch(points);
    let d = points.ncols();
    let mut r = vec![0.0; d];
    let mut total = 0.0;
    for (i, x) in points.rows().into_iter().enumerate() {
        let x = x.to_vec();
        reference(&x, &mut r);
        total += (0..d).map(|k| (out[[i, k]] - r[k]).powi(2)).sum::<f64>();
    }
    total / points.nrows() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score_model::Architecture;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn normal_points(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn explicit_loss_zero_at_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = normal_points(50, 2, &mut rng);
        let m = ScoreModel::linear(&[-1.0, 0.0, 0.0, -1.0], &[0.0, 0.0]);
        let reference = x.mapv(|v| -v);
        let batch = LossBatch::new(x.view()).with_reference(reference.view());
        assert_eq!(explicit_mse_loss(&m, &batch).unwrap(), 0.0);
        let own = m.forward_batch(x.view());
        let batch = LossBatch::new(x.view()).with_reference(own.view());
        assert_eq!(explicit_mse_loss(&m, &batch).unwrap(), 0.0);
    }

    #[test]
    fn explicit_loss_matches_independent_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = ScoreModel::random(Architecture::new(1, 8, 2), &mut rng);
        let x = normal_points(100, 1, &mut rng);
        let reference = x.mapv(|v| -v);
        let batch = LossBatch::new(x.view()).with_reference(reference.view());
        let l = explicit_mse_loss(&m, &batch).unwrap();
        let oracle: f64 = x.iter().map(|&xi| (m.forward(&[xi])[0] + xi).powi(2)).sum::<f64>() / 100.0;
        assert!((l - oracle).abs() < 1e-12);
    }

    #[test]
    fn explicit_loss_requires_reference() {
        let x = Array2::zeros((3, 1));
        let m = ScoreModel::zeros(Architecture::linear(1));
        assert_eq!(explicit_mse_loss(&m, &LossBatch::new(x.view())).unwrap_err(), LossError::MissingReference);
        let empty = Array2::<f64>::zeros((0, 1));
        assert_eq!(
            explicit_mse_loss(&m, &LossBatch::new(empty.view()).with_reference(empty.view())).unwrap_err(),
            LossError::EmptyBatch
        );
    }

    #[test]
    fn implicit_loss_of_zero_field_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = normal_points(20, 2, &mut rng);
        let m = ScoreModel::new(Architecture::new(2, 8, 2), &mut rng);
        assert_eq!(implicit_loss(&m, &LossBatch::new(x.view()), DivergenceMode::Exact, &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn implicit_loss_gaussian_quadrature_value() {
        // ∫ φ(x)(x² − 2) dx = −1 for s(x) = −x, f = N(0,1)
        let n = 4001;
        let h = 20.0 / (n - 1) as f64;
        let x = Array2::from_shape_fn((n, 1), |(i, _)| -10.0 + i as f64 * h);
        let w = x.column(0).mapv(|v| h * (-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt());
        let m = ScoreModel::linear(&[-1.0], &[0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = implicit_loss(&m, &LossBatch::new(x.view()).with_weights(w.view()), DivergenceMode::Exact, &mut rng).unwrap();
        assert!((l + 1.0).abs() < 1e-10, "{l}");
    }

    #[test]
    fn hutchinson_mode_agrees_with_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = ScoreModel::random(Architecture::new(2, 8, 2), &mut rng);
        let x = normal_points(5, 2, &mut rng);
        let batch = LossBatch::new(x.view());
        let exact = implicit_loss(&m, &batch, DivergenceMode::Exact, &mut rng).unwrap();
        // collect single-probe estimates to get a standard error
        let reps = 10_000;
        let vals: Vec<f64> = (0..reps)
            .map(|_| implicit_loss(&m, &batch, DivergenceMode::Hutchinson { probes: 1 }, &mut rng).unwrap())
            .collect();
        let mean = vals.iter().sum::<f64>() / reps as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        assert!((mean - exact).abs() <= 3.0 * sd / (reps as f64).sqrt());
    }

    #[test]
    fn denoising_rejects_nonpositive_noise() {
        let x = Array2::zeros((3, 1));
        let m = ScoreModel::zeros(Architecture::linear(1));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            denoising_loss(&m, &LossBatch::new(x.view()), 0.0, &mut rng).unwrap_err(),
            LossError::NonPositiveNoise(0.0)
        );
    }

    #[test]
    fn denoising_reproducible_and_scales_for_zero_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = normal_points(2000, 1, &mut rng);
        let m = ScoreModel::zeros(Architecture::linear(1));
        let a = denoising_loss(&m, &LossBatch::new(x.view()), 0.5, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = denoising_loss(&m, &LossBatch::new(x.view()), 0.5, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        // s ≡ 0: loss = mean ‖ε‖²/σ², so σ² · loss ≈ d
        for sigma in [1.0, 10.0, 100.0] {
            let l = denoising_loss(&m, &LossBatch::new(x.view()), sigma, &mut rng).unwrap();
            assert!((l * sigma * sigma - 1.0).abs() < 0.1);
        }
    }

    #[test]
    fn denoising_population_minimum_at_smoothed_score() {
        // f = N(0,1); population loss for s(x) = a·x, expectation over x ~ f, ε ~ N(0,1):
        // E(a(x + σε) + ε/σ)² = a²(1 + σ²) + 2a + 1/σ², minimized at a = −1/(1+σ²).
        // Evaluate by Gauss–Hermite-free tensor quadrature on a grid.
        let sigma = 0.3;
        let n = 801;
        let h = 16.0 / (n - 1) as f64;
        let grid: Vec<f64> = (0..n).map(|i| -8.0 + i as f64 * h).collect();
        let phi = |v: f64| (-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let population = |a: f64| {
            let mut total = 0.0;
            for &x in &grid {
                for &e in &grid {
                    total += phi(x) * phi(e) * h * h * (a * (x + sigma * e) + e / sigma).powi(2);
                }
            }
            total
        };
        let a_star = -1.0 / (1.0 + sigma * sigma);
        let at = population(a_star);
        for delta in [-0.05, 0.05] {
            assert!(population(a_star + delta) > at);
        }
        assert!((at - (a_star * a_star * (1.0 + sigma * sigma) + 2.0 * a_star + 1.0 / (sigma * sigma))).abs() < 1e-8);
    }

    #[test]
    fn empirical_loss_ln_zero_at_exact_weights_and_positive_otherwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let var: f64 = 0.6;
        let x = normal_points(100, 1, &mut rng).mapv(|v| v * var.sqrt());
        let reference = |p: &[f64], out: &mut [f64]| out[0] = -p[0] / var;
        let exact = ScoreModel::linear(&[-1.0 / var], &[0.0]);
        assert!(empirical_loss_ln(&exact, x.view(), reference) < 1e-28);
        let perturbed = ScoreModel::linear(&[-1.0 / var + 0.1], &[0.2]);
        let l = empirical_loss_ln(&perturbed, x.view(), reference);
        let hand: f64 = x.iter().map(|&v| (0.1 * v + 0.2).powi(2)).sum::<f64>() / 100.0;
        assert!(l > 0.0 && (l - hand).abs() < 1e-12);
    }
}
