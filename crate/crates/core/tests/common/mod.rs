//! Checks shared by the property tests and the acceptance run.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use sbtm::densities::TargetDensity;
use sbtm::diagnostics::{ntk_matrix, ntk_min_eigenvalue};
use sbtm::grid::Grid;
use sbtm::losses::{
    denoising_loss_and_grad, explicit_mse_loss_and_grad, implicit_loss_and_grad, DivergenceMode, LossAndGrad,
    LossBatch,
};
use sbtm::score_model::{Architecture, ScoreModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `‖fd − s‖ / max(‖s‖, 1)` with a central difference of step `1e-5` on
/// `log π` per coordinate.
pub fn score_fd_error(target: &TargetDensity, x: &[f64]) -> f64 {
    let h = 1e-5;
    let s = target.score_vec(x);
    let mut y = x.to_vec();
    let mut err = 0.0;
    for k in 0..x.len() {
        y[k] = x[k] + h;
        let up = target.log_density_unnormalized(&y);
        y[k] = x[k] - h;
        let down = target.log_density_unnormalized(&y);
        y[k] = x[k];
        err += ((up - down) / (2.0 * h) - s[k]).powi(2);
    }
    let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
    err.sqrt() / norm.max(1.0)
}

/// Which loss a gradient check exercises.
#[derive(Debug, Clone, Copy)]
pub enum LossUnderTest {
    Explicit,
    ImplicitExact,
    ImplicitHutchinson,
    Denoising,
}

pub const ALL_LOSSES: [LossUnderTest; 4] =
    [LossUnderTest::Explicit, LossUnderTest::ImplicitExact, LossUnderTest::ImplicitHutchinson, LossUnderTest::Denoising];

fn eval_loss(kind: LossUnderTest, model: &ScoreModel, x: &Array2<f64>, reference: &Array2<f64>, seed: u64) -> LossAndGrad {
    // Reseeding per evaluation freezes the probes / noise, so the loss is a
    // deterministic function of the parameters.
    let mut r = rng(seed);
    let batch = LossBatch::new(x.view());
    match kind {
        LossUnderTest::Explicit => explicit_mse_loss_and_grad(model, &batch.with_reference(reference.view())).unwrap(),
        LossUnderTest::ImplicitExact => implicit_loss_and_grad(model, &batch, DivergenceMode::Exact, &mut r).unwrap(),
        LossUnderTest::ImplicitHutchinson => {
            implicit_loss_and_grad(model, &batch, DivergenceMode::Hutchinson { probes: 3 }, &mut r).unwrap()
        }
        LossUnderTest::Denoising => denoising_loss_and_grad(model, &batch, 0.3, &mut r).unwrap(),
    }
}

/// Relative error `‖g_fd − g‖ / ‖g‖` of the analytic parameter gradient of a
/// random small network against central differences (step 1e-6).
pub fn param_grad_error(kind: LossUnderTest, dim: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let model = ScoreModel::random(Architecture::new(dim, 6, 2), &mut r);
    let x = Array2::from_shape_fn((7, dim), |_| r.random_range(-2.0..2.0));
    let reference = Array2::from_shape_fn((7, dim), |_| r.random_range(-2.0..2.0));
    let g = eval_loss(kind, &model, &x, &reference, seed + 1).grad;
    let h = 1e-6;
    let mut m = model.clone();
    let mut num = 0.0;
    let mut den = 0.0;
    for p in 0..m.param_count() {
        let orig = m.params()[p];
        m.params_mut()[p] = orig + h;
        let up = eval_loss(kind, &m, &x, &reference, seed + 1).loss;
        m.params_mut()[p] = orig - h;
        let down = eval_loss(kind, &m, &x, &reference, seed + 1).loss;
        m.params_mut()[p] = orig;
        let fd = (up - down) / (2.0 * h);
        num += (fd - g[p]).powi(2);
        den += g[p] * g[p];
    }
    (num / den).sqrt()
}

/// Relative error of the `m`-probe Hutchinson divergence against the exact
/// one, averaged over a few points of a random network.
pub fn hutchinson_error(dim: usize, probes: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let model = ScoreModel::random(Architecture::new(dim, 16, 2), &mut r);
    let pts: Vec<Vec<f64>> = (0..4).map(|_| (0..dim).map(|_| r.random_range(-1.5..1.5)).collect()).collect();
    let exact: f64 = pts.iter().map(|x| model.divergence_exact(x)).sum();
    let est: f64 = pts.iter().map(|x| model.divergence_hutchinson(x, probes, &mut r)).sum();
    ((est - exact) / exact).abs()
}

/// `|∫(‖s‖² + 2∇·s) f + ∫‖∇log f‖² f − ∫‖s − ∇log f‖² f|` by quadrature on
/// a 1D grid, with `f = N(mean, var)` and a random network `s`.
pub fn integration_by_parts_gap(mean: f64, var: f64, seed: u64) -> f64 {
    let mut r = rng(seed);
    let model = ScoreModel::random(Architecture::new(1, 8, 2), &mut r);
    let grid = Grid::cube(1, mean - 12.0 * var.sqrt(), mean + 12.0 * var.sqrt(), 4001);
    let xs = grid.axis(0);
    let dx = grid.spacing(0);
    let f: Vec<f64> = xs.iter().map(|x| (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()).collect();
    let w: Array1<f64> = f.iter().map(|v| v * dx).collect();
    let pts = Array2::from_shape_vec((xs.len(), 1), xs.clone()).unwrap();
    let implicit = implicit_loss_and_grad(&model, &LossBatch::new(pts.view()).with_weights(w.view()), DivergenceMode::Exact, &mut r)
        .unwrap()
        .loss;
    let s = model.forward_batch(pts.view());
    let mut fisher_f = 0.0;
    let mut explicit = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let score = -(x - mean) / var;
        fisher_f += score * score * w[i];
        explicit += (s[[i, 0]] - score).powi(2) * w[i];
    }
    (implicit + fisher_f - explicit).abs()
}

/// Smallest NTK eigenvalue of a random network at random particles.
pub fn random_ntk_min_eigenvalue(seed: u64) -> f64 {
    let mut r = rng(seed);
    let dim = r.random_range(1..=2);
    let width = r.random_range(2..=12);
    let layers = r.random_range(0..=2);
    let n = r.random_range(1..=20);
    let model = ScoreModel::random(Architecture::new(dim, width, layers), &mut r);
    let x = Array2::from_shape_fn((n, dim), |_| r.random_range(-3.0..3.0));
    ntk_min_eigenvalue(&ntk_matrix(&model, x.view()).unwrap()).unwrap()
}
