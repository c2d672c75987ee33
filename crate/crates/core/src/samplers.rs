//! Particle integrators (SBTM, Langevin, SVGD), annealing schedules, network
//! pretraining and the run loop that ties them to the diagnostics.

use nalgebra::{DMatrix, DVector};
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::densities::{AnalyticSolution, InitialDensity, TargetDensity};
use crate::diagnostics::{
    cosine_from_scores, finalize_series, fisher_from_scores, identity_rhs_from_scores, kde, target_scores,
    BandwidthRule, DiagnosticsError, DiagnosticsRecord, GridDensity, KlEstimator,
};
use crate::grid::Grid;
use crate::losses::{
    denoising_loss_and_grad, explicit_mse_loss, explicit_mse_loss_and_grad, implicit_loss_and_grad, DivergenceMode,
    LossBatch, LossError,
};
use crate::score_model::{adamw_step, OptimizerState, ScoreModel};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("non-finite coordinate in particle {particle} at step {step} (t = {t})")]
    NonFinite { step: usize, t: f64, particle: usize },
    #[error("non-finite training loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error("invalid settings: {0}")]
    Invalid(String),
    #[error("observer aborted the run: {0}")]
    Observer(String),
}

/// Sampling method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Sbtm,
    Langevin,
    Svgd,
    /// SBTM transport with the network replaced by the score of the Gaussian
    /// fitted to the current particles. Exact whenever `f_t` is Gaussian.
    SbtmBypass,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Sbtm => "sbtm",
            Method::Langevin => "langevin",
            Method::Svgd => "svgd",
            Method::SbtmBypass => "sbtm-bypass",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sbtm" => Ok(Method::Sbtm),
            "langevin" => Ok(Method::Langevin),
            "svgd" => Ok(Method::Svgd),
            "sbtm-bypass" => Ok(Method::SbtmBypass),
            other => Err(format!("unknown method `{other}` (expected sbtm, langevin, svgd or sbtm-bypass)")),
        }
    }
}

/// `n` particles in `d` dimensions at time `t`, with the RNG that drives
/// Langevin noise, mini-batch selection and Hutchinson probes.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub positions: Array2<f64>,
    pub time: f64,
    pub rng: ChaCha8Rng,
}

impl Ensemble {
    pub fn new(positions: Array2<f64>, rng: ChaCha8Rng) -> Self {
        Self { positions, time: 0.0, rng }
    }

    /// `n` iid draws from `initial`, positions and dynamics seeded from `seed`
    /// on separate streams.
    pub fn sample(initial: &InitialDensity, n: usize, seed: u64) -> Self {
        let mut init_rng = stream(seed, 0);
        let positions = initial.sample(n, &mut init_rng);
        Self::new(positions, stream(seed, 2))
    }

    pub fn len(&self) -> usize {
        self.positions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.positions.ncols()
    }

    fn check_finite(&self, step: usize) -> Result<(), SamplerError> {
        match self.positions.rows().into_iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            Some(particle) => Err(SamplerError::NonFinite { step, t: self.time, particle }),
            None => Ok(()),
        }
    }
}

/// Independent ChaCha stream `k` for a base seed.
pub fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

/// How the drift target moves from `f₀` to `π`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScheduleKind {
    None,
    /// `∇log π_t = (1−τ)∇log f₀ + τ∇log π`, `τ = min(t/duration, 1)`.
    Geometric { duration: f64 },
    /// `∇log π_t(x) = (T/t̃)∇log π((T/t̃)x)`, `t̃ = max(t, t_min)`.
    Dilation { final_time: f64, t_min: f64 },
}

/// A schedule bound to its endpoint densities.
#[derive(Debug, Clone)]
pub struct AnnealingSchedule {
    kind: ScheduleKind,
    initial: InitialDensity,
    target: TargetDensity,
}

impl AnnealingSchedule {
    pub fn new(kind: ScheduleKind, initial: InitialDensity, target: TargetDensity) -> Result<Self, SamplerError> {
        match kind {
            ScheduleKind::Geometric { duration } if !(duration > 0.0) => {
                return Err(SamplerError::Invalid(format!("geometric duration must be positive, got {duration}")))
            }
            ScheduleKind::Dilation { final_time, t_min } if !(final_time > 0.0 && t_min > 0.0) => {
                return Err(SamplerError::Invalid(format!(
                    "dilation needs positive final_time and t_min, got {final_time} and {t_min}"
                )))
            }
            _ => {}
        }
        if initial.dim() != target.dim() {
            return Err(SamplerError::Invalid("initial and target dimensions differ".into()));
        }
        Ok(Self { kind, initial, target })
    }

    pub fn none(initial: InitialDensity, target: TargetDensity) -> Self {
        Self { kind: ScheduleKind::None, initial, target }
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn target(&self) -> &TargetDensity {
        &self.target
    }

    pub fn initial(&self) -> &InitialDensity {
        &self.initial
    }

    /// Interpolation weight of the geometric path.
    pub fn tau(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Geometric { duration } => (t / duration).clamp(0.0, 1.0),
            _ => 1.0,
        }
    }

    fn dilation_factor(final_time: f64, t_min: f64, t: f64) -> f64 {
        final_time / t.max(t_min)
    }

    /// `∇log π_t(x)`.
    pub fn score(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match self.kind {
            ScheduleKind::None => self.target.score(x, out),
            ScheduleKind::Geometric { .. } => {
                let tau = self.tau(t);
                let mut f0 = vec![0.0; x.len()];
                self.initial.score(x, &mut f0);
                self.target.score(x, out);
                for (o, a) in out.iter_mut().zip(&f0) {
                    *o = (1.0 - tau) * a + tau * *o;
                }
            }
            ScheduleKind::Dilation { final_time, t_min } => {
                let c = Self::dilation_factor(final_time, t_min, t);
                let y: Vec<f64> = x.iter().map(|v| c * v).collect();
                self.target.score(&y, out);
                out.iter_mut().for_each(|o| *o *= c);
            }
        }
    }

    pub fn scores(&self, t: f64, points: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros(points.raw_dim());
        let mut buf = vec![0.0; points.ncols()];
        for (x, mut o) in points.rows().into_iter().zip(out.rows_mut()) {
            self.score(t, &x.to_vec(), &mut buf);
            o.assign(&ndarray::ArrayView1::from(&buf));
        }
        out
    }

    /// Unnormalized `log π_t(x)`, consistent with [`Self::score`].
    pub fn log_density(&self, t: f64, x: &[f64]) -> f64 {
        match self.kind {
            ScheduleKind::None => self.target.log_density_unnormalized(x),
            ScheduleKind::Geometric { .. } => {
                let tau = self.tau(t);
                (1.0 - tau) * self.initial.log_density(x) + tau * self.target.log_density_unnormalized(x)
            }
            ScheduleKind::Dilation { final_time, t_min } => {
                let c = Self::dilation_factor(final_time, t_min, t);
                let y: Vec<f64> = x.iter().map(|v| c * v).collect();
                self.target.log_density_unnormalized(&y)
            }
        }
    }
}

/// Loss minimized by the inner training steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Implicit,
    Denoising,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    /// Stop once the explicit MSE on a fresh sample from `f₀` is at most this.
    pub tolerance: f64,
    pub max_steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Size of the fresh sample used for the convergence check.
    pub check_size: usize,
    pub check_every: usize,
    /// Adam ε for pretraining; the explicit loss has no overfitting mode, so
    /// the usual small value is fine here.
    pub epsilon: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-3,
            max_steps: 20_000,
            learning_rate: 1e-3,
            batch_size: 400,
            check_size: 2000,
            check_every: 100,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Optimizer steps per outer step (`K`).
    pub inner_steps: usize,
    pub loss: LossKind,
    pub divergence: DivergenceMode,
    pub noise_scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub pretrain: PretrainConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            batch_size: 400,
            inner_steps: 10,
            loss: LossKind::Implicit,
            divergence: DivergenceMode::Exact,
            noise_scale: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-4,
            pretrain: PretrainConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn optimizer(&self, param_count: usize) -> OptimizerState {
        OptimizerState::new(param_count, self.learning_rate).with_hyperparameters(
            self.beta1,
            self.beta2,
            self.epsilon,
            self.weight_decay,
        )
    }
}

/// Time stepping and training knobs of one SBTM run.
#[derive(Debug, Clone, PartialEq)]
pub struct SbtmConfig {
    pub dt: f64,
    pub final_time: f64,
    pub training: TrainingConfig,
    pub deterministic: bool,
    pub seed: u64,
}

impl SbtmConfig {
    /// `round(T/dt)`; the run ends within one step of `T`.
    pub fn steps(&self) -> usize {
        (self.final_time / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub steps: usize,
    pub final_loss: f64,
    pub converged: bool,
}

/// Fits `model` to `∇log f₀` with the explicit MSE on fresh draws from `f₀`.
/// Non-convergence is reported, not fatal.
pub fn pretrain(
    model: &mut ScoreModel,
    initial: &InitialDensity,
    config: &PretrainConfig,
    training: &TrainingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PretrainReport, SamplerError> {
    if config.tolerance.is_infinite() {
        return Ok(PretrainReport { steps: 0, final_loss: f64::NAN, converged: true });
    }
    let with_scores = |x: Array2<f64>| {
        let mut s = Array2::zeros(x.raw_dim());
        let mut buf = vec![0.0; x.ncols()];
        for (p, mut o) in x.rows().into_iter().zip(s.rows_mut()) {
            initial.score(&p.to_vec(), &mut buf);
            o.assign(&ndarray::ArrayView1::from(&buf));
        }
        (x, s)
    };
    let check = |model: &ScoreModel, rng: &mut ChaCha8Rng| -> Result<f64, SamplerError> {
        let (x, s) = with_scores(initial.sample(config.check_size.max(1), rng));
        Ok(explicit_mse_loss(model, &LossBatch::new(x.view()).with_reference(s.view()))?)
    };
    let mut opt = OptimizerState::new(model.param_count(), config.learning_rate).with_hyperparameters(
        training.beta1,
        training.beta2,
        config.epsilon,
        training.weight_decay,
    );
    let mut loss = check(model, rng)?;
    let mut steps = 0;
    while loss > config.tolerance && steps < config.max_steps {
        let (x, s) = with_scores(initial.sample(config.batch_size.max(1), rng));
        let lg = explicit_mse_loss_and_grad(model, &LossBatch::new(x.view()).with_reference(s.view()))?;
        adamw_step(model, &mut opt, &lg.grad);
        steps += 1;
        if steps % config.check_every.max(1) == 0 || steps == config.max_steps {
            loss = check(model, rng)?;
            if !loss.is_finite() {
                return Err(SamplerError::NonFiniteLoss { step: 0 });
            }
        }
    }
    Ok(PretrainReport { steps, final_loss: loss, converged: loss <= config.tolerance })
}

/// One inner optimizer step on a batch; returns the loss before the update.
fn train_once(
    model: &mut ScoreModel,
    opt: &mut OptimizerState,
    batch: ArrayView2<'_, f64>,
    training: &TrainingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64, SamplerError> {
    let lb = LossBatch::new(batch);
    let lg = match training.loss {
        LossKind::Implicit => implicit_loss_and_grad(model, &lb, training.divergence, rng)?,
        LossKind::Denoising => denoising_loss_and_grad(model, &lb, training.noise_scale, rng)?,
    };
    adamw_step(model, opt, &lg.grad);
    Ok(lg.loss)
}

/// K inner steps over the current particles: a fresh permutation per call,
/// consecutive disjoint chunks of it per inner step (wrapping with a
/// reshuffle once exhausted). Returns the mean inner loss, NaN when `K = 0`.
pub fn train_on_ensemble(
    model: &mut ScoreModel,
    opt: &mut OptimizerState,
    ensemble: &mut Ensemble,
    training: &TrainingConfig,
) -> Result<f64, SamplerError> {
    let n = ensemble.len();
    if training.inner_steps == 0 {
        return Ok(f64::NAN);
    }
    let b = training.batch_size.clamp(1, n);
    let mut total = 0.0;
    if b == n {
        for _ in 0..training.inner_steps {
            total += train_once(model, opt, ensemble.positions.view(), training, &mut ensemble.rng)?;
        }
    } else {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ensemble.rng);
        let mut cursor = 0;
        for _ in 0..training.inner_steps {
            if cursor + b > n {
                perm.shuffle(&mut ensemble.rng);
                cursor = 0;
            }
            let batch = ensemble.positions.select(Axis(0), &perm[cursor..cursor + b]);
            cursor += b;
            total += train_once(model, opt, batch.view(), training, &mut ensemble.rng)?;
        }
    }
    Ok(total / training.inner_steps as f64)
}

/// Forward-Euler transport `X += dt(∇log π_t(X) − s(X))` at the already
/// advanced time `ensemble.time`.
fn transport(ensemble: &mut Ensemble, schedule: &AnnealingSchedule, scores: ArrayView2<'_, f64>, dt: f64) {
    let drift = schedule.scores(ensemble.time, ensemble.positions.view()) - scores;
    ensemble.positions.scaled_add(dt, &drift);
}

/// Train (K inner steps) then transport; advances time by `dt`. Returns the
/// mean training loss of the inner steps.
pub fn sbtm_step(
    ensemble: &mut Ensemble,
    model: &mut ScoreModel,
    optimizer: &mut OptimizerState,
    schedule: &AnnealingSchedule,
    config: &SbtmConfig,
) -> Result<f64, SamplerError> {
    ensemble.time += config.dt;
    let loss = train_on_ensemble(model, optimizer, ensemble, &config.training)?;
    let s = model.forward_batch(ensemble.positions.view());
    transport(ensemble, schedule, s.view(), config.dt);
    Ok(loss)
}

/// Score of the Gaussian fitted to the particles, `−Σ̂⁻¹(x − μ̂)`.
pub fn gaussian_fit_scores(points: ArrayView2<'_, f64>) -> Array2<f64> {
    let (n, d) = points.dim();
    let mean = points.mean_axis(Axis(0)).unwrap();
    let centered = &points - &mean;
    let cov = centered.t().dot(&centered) / n as f64;
    let cov = DMatrix::from_fn(d, d, |i, j| cov[[i, j]]);
    let prec = cov.try_inverse().unwrap_or_else(|| DMatrix::zeros(d, d));
    let mut out = Array2::zeros((n, d));
    for (c, mut o) in centered.rows().into_iter().zip(out.rows_mut()) {
        let v = -(&prec * DVector::from_iterator(d, c.iter().cloned()));
        o.assign(&Array1::from_iter(v.iter().cloned()));
    }
    out
}

/// SBTM transport with the Gaussian-fit score in place of the network.
pub fn bypass_step(ensemble: &mut Ensemble, schedule: &AnnealingSchedule, dt: f64) {
    let s = gaussian_fit_scores(ensemble.positions.view());
    ensemble.time += dt;
    transport(ensemble, schedule, s.view(), dt);
}

/// Euler–Maruyama for `dX = ∇log π_t(X)dt + √2 dB`.
pub fn langevin_step(ensemble: &mut Ensemble, schedule: &AnnealingSchedule, dt: f64) {
    ensemble.time += dt;
    let drift = schedule.scores(ensemble.time, ensemble.positions.view());
    let amp = (2.0 * dt).sqrt();
    let rng = &mut ensemble.rng;
    let noise = Array2::from_shape_simple_fn(ensemble.positions.raw_dim(), || {
        let z: f64 = StandardNormal.sample(rng);
        z
    });
    ensemble.positions.scaled_add(dt, &drift);
    ensemble.positions.scaled_add(amp, &noise);
}

/// Median-heuristic RBF bandwidth `med²/log n` over all pairwise distances,
/// floored at `1e-8`.
pub fn svgd_bandwidth(points: ArrayView2<'_, f64>) -> f64 {
    let n = points.nrows();
    if n < 2 {
        return 1e-8;
    }
    let mut dist = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        let xi = points.row(i);
        for j in i + 1..n {
            let xj = points.row(j);
            dist.push(xi.iter().zip(xj.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt());
        }
    }
    let m = dist.len();
    let mid = m / 2;
    let (_, &mut upper, _) = dist.select_nth_unstable_by(mid, f64::total_cmp);
    let med = if m % 2 == 1 {
        upper
    } else {
        let lower = dist[..mid].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    let log_n = (n as f64).ln();
    (med * med / log_n).max(1e-8)
}

/// `Xⁱ += dt · (1/n) Σⱼ [k(Xʲ,Xⁱ)∇log π_t(Xʲ) + ∇_{Xʲ}k(Xʲ,Xⁱ)]`, RBF kernel
/// `k = exp(−‖x−y‖²/h)` with the median bandwidth.
pub fn svgd_step(ensemble: &mut Ensemble, schedule: &AnnealingSchedule, dt: f64) -> Result<(), SamplerError> {
    let (n, d) = ensemble.positions.dim();
    if n < 2 {
        return Err(SamplerError::Invalid("SVGD needs at least two particles".into()));
    }
    ensemble.time += dt;
    let x = &ensemble.positions;
    let h = svgd_bandwidth(x.view());
    let grad = schedule.scores(ensemble.time, x.view());
    let mut phi = Array2::<f64>::zeros((n, d));
    let mut diff = vec![0.0; d];
    for i in 0..n {
        let xi = x.row(i);
        let mut acc = vec![0.0; d];
        for j in 0..n {
            let xj = x.row(j);
            let mut r2 = 0.0;
            for k in 0..d {
                diff[k] = xj[k] - xi[k];
                r2 += diff[k] * diff[k];
            }
            let kern = (-r2 / h).exp();
            for k in 0..d {
                acc[k] += kern * (grad[[j, k]] - 2.0 * diff[k] / h);
            }
        }
        for k in 0..d {
            phi[[i, k]] = acc[k] / n as f64;
        }
    }
    ensemble.positions.scaled_add(dt, &phi);
    Ok(())
}

/// What the run loop measures at each record.
#[derive(Debug, Clone, Default)]
pub struct Recorder {
    pub kl: Option<KlEstimator>,
    /// Enables `l2_error` against the analytic Gaussian flow.
    pub analytic: Option<(AnalyticSolution, Grid, BandwidthRule)>,
}

impl Recorder {
    fn record(
        &self,
        ensemble: &Ensemble,
        schedule: &AnnealingSchedule,
        scores: Option<ArrayView2<'_, f64>>,
        loss: Option<f64>,
    ) -> Result<DiagnosticsRecord, SamplerError> {
        let x = ensemble.positions.view();
        let t = ensemble.time;
        let mut r = DiagnosticsRecord::at(t);
        r.loss = loss.filter(|l| l.is_finite());
        if let Some(kl) = &self.kl {
            r.kl = Some(kl.estimate(x)?);
        }
        if let Some(s) = scores {
            let target = target_scores(schedule.target(), x);
            r.fisher = Some(fisher_from_scores(s, target.view()));
            r.cosine_sim = Some(cosine_from_scores(s, target.view()));
            let annealed = match schedule.kind() {
                ScheduleKind::None => target.clone(),
                _ => schedule.scores(t, x),
            };
            r.identity_rhs = Some(identity_rhs_from_scores(s, annealed.view(), target.view()));
        }
        if let Some((analytic, grid, rule)) = &self.analytic {
            let f = kde(x, grid, rule)?;
            let mut exact = vec![0.0; grid.len()];
            grid.for_each_point(|i, p| exact[i] = analytic.density_at(t, p));
            r.l2_error = Some(f.l2_distance(&GridDensity::from_values(grid.clone(), exact)?));
        }
        Ok(r)
    }
}

/// Everything the run loop needs besides the problem definition.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub method: Method,
    pub n: usize,
    pub sbtm: SbtmConfig,
    pub record_every: usize,
    pub snapshot_every: Option<usize>,
    pub early_stop_fisher: Option<f64>,
}

/// Hooks called by [`run`]. Returning `Err` aborts the run.
pub trait RunObserver {
    fn on_pretrained(&mut self, _model: &ScoreModel, _report: &PretrainReport) -> Result<(), String> {
        Ok(())
    }

    /// Called at every recorded step with the record as measured (dissipation
    /// columns are filled only after the run).
    fn on_record(
        &mut self,
        _step: usize,
        _ensemble: &Ensemble,
        _model: Option<&ScoreModel>,
        _record: &DiagnosticsRecord,
    ) -> Result<(), String> {
        Ok(())
    }

    fn on_snapshot(&mut self, _step: usize, _ensemble: &Ensemble) -> Result<(), String> {
        Ok(())
    }
}

/// Observer that ignores everything.
pub struct NoObserver;

impl RunObserver for NoObserver {}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    EarlyStopped { t: f64 },
    Failed,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub ensemble: Ensemble,
    pub model: Option<ScoreModel>,
    pub records: Vec<DiagnosticsRecord>,
    pub pretrain: Option<PretrainReport>,
    pub status: RunStatus,
    pub steps: usize,
}

/// A failed run with whatever was produced before the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub error: SamplerError,
    pub partial: RunOutput,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "run failed after {} steps: {}", self.partial.steps, self.error)
    }
}

impl std::error::Error for RunFailure {}

struct Runner<'a> {
    settings: &'a RunSettings,
    schedule: &'a AnnealingSchedule,
    recorder: &'a Recorder,
    out: RunOutput,
    optimizer: Option<OptimizerState>,
}

impl Runner<'_> {
    fn current_scores(&self) -> Option<Array2<f64>> {
        let x = self.out.ensemble.positions.view();
        match self.settings.method {
            Method::Sbtm => self.out.model.as_ref().map(|m| m.forward_batch(x)),
            Method::SbtmBypass => Some(gaussian_fit_scores(x)),
            _ => None,
        }
    }

    fn record(&mut self, step: usize, loss: Option<f64>, observer: &mut dyn RunObserver) -> Result<bool, SamplerError> {
        let scores = self.current_scores();
        let rec = self.recorder.record(&self.out.ensemble, self.schedule, scores.as_ref().map(|s| s.view()), loss)?;
        observer.on_record(step, &self.out.ensemble, self.out.model.as_ref(), &rec).map_err(SamplerError::Observer)?;
        let stop = matches!((self.settings.early_stop_fisher, rec.fisher), (Some(eps), Some(f)) if f <= eps);
        self.out.records.push(rec);
        Ok(stop)
    }

    fn step(&mut self) -> Result<Option<f64>, SamplerError> {
        let cfg = &self.settings.sbtm;
        let ens = &mut self.out.ensemble;
        match self.settings.method {
            Method::Sbtm => {
                let model = self.out.model.as_mut().expect("SBTM run without a model");
                let opt = self.optimizer.as_mut().expect("SBTM run without an optimizer");
                let loss = sbtm_step(ens, model, opt, self.schedule, cfg)?;
                if cfg.training.inner_steps > 0 && !loss.is_finite() {
                    return Err(SamplerError::NonFiniteLoss { step: self.out.steps + 1 });
                }
                Ok(Some(loss))
            }
            Method::SbtmBypass => {
                bypass_step(ens, self.schedule, cfg.dt);
                Ok(None)
            }
            Method::Langevin => {
                langevin_step(ens, self.schedule, cfg.dt);
                Ok(None)
            }
            Method::Svgd => {
                svgd_step(ens, self.schedule, cfg.dt)?;
                Ok(None)
            }
        }
    }

    fn go(&mut self, observer: &mut dyn RunObserver) -> Result<(), SamplerError> {
        let s = self.settings;
        if s.method == Method::Sbtm {
            let model = self.out.model.as_mut().expect("SBTM run without a model");
            let mut rng = stream(s.sbtm.seed, 3);
            let report = pretrain(model, self.schedule.initial(), &s.sbtm.training.pretrain, &s.sbtm.training, &mut rng)?;
            observer.on_pretrained(model, &report).map_err(SamplerError::Observer)?;
            self.out.pretrain = Some(report);
            self.optimizer = Some(s.sbtm.training.optimizer(model.param_count()));
        }
        let total = s.sbtm.steps();
        if total == 0 {
            return Ok(());
        }
        let record_every = s.record_every.max(1);
        if self.record(0, None, observer)? {
            self.out.status = RunStatus::EarlyStopped { t: self.out.ensemble.time };
            return Ok(());
        }
        if s.snapshot_every.is_some() {
            observer.on_snapshot(0, &self.out.ensemble).map_err(SamplerError::Observer)?;
        }
        for step in 1..=total {
            let loss = self.step()?;
            self.out.steps = step;
            self.out.ensemble.check_finite(step)?;
            if s.snapshot_every.is_some_and(|k| step % k.max(1) == 0 || step == total) {
                observer.on_snapshot(step, &self.out.ensemble).map_err(SamplerError::Observer)?;
            }
            if (step % record_every == 0 || step == total) && self.record(step, loss, observer)? {
                self.out.status = RunStatus::EarlyStopped { t: self.out.ensemble.time };
                return Ok(());
            }
        }
        Ok(())
    }
}

/// Pretrains (SBTM only), then integrates `round(T/dt)` steps, recording
/// diagnostics at step 0, every `record_every` steps and at the last step.
/// `T = 0` returns the initial ensemble and an empty series.
pub fn run(
    settings: &RunSettings,
    schedule: &AnnealingSchedule,
    ensemble: Ensemble,
    model: Option<ScoreModel>,
    recorder: &Recorder,
    observer: &mut dyn RunObserver,
) -> Result<RunOutput, Box<RunFailure>> {
    let out = RunOutput { ensemble, model, records: Vec::new(), pretrain: None, status: RunStatus::Completed, steps: 0 };
    let mut runner = Runner { settings, schedule, recorder, out, optimizer: None };
    let check = || -> Result<(), SamplerError> {
        if settings.method == Method::Sbtm && runner.out.model.is_none() {
            return Err(SamplerError::Invalid("SBTM needs a score model".into()));
        }
        if !(settings.sbtm.dt > 0.0) || !(settings.sbtm.final_time >= 0.0) {
            return Err(SamplerError::Invalid("dt must be positive and T nonnegative".into()));
        }
        if runner.out.ensemble.dim() != schedule.target().dim() {
            return Err(SamplerError::Invalid("ensemble and target dimensions differ".into()));
        }
        Ok(())
    };
    let result = check().and_then(|_| runner.go(observer));
    finalize_series(&mut runner.out.records);
    match result {
        Ok(()) => Ok(runner.out),
        Err(error) => {
            runner.out.status = RunStatus::Failed;
            Err(Box::new(RunFailure { error, partial: runner.out }))
        }
    }
}

/// Runs `steps` outer SBTM steps from an already prepared state and returns
/// the wall-clock seconds per step; used for scaling measurements.
pub fn time_sbtm_steps(
    ensemble: &mut Ensemble,
    model: &mut ScoreModel,
    schedule: &AnnealingSchedule,
    config: &SbtmConfig,
    steps: usize,
) -> Result<f64, SamplerError> {
    let mut opt = config.training.optimizer(model.param_count());
    let start = std::time::Instant::now();
    for _ in 0..steps {
        sbtm_step(ensemble, model, &mut opt, schedule, config)?;
    }
    Ok(start.elapsed().as_secs_f64() / steps.max(1) as f64)
}

/// Slice helper for the first `k` particles.
pub fn head(points: &Array2<f64>, k: usize) -> ArrayView2<'_, f64> {
    points.slice(s![..k.min(points.nrows()), ..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::{make_gaussian_mixture_1d, make_standard_gaussian, IsotropicGaussian};
    use crate::score_model::Architecture;

    fn std_problem(d: usize) -> (TargetDensity, InitialDensity) {
        make_standard_gaussian(d)
    }

    fn base_config(dt: f64, t: f64) -> SbtmConfig {
        SbtmConfig { dt, final_time: t, training: TrainingConfig::default(), deterministic: true, seed: 1 }
    }

    #[test]
    fn geometric_endpoints_and_affine_path() {
        let target = make_gaussian_mixture_1d(&[0.25, 0.75], &[-4.0, 4.0], &[1.0, 1.0]).unwrap();
        let initial = InitialDensity::standard(1);
        let sched = AnnealingSchedule::new(ScheduleKind::Geometric { duration: 2.0 }, initial.clone(), target.clone()).unwrap();
        let mut out = [0.0];
        for x in [-3.0, -0.5, 0.0, 1.7, 5.0] {
            let f0 = -x;
            let pi = target.score_vec(&[x])[0];
            sched.score(0.0, &[x], &mut out);
            assert!((out[0] - f0).abs() < 1e-15);
            sched.score(2.0, &[x], &mut out);
            assert!((out[0] - pi).abs() < 1e-15);
            sched.score(7.0, &[x], &mut out);
            assert!((out[0] - pi).abs() < 1e-15);
            for t in [0.3, 1.0, 1.9] {
                sched.score(t, &[x], &mut out);
                let (lo, hi) = if f0 < pi { (f0, pi) } else { (pi, f0) };
                assert!(out[0] >= lo - 1e-12 && out[0] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn dilation_is_identity_at_final_time_and_clamped_below() {
        let (target, initial) = std_problem(2);
        let sched =
            AnnealingSchedule::new(ScheduleKind::Dilation { final_time: 4.0, t_min: 0.5 }, initial, target.clone()).unwrap();
        let x = [0.3, -1.2];
        let mut out = [0.0; 2];
        sched.score(4.0, &x, &mut out);
        assert_eq!(out.to_vec(), target.score_vec(&x));
        // Standard Gaussian: (T/t)·(−(T/t)x) = −(T/t)²x, clamped at t_min.
        sched.score(0.0, &x, &mut out);
        assert!((out[0] + 64.0 * 0.3).abs() < 1e-12);
        sched.score(2.0, &x, &mut out);
        assert!((out[1] - 4.0 * 1.2).abs() < 1e-12);
        assert!(AnnealingSchedule::new(
            ScheduleKind::Dilation { final_time: 1.0, t_min: 0.0 },
            InitialDensity::standard(2),
            target
        )
        .is_err());
    }

    #[test]
    fn schedule_log_density_is_consistent_with_score() {
        let target = make_gaussian_mixture_1d(&[0.5, 0.5], &[-1.0, 2.0], &[1.0, 0.5]).unwrap();
        let initial = InitialDensity::standard(1);
        for kind in [
            ScheduleKind::None,
            ScheduleKind::Geometric { duration: 3.0 },
            ScheduleKind::Dilation { final_time: 3.0, t_min: 0.1 },
        ] {
            let sched = AnnealingSchedule::new(kind, initial.clone(), target.clone()).unwrap();
            for (t, x) in [(0.5, 0.3), (1.5, -1.1), (2.9, 2.2)] {
                let h = 1e-5;
                let fd = (sched.log_density(t, &[x + h]) - sched.log_density(t, &[x - h])) / (2.0 * h);
                let mut s = [0.0];
                sched.score(t, &[x], &mut s);
                assert!((fd - s[0]).abs() < 1e-6 * (1.0 + s[0].abs()), "{kind:?} {fd} {}", s[0]);
            }
        }
    }

    #[test]
    fn untrained_zero_score_step_is_gradient_ascent() {
        let (target, initial) = std_problem(1);
        let sched = AnnealingSchedule::none(initial.clone(), target);
        let mut ens = Ensemble::sample(&initial, 50, 3);
        let before = ens.positions.clone();
        let mut model = ScoreModel::zeros(Architecture::new(1, 4, 1));
        let mut cfg = base_config(0.01, 0.01);
        cfg.training.inner_steps = 0;
        let mut opt = cfg.training.optimizer(model.param_count());
        sbtm_step(&mut ens, &mut model, &mut opt, &sched, &cfg).unwrap();
        for (a, b) in ens.positions.iter().zip(before.iter()) {
            assert!((a - b * 0.99).abs() < 1e-15);
        }
        assert!((ens.time - 0.01).abs() < 1e-15);
    }

    #[test]
    fn pretraining_a_linear_model_recovers_the_gaussian_score() {
        let initial = InitialDensity::standard(1);
        let mut model = ScoreModel::zeros(Architecture::linear(1));
        let cfg = PretrainConfig { tolerance: 1e-4, max_steps: 20_000, learning_rate: 1e-2, ..Default::default() };
        let mut rng = stream(0, 3);
        let report = pretrain(&mut model, &initial, &cfg, &TrainingConfig::default(), &mut rng).unwrap();
        assert!(report.converged, "{report:?}");
        assert!(report.final_loss <= 1e-4);
        assert!((model.params()[0] + 1.0).abs() < 0.02 && model.params()[1].abs() < 0.02, "{:?}", model.params());
    }

    #[test]
    fn pretraining_with_infinite_tolerance_is_a_no_op() {
        let initial = InitialDensity::standard(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = ScoreModel::new(Architecture::new(1, 8, 1), &mut rng);
        let before = model.clone();
        let cfg = PretrainConfig { tolerance: f64::INFINITY, ..Default::default() };
        let report = pretrain(&mut model, &initial, &cfg, &TrainingConfig::default(), &mut rng).unwrap();
        assert_eq!(report.steps, 0);
        assert_eq!(model, before);
    }

    #[test]
    fn pretraining_is_reproducible() {
        let initial = AnalyticSolution::shifted_standard(1).initial();
        let train = || {
            let mut rng = stream(5, 1);
            let mut model = ScoreModel::new(Architecture::new(1, 16, 2), &mut rng);
            let cfg = PretrainConfig { tolerance: 1e-2, max_steps: 300, ..Default::default() };
            pretrain(&mut model, &initial, &cfg, &TrainingConfig::default(), &mut stream(5, 3)).unwrap();
            model
        };
        assert_eq!(train().params(), train().params());
    }

    #[test]
    fn exact_linear_score_tracks_the_analytic_variance() {
        // A linear model kept equal to the current Gaussian score −x/σ_t².
        let analytic = AnalyticSolution::shifted_standard(1);
        let (target, _) = std_problem(1);
        let initial = analytic.initial();
        let sched = AnnealingSchedule::none(initial.clone(), target);
        let n = 20_000;
        let mut ens = Ensemble::sample(&initial, n, 8);
        let dt = 0.002;
        let mut cfg = base_config(dt, 1.0);
        cfg.training.inner_steps = 0;
        let mut model = ScoreModel::linear(&[-1.0 / analytic.variance_at(0.0)], &[0.0]);
        let mut opt = cfg.training.optimizer(model.param_count());
        for _ in 0..500 {
            model.params_mut()[0] = -1.0 / analytic.variance_at(ens.time);
            sbtm_step(&mut ens, &mut model, &mut opt, &sched, &cfg).unwrap();
        }
        let var = ens.positions.var(0.0);
        let exact = analytic.variance_at(ens.time);
        let tol = 3.0 * exact * (2.0 / n as f64).sqrt() + 5.0 * dt;
        assert!((var - exact).abs() < tol, "{var} vs {exact}");
    }

    #[test]
    fn bypass_variance_follows_the_analytic_ode() {
        let analytic = AnalyticSolution::shifted_standard(1);
        let (target, _) = std_problem(1);
        let initial = analytic.initial();
        let sched = AnnealingSchedule::none(initial.clone(), target);
        let n = 1000;
        let mut ens = Ensemble::sample(&initial, n, 2);
        let v0 = ens.positions.var(0.0);
        let dt = 0.002;
        for _ in 0..1250 {
            bypass_step(&mut ens, &sched, dt);
        }
        // The fitted-Gaussian flow maps the empirical variance exactly through
        // the ODE dσ²/dt = 2(1 − σ²), up to the Euler error.
        let exact = 1.0 - (1.0 - v0) * (-2.0 * ens.time).exp();
        assert!((ens.positions.var(0.0) - exact).abs() < 5.0 * dt);
    }

    #[test]
    fn gaussian_fit_score_matches_closed_form_in_2d() {
        let pts = ndarray::arr2(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 2.0], [0.0, -2.0]]);
        let s = gaussian_fit_scores(pts.view());
        // Covariance diag(0.5, 2).
        assert!((s[[0, 0]] + 2.0).abs() < 1e-12 && s[[0, 1]].abs() < 1e-12);
        assert!((s[[2, 1]] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn langevin_stationary_variance_matches_discrete_ou() {
        let (target, initial) = std_problem(1);
        let sched = AnnealingSchedule::none(initial, target);
        let dt = 0.05;
        // Stationary variance of x ← (1−dt)x + √(2dt)ξ is 2dt/(1−(1−dt)²) = 2/(2−dt).
        let v_inf: f64 = 2.0 / (2.0 - dt);
        let n = 10_000;
        let mut rng = stream(4, 0);
        let pos = Array2::from_shape_simple_fn((n, 1), || {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * v_inf.sqrt()
        });
        let mut ens = Ensemble::new(pos, stream(4, 2));
        let mut vars = Vec::new();
        for _ in 0..2000 {
            langevin_step(&mut ens, &sched, dt);
            vars.push(ens.positions.var(0.0));
        }
        let mean_var = vars.iter().sum::<f64>() / vars.len() as f64;
        assert!((mean_var - v_inf).abs() < 0.01, "{mean_var} vs {v_inf}");
    }

    #[test]
    fn langevin_is_reproducible() {
        let (target, initial) = std_problem(2);
        let sched = AnnealingSchedule::none(initial.clone(), target);
        let go = || {
            let mut ens = Ensemble::sample(&initial, 20, 9);
            for _ in 0..10 {
                langevin_step(&mut ens, &sched, 0.01);
            }
            ens.positions
        };
        assert_eq!(go(), go());
    }

    #[test]
    fn svgd_preserves_symmetry_and_handles_degenerate_ensembles() {
        let (target, initial) = std_problem(1);
        let sched = AnnealingSchedule::none(initial.clone(), target.clone());
        let mut ens = Ensemble::new(ndarray::arr2(&[[-1.5], [1.5]]), stream(0, 2));
        for _ in 0..20 {
            svgd_step(&mut ens, &sched, 0.05).unwrap();
        }
        assert!((ens.positions[[0, 0]] + ens.positions[[1, 0]]).abs() < 1e-12);

        let mut same = Ensemble::new(Array2::from_elem((5, 2), 0.7), stream(0, 2));
        let sched2 = AnnealingSchedule::none(InitialDensity::standard(2), std_problem(2).0);
        assert_eq!(svgd_bandwidth(same.positions.view()), 1e-8);
        svgd_step(&mut same, &sched2, 0.1).unwrap();
        assert!(same.positions.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn svgd_moves_particles_towards_the_mean() {
        let target = TargetDensity::new(IsotropicGaussian::new(vec![2.0], 1.0).unwrap());
        let initial = InitialDensity::standard(1);
        let sched = AnnealingSchedule::none(initial.clone(), target);
        let mut ens = Ensemble::sample(&initial, 30, 1);
        for _ in 0..500 {
            svgd_step(&mut ens, &sched, 0.05).unwrap();
        }
        let mean = ens.positions.mean().unwrap();
        assert!((mean - 2.0).abs() < 0.1, "{mean}");
    }

    #[test]
    fn median_bandwidth_matches_hand_computation() {
        // Distances {1, 2, 3}: median 2, h = 4/ln 3.
        let pts = ndarray::arr2(&[[0.0], [1.0], [3.0]]);
        assert!((svgd_bandwidth(pts.view()) - 4.0 / 3f64.ln()).abs() < 1e-12);
        // Four points: distances {1,1,1,2,2,3}; median (1+2)/2.
        let pts = ndarray::arr2(&[[0.0], [1.0], [2.0], [3.0]]);
        assert!((svgd_bandwidth(pts.view()) - 2.25 / 4f64.ln()).abs() < 1e-12);
    }

    fn tiny_sbtm_settings(t: f64) -> RunSettings {
        let mut sbtm = base_config(0.01, t);
        sbtm.training.batch_size = 32;
        sbtm.training.inner_steps = 2;
        sbtm.training.pretrain = PretrainConfig { tolerance: 0.5, max_steps: 200, ..Default::default() };
        RunSettings { method: Method::Sbtm, n: 64, sbtm, record_every: 2, snapshot_every: Some(5), early_stop_fisher: None }
    }

    fn run_tiny(settings: &RunSettings) -> RunOutput {
        let (target, initial) = std_problem(1);
        let sched = AnnealingSchedule::none(initial.clone(), target);
        let ens = Ensemble::sample(&initial, settings.n, settings.sbtm.seed);
        let model = ScoreModel::new(Architecture::new(1, 8, 1), &mut stream(settings.sbtm.seed, 1));
        run(settings, &sched, ens, Some(model), &Recorder::default(), &mut NoObserver).unwrap()
    }

    #[test]
    fn zero_final_time_returns_initial_ensemble() {
        let s = tiny_sbtm_settings(0.0);
        let out = run_tiny(&s);
        assert!(out.records.is_empty());
        assert_eq!(out.steps, 0);
        let (_, initial) = std_problem(1);
        assert_eq!(out.ensemble.positions, Ensemble::sample(&initial, 64, 1).positions);
    }

    #[test]
    fn sbtm_runs_are_bit_identical() {
        let s = tiny_sbtm_settings(0.1);
        let a = run_tiny(&s);
        let b = run_tiny(&s);
        assert_eq!(a.ensemble.positions, b.ensemble.positions);
        assert_eq!(a.model.unwrap().params(), b.model.unwrap().params());
        assert_eq!(a.steps, 10);
        // Steps 0, 2, 4, 6, 8, 10.
        assert_eq!(a.records.len(), 6);
        assert!(a.records.iter().all(|r| r.fisher.is_some() && r.dissipation.is_none()));
    }

    #[test]
    fn early_stop_on_fisher_threshold() {
        let mut s = tiny_sbtm_settings(1.0);
        s.early_stop_fisher = Some(f64::INFINITY);
        let out = run_tiny(&s);
        assert_eq!(out.status, RunStatus::EarlyStopped { t: 0.0 });
        assert_eq!(out.records.len(), 1);
    }

    #[test]
    fn blow_up_is_reported_with_partial_output() {
        let (target, initial) = std_problem(1);
        let sched = AnnealingSchedule::none(initial.clone(), target);
        let settings = RunSettings {
            method: Method::Langevin,
            n: 10,
            sbtm: base_config(5.0, 5000.0),
            record_every: 1,
            snapshot_every: None,
            early_stop_fisher: None,
        };
        let ens = Ensemble::sample(&initial, 10, 0);
        let err = run(&settings, &sched, ens, None, &Recorder::default(), &mut NoObserver).unwrap_err();
        assert!(matches!(err.error, SamplerError::NonFinite { .. }), "{}", err.error);
        assert_eq!(err.partial.status, RunStatus::Failed);
        assert!(!err.partial.records.is_empty());
    }
}
