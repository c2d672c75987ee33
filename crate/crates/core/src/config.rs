//! Run configuration (TOML, schema version 1) and the shipped presets.
//!
//! Every field except `version`, `method`, `n`, `dt`, `final_time` and
//! `[target]` has a default; see the README for the full schema.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::densities::{
    make_gaussian_mixture, make_grid_mixture, make_noisy_circle, AnalyticSolution, DensityError, InitialDensity,
    IsotropicGaussian, TargetDensity,
};
use crate::diagnostics::{BandwidthRule, DiagnosticsError, KlEstimator, KlReference};
use crate::grid::Grid;
use crate::samplers::{
    AnnealingSchedule, Method, Recorder, RunSettings, SamplerError, SbtmConfig, ScheduleKind, TrainingConfig,
};
use crate::score_model::{Activation, Architecture};

pub const CONFIG_VERSION: u32 = 1;

/// Names accepted by `--preset`.
pub const PRESETS: [&str; 5] = ["exp1", "exp2", "exp3", "exp4", "exp5"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("line {line}: `{key}`: {message}")]
    Invalid { line: usize, key: String, message: String },
    #[error("`{key}`: {message}")]
    InvalidUnanchored { key: String, message: String },
    #[error("unknown preset `{0}` (available: exp1 … exp5)")]
    UnknownPreset(String),
    #[error("unsupported config version {0} (expected {CONFIG_VERSION})")]
    Version(u32),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetSpec {
    /// `N(mean, variance·I)`; mean defaults to the origin.
    Gaussian {
        dim: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mean: Option<Vec<f64>>,
        #[serde(default = "one")]
        variance: f64,
    },
    GaussianMixture { weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<f64> },
    NoisyCircle { center: [f64; 2], radius: f64, temperature: f64 },
    GridMixture { modes_per_side: usize, spacing: f64, variance: f64 },
}

impl TargetSpec {
    pub fn dim(&self) -> usize {
        match self {
            TargetSpec::Gaussian { dim, .. } => *dim,
            TargetSpec::GaussianMixture { means, .. } => means.first().map_or(0, Vec::len),
            TargetSpec::NoisyCircle { .. } | TargetSpec::GridMixture { .. } => 2,
        }
    }

    pub fn build(&self) -> Result<TargetDensity, ConfigError> {
        Ok(match self {
            TargetSpec::Gaussian { dim, mean, variance } => {
                TargetDensity::new(IsotropicGaussian::new(mean.clone().unwrap_or_else(|| vec![0.0; *dim]), *variance)?)
            }
            TargetSpec::GaussianMixture { weights, means, variances } => {
                make_gaussian_mixture(weights, means.clone(), variances)?
            }
            TargetSpec::NoisyCircle { center, radius, temperature } => make_noisy_circle(*center, *radius, *temperature)?,
            TargetSpec::GridMixture { modes_per_side, spacing, variance } => {
                make_grid_mixture(*modes_per_side, *spacing, *variance)?
            }
        })
    }

    fn is_standard_gaussian(&self) -> bool {
        matches!(self, TargetSpec::Gaussian { mean, variance, .. }
            if *variance == 1.0 && mean.as_ref().is_none_or(|m| m.iter().all(|v| *v == 0.0)))
    }
}

/// Isotropic Gaussian `f₀`; dimension follows the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub variance: f64,
}

impl Default for InitialSpec {
    fn default() -> Self {
        Self { mean: None, variance: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduleSpec {
    #[default]
    None,
    /// `duration` defaults to `final_time`.
    Geometric {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        duration: Option<f64>,
    },
    /// `t_min` defaults to `dt`.
    Dilation {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t_min: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub width: usize,
    /// Residual blocks; defaults to 3 in 1D and 5 otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden_layers: Option<usize>,
    pub activation: Activation,
    pub residual: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { width: 128, hidden_layers: None, activation: Activation::Tanh, residual: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSpec {
    pub record_every: usize,
    /// Write a particle snapshot every this many steps (and at the end).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<usize>,
    /// KDE/KL grid; defaults to `[-10, 10]^d` (2001 nodes in 1D, 401² in 2D).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Grid>,
    pub bandwidth: BandwidthRule,
    pub kl_reference: KlReference,
    /// Stop once the Fisher estimate drops to this value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub early_stop_fisher: Option<f64>,
    /// Compute the NTK minimum eigenvalue every this many steps (SBTM only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ntk_every: Option<usize>,
    /// Particles used for the NTK probe (`n·d ≤ 512`).
    pub ntk_particles: usize,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        Self {
            record_every: 10,
            snapshot_every: None,
            grid: None,
            bandwidth: BandwidthRule::Silverman,
            kl_reference: KlReference::SmoothedTarget,
            early_stop_fisher: None,
            ntk_every: None,
            ntk_particles: 64,
        }
    }
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub method: Method,
    pub n: usize,
    pub dt: f64,
    pub final_time: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub deterministic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub target: TargetSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
}

/// Everything derived from a config that the run loop needs.
#[derive(Debug, Clone)]
pub struct Problem {
    pub target: TargetDensity,
    pub initial: InitialDensity,
    pub schedule: AnnealingSchedule,
    pub analytic: Option<AnalyticSolution>,
    pub grid: Option<Grid>,
}

impl RunConfig {
    /// Parses and validates TOML. Validation errors carry the line of the
    /// offending key when it appears in `text`.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate().map_err(|(key, message)| match find_key_line(text, &key) {
            Some(line) => ConfigError::Invalid { line, key, message },
            None => ConfigError::InvalidUnanchored { key, message },
        })?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let text = preset_text(name).ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))?;
        Self::from_toml(text)
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    /// Returns the dotted key and message of the first problem found.
    pub fn validate(&self) -> Result<(), (String, String)> {
        let bad = |k: &str, m: String| Err((k.to_string(), m));
        if self.version != CONFIG_VERSION {
            return bad("version", format!("unsupported version {} (expected {CONFIG_VERSION})", self.version));
        }
        if self.n == 0 {
            return bad("n", "need at least one particle".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt", format!("must be positive, got {}", self.dt));
        }
        if !(self.final_time >= 0.0 && self.final_time.is_finite()) {
            return bad("final_time", format!("must be nonnegative, got {}", self.final_time));
        }
        if self.dim() == 0 {
            return bad("target", "dimension must be at least 1".into());
        }
        if self.method == Method::Svgd && self.n < 2 {
            return bad("n", "SVGD needs at least two particles".into());
        }
        if let Err(e) = self.target.build() {
            return bad("target", e.to_string());
        }
        if let Some(m) = &self.initial.mean {
            if m.len() != self.dim() {
                return bad("mean", format!("initial mean has length {}, target dimension is {}", m.len(), self.dim()));
            }
        }
        if !(self.initial.variance > 0.0) {
            return bad("variance", "initial variance must be positive".into());
        }
        match self.schedule {
            ScheduleSpec::Geometric { duration: Some(d) } if !(d > 0.0) => {
                return bad("duration", "geometric duration must be positive".into())
            }
            ScheduleSpec::Dilation { t_min: Some(t) } if !(t > 0.0) => return bad("t_min", "must be positive".into()),
            _ => {}
        }
        if self.model.width == 0 {
            return bad("width", "must be positive".into());
        }
        let tr = &self.training;
        if !(tr.learning_rate > 0.0) {
            return bad("learning_rate", "must be positive".into());
        }
        if tr.batch_size == 0 {
            return bad("batch_size", "must be positive".into());
        }
        if !(tr.noise_scale > 0.0) {
            return bad("noise_scale", "must be positive".into());
        }
        if let crate::losses::DivergenceMode::Hutchinson { probes: 0 } = tr.divergence {
            return bad("probes", "need at least one probe".into());
        }
        if self.diagnostics.record_every == 0 {
            return bad("record_every", "must be positive".into());
        }
        if let Some(g) = &self.diagnostics.grid {
            if g.dim() != self.dim() || g.points.iter().any(|&p| p < 2) || g.lo.iter().zip(&g.hi).any(|(a, b)| a >= b) {
                return bad("grid", "grid must match the target dimension with lo < hi and ≥ 2 points".into());
            }
        }
        if let BandwidthRule::Fixed { h } = &self.diagnostics.bandwidth {
            if h.is_empty() || h.iter().any(|v| !(*v > 0.0)) {
                return bad("bandwidth", "fixed bandwidths must be positive".into());
            }
        }
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        let d = self.dim();
        let layers = self.model.hidden_layers.unwrap_or(if d == 1 { 3 } else { 5 });
        Architecture {
            input_dim: d,
            width: self.model.width,
            hidden_layers: layers,
            activation: self.model.activation,
            residual: self.model.residual,
        }
    }

    pub fn schedule_kind(&self) -> ScheduleKind {
        match self.schedule {
            ScheduleSpec::None => ScheduleKind::None,
            ScheduleSpec::Geometric { duration } => ScheduleKind::Geometric { duration: duration.unwrap_or(self.final_time) },
            ScheduleSpec::Dilation { t_min } => {
                ScheduleKind::Dilation { final_time: self.final_time, t_min: t_min.unwrap_or(self.dt) }
            }
        }
    }

    /// Grid used by the KL/L2 estimators; `None` for `d > 2`.
    pub fn grid(&self) -> Option<Grid> {
        match self.dim() {
            1 | 2 => Some(self.diagnostics.grid.clone().unwrap_or_else(|| Grid::default_for_dim(self.dim()))),
            _ => None,
        }
    }

    pub fn problem(&self) -> Result<Problem, ConfigError> {
        let d = self.dim();
        let grid = self.grid();
        let mut target = self.target.build()?;
        if let Some(g) = &grid {
            target = target.with_quadrature_normalizer(g);
        }
        let mean = self.initial.mean.clone().unwrap_or_else(|| vec![0.0; d]);
        let initial = InitialDensity::new(IsotropicGaussian::new(mean.clone(), self.initial.variance)?);
        let schedule = AnnealingSchedule::new(self.schedule_kind(), initial.clone(), target.clone())?;
        let analytic = (self.target.is_standard_gaussian()
            && mean.iter().all(|m| *m == 0.0)
            && self.schedule == ScheduleSpec::None)
            .then(|| AnalyticSolution::new(d, self.initial.variance));
        Ok(Problem { target, initial, schedule, analytic, grid })
    }

    pub fn settings(&self) -> RunSettings {
        RunSettings {
            method: self.method,
            n: self.n,
            sbtm: SbtmConfig {
                dt: self.dt,
                final_time: self.final_time,
                training: self.training.clone(),
                deterministic: self.deterministic,
                seed: self.seed,
            },
            record_every: self.diagnostics.record_every,
            snapshot_every: self.diagnostics.snapshot_every,
            early_stop_fisher: self.diagnostics.early_stop_fisher,
        }
    }

    pub fn recorder(&self, problem: &Problem) -> Result<Recorder, ConfigError> {
        let Some(grid) = &problem.grid else {
            return Ok(Recorder::default());
        };
        let kl = KlEstimator::new(
            &problem.target,
            grid.clone(),
            self.diagnostics.bandwidth.clone(),
            self.diagnostics.kl_reference,
        )?;
        let analytic = problem.analytic.map(|a| (a, grid.clone(), self.diagnostics.bandwidth.clone()));
        Ok(Recorder { kl: Some(kl), analytic })
    }
}

/// 1-based line of `key = …` (or a `[...key]` table header), first match.
fn find_key_line(text: &str, key: &str) -> Option<usize> {
    let leaf = key.rsplit('.').next().unwrap_or(key);
    text.lines().position(|l| {
        let l = l.trim_start();
        let header = l.starts_with('[') && l.trim_end().trim_matches(|c| c == '[' || c == ']').rsplit('.').next() == Some(leaf);
        header || l.strip_prefix(leaf).is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

pub fn preset_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "exp1" => include_str!("../presets/exp1.toml"),
        "exp2" => include_str!("../presets/exp2.toml"),
        "exp3" => include_str!("../presets/exp3.toml"),
        "exp4" => include_str!("../presets/exp4.toml"),
        "exp5" => include_str!("../presets/exp5.toml"),
        _ => return None,
    })
}
