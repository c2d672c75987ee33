//! Deterministic density sampling by score-based transport.
//!
//! Particles follow `dX/dt = ∇log π(X) − s(X)`, where `s` is a small residual
//! network trained online (implicit score matching) to approximate the score of
//! the current particle law. The crate also ships the stochastic counterpart
//! (unadjusted Langevin), SVGD, annealing schedules, a 1D Fokker–Planck grid
//! solver used as ground truth, and the entropy / Fisher-information
//! diagnostics used to check convergence rates.
//!
//! Module map:
//!
//! | module | contents |
//! |--------|----------|
//! | [`densities`] | targets, initial densities, the analytic Gaussian flow |
//! | [`score_model`] | residual MLP with forward-mode divergence and reverse-mode gradients, AdamW |
//! | [`losses`] | explicit MSE, implicit, denoising score matching |
//! | [`samplers`] | SBTM / Langevin / SVGD integrators and the run loop |
//! | [`diagnostics`] | KDE, KL, Fisher, dissipation, annealed identity, NTK |
//! | [`fp_oracle`] | 1D Fokker–Planck finite-volume solver |
//! | [`config`], [`cli`] | run configuration, presets and the command-line commands |

pub mod cli;
pub mod config;
pub mod densities;
pub mod diagnostics;
pub mod fp_oracle;
pub mod grid;
pub mod io;
pub mod losses;
pub mod samplers;
pub mod score_model;

pub use densities::{AnalyticSolution, InitialDensity, TargetDensity};
pub use diagnostics::{DiagnosticsRecord, GridDensity};
pub use samplers::{AnnealingSchedule, Ensemble, Method};
pub use score_model::{Activation, Architecture, ScoreModel};
