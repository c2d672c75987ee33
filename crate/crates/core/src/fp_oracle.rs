//! One-dimensional Fokker–Planck reference solver for
//! `∂_t f = ∂_xx f − ∂_x(f ∂_x log π_t)`.
//!
//! Finite volumes on a node grid with the Scharfetter–Gummel (exponentially
//! fitted upwind) flux
//!
//! ```text
//! J_{i+½} = (B(−Δᵢ) fᵢ − B(Δᵢ) f_{i+1}) / h,   Δᵢ = log π_t(x_{i+1}) − log π_t(x_i),
//! ```
//!
//! with `B(z) = z/(eᶻ − 1)`, no-flux walls and forward Euler in time. The
//! flux reduces to first-order upwinding when `|Δ|` is large and to central
//! differencing when it is small; it vanishes identically on `f ∝ π_t`, so
//! the tabulated target is an exact discrete steady state. Mass is conserved
//! to rounding.
//!
//! Stability: `dt ≤ h²/(2 + h·max|∂_x log π_t|)`, checked at construction.

use thiserror::Error;

use crate::diagnostics::GridDensity;
use crate::grid::Grid;
use crate::samplers::{AnnealingSchedule, ScheduleKind};

#[derive(Debug, Error, PartialEq)]
pub enum FpError {
    #[error("time step {dt} violates the stability bound {bound}")]
    Cfl { dt: f64, bound: f64 },
    #[error("the Fokker–Planck oracle is one-dimensional, got d = {0}")]
    NotOneDimensional(usize),
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
}

/// Default oracle grid: `[−12, 12]` with `h = 0.01`.
pub fn default_grid() -> Grid {
    Grid::cube(1, -12.0, 12.0, 2401)
}

/// Density on the grid at time `t` together with the scheme parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FpGridState {
    pub density: GridDensity,
    pub t: f64,
    pub h: f64,
    pub dt: f64,
}

impl FpGridState {
    pub fn mass(&self) -> f64 {
        self.density.mass()
    }

    pub fn variance(&self) -> f64 {
        self.density.moments(0).1
    }
}

/// `B(z) = z/(eᶻ − 1)`, with the series near zero.
fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-6 {
        1.0 - 0.5 * z + z * z / 12.0
    } else {
        z / z.exp_m1()
    }
}

/// Explicit solver bound to a grid, time step and schedule.
#[derive(Debug, Clone)]
pub struct FpSolver {
    grid: Grid,
    dt: f64,
    schedule: AnnealingSchedule,
    // Node values of log f₀ and log π, reused when the path is not dilated.
    log_f0: Vec<f64>,
    log_pi: Vec<f64>,
    nodes: Vec<f64>,
}

impl FpSolver {
    pub fn new(grid: Grid, dt: f64, schedule: AnnealingSchedule) -> Result<Self, FpError> {
        if grid.dim() != 1 {
            return Err(FpError::NotOneDimensional(grid.dim()));
        }
        if !(dt > 0.0) {
            return Err(FpError::NonPositiveStep(dt));
        }
        let nodes = grid.axis(0);
        let log_f0 = nodes.iter().map(|x| schedule.initial().log_density(&[*x])).collect();
        let log_pi = nodes.iter().map(|x| schedule.target().log_density_unnormalized(&[*x])).collect();
        let solver = Self { grid, dt, schedule, log_f0, log_pi, nodes };
        let bound = solver.stability_bound();
        if dt > bound {
            return Err(FpError::Cfl { dt, bound });
        }
        Ok(solver)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn h(&self) -> f64 {
        self.grid.spacing(0)
    }

    /// `h²/(2 + h·max|a|)` over the times where the drift is largest: both
    /// endpoints of a geometric path, the smallest dilation time, or `π`.
    pub fn stability_bound(&self) -> f64 {
        let times: Vec<f64> = match self.schedule.kind() {
            ScheduleKind::None => vec![0.0],
            ScheduleKind::Geometric { duration } => vec![0.0, duration],
            ScheduleKind::Dilation { final_time, t_min } => vec![t_min, final_time],
        };
        let h = self.h();
        let max_a = times
            .iter()
            .map(|&t| {
                let phi = self.log_potential(t);
                phi.windows(2).map(|w| ((w[1] - w[0]) / h).abs()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        h * h / (2.0 + h * max_a)
    }

    /// Node values of `log π_t`.
    fn log_potential(&self, t: f64) -> Vec<f64> {
        match self.schedule.kind() {
            ScheduleKind::None => self.log_pi.clone(),
            ScheduleKind::Geometric { .. } => {
                let tau = self.schedule.tau(t);
                self.log_f0.iter().zip(&self.log_pi).map(|(a, b)| (1.0 - tau) * a + tau * b).collect()
            }
            ScheduleKind::Dilation { .. } => self.nodes.iter().map(|x| self.schedule.log_density(t, &[*x])).collect(),
        }
    }

    /// `f₀` tabulated and normalized on the grid, at `t = 0`.
    pub fn initial_state(&self) -> FpGridState {
        let init = self.schedule.initial().clone();
        FpGridState {
            density: GridDensity::from_log_fn(self.grid.clone(), |x| init.log_density(x)),
            t: 0.0,
            h: self.h(),
            dt: self.dt,
        }
    }

    /// Starts from an arbitrary density on this solver's grid.
    pub fn state_from(&self, density: GridDensity, t: f64) -> FpGridState {
        assert_eq!(density.grid, self.grid, "density lives on a different grid");
        FpGridState { density, t, h: self.h(), dt: self.dt }
    }

    /// One explicit step of size `dt` (at most the solver's step).
    pub fn step_by(&self, state: &mut FpGridState, dt: f64) {
        let h = self.h();
        let phi = self.log_potential(state.t);
        let f = &mut state.density.values;
        let n = f.len();
        let mut flux = vec![0.0; n - 1];
        for i in 0..n - 1 {
            let d = phi[i + 1] - phi[i];
            flux[i] = (bernoulli(-d) * f[i] - bernoulli(d) * f[i + 1]) / h;
        }
        let c = dt / h;
        f[0] -= c * flux[0];
        for i in 1..n - 1 {
            f[i] -= c * (flux[i] - flux[i - 1]);
        }
        f[n - 1] += c * flux[n - 2];
        state.t += dt;
    }

    pub fn step(&self, state: &mut FpGridState) {
        self.step_by(state, self.dt)
    }

    /// Advances to exactly `t_end` with equal steps no larger than `dt`.
    pub fn advance_to(&self, state: &mut FpGridState, t_end: f64) {
        let span = t_end - state.t;
        if span <= 0.0 {
            return;
        }
        let k = (span / self.dt - 1e-9).ceil().max(1.0) as usize;
        let dt = span / k as f64;
        for _ in 0..k {
            self.step_by(state, dt);
        }
        state.t = t_end;
    }

    /// States at the requested (sorted, nonnegative) times.
    pub fn solve(&self, record_times: &[f64]) -> Vec<FpGridState> {
        let mut state = self.initial_state();
        let mut out = Vec::with_capacity(record_times.len());
        for &t in record_times {
            self.advance_to(&mut state, t);
            out.push(state.clone());
        }
        out
    }

    /// The final target normalized on the grid.
    pub fn target_density(&self) -> GridDensity {
        let target = self.schedule.target().clone();
        GridDensity::from_log_fn(self.grid.clone(), |x| target.log_density_unnormalized(x))
    }
}

/// `(t, KL(f_t‖π))` at the requested times, by grid quadrature.
pub fn fp_kl_trajectory(solver: &FpSolver, record_times: &[f64]) -> Vec<(f64, f64)> {
    let pi = solver.target_density();
    solver.solve(record_times).into_iter().map(|s| (s.t, s.density.kl_to(&pi))).collect()
}

/// Density floor below which [`fp_score`] masks a node.
pub const SCORE_FLOOR: f64 = 1e-14;

/// Central difference of `log f` at interior nodes; `None` at the two ends
/// and wherever a stencil value is below [`SCORE_FLOOR`].
pub fn fp_score(state: &FpGridState) -> Vec<Option<f64>> {
    let f = &state.density.values;
    let h = state.density.grid.spacing(0);
    let n = f.len();
    (0..n)
        .map(|i| {
            if i == 0 || i == n - 1 || f[i - 1] < SCORE_FLOOR || f[i + 1] < SCORE_FLOOR || f[i] < SCORE_FLOOR {
                None
            } else {
                Some((f[i + 1].ln() - f[i - 1].ln()) / (2.0 * h))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::{
        make_gaussian_mixture_1d, make_standard_gaussian, AnalyticSolution, FnDensity, InitialDensity, IsotropicGaussian,
        TargetDensity,
    };

    fn analytic_solver(h: f64, dt: f64) -> FpSolver {
        let an = AnalyticSolution::shifted_standard(1);
        let (target, _) = make_standard_gaussian(1);
        let points = (24.0 / h).round() as usize + 1;
        FpSolver::new(Grid::cube(1, -12.0, 12.0, points), dt, AnnealingSchedule::none(an.initial(), target)).unwrap()
    }

    #[test]
    fn bernoulli_function_is_smooth_through_zero() {
        for z in [-1e-5, -1e-7, 0.0, 1e-7, 1e-5] {
            let series = bernoulli(z);
            let reference = if z == 0.0 { 1.0 } else { z / z.exp_m1() };
            assert!((series - reference).abs() < 1e-12);
        }
        assert!((bernoulli(2.0) - 2.0 / (2f64.exp() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let an = AnalyticSolution::shifted_standard(1);
        let (target, _) = make_standard_gaussian(1);
        let err = FpSolver::new(default_grid(), 1e-3, AnnealingSchedule::none(an.initial(), target)).unwrap_err();
        assert!(matches!(err, FpError::Cfl { .. }));
    }

    #[test]
    fn normalized_target_is_stationary() {
        let target = make_gaussian_mixture_1d(&[0.25, 0.75], &[-2.0, 2.0], &[1.0, 1.0]).unwrap();
        let solver = FpSolver::new(default_grid(), 4e-5, AnnealingSchedule::none(InitialDensity::standard(1), target)).unwrap();
        let mut state = solver.state_from(solver.target_density(), 0.0);
        let before = state.density.values.clone();
        solver.step(&mut state);
        let change = state.density.values.iter().zip(&before).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(change <= 1e-8 * solver.dt(), "{change}");
    }

    #[test]
    fn mass_and_positivity_are_preserved() {
        let target = make_gaussian_mixture_1d(&[0.25, 0.75], &[-4.0, 4.0], &[1.0, 1.0]).unwrap();
        let sched = AnnealingSchedule::new(ScheduleKind::Geometric { duration: 2.0 }, InitialDensity::standard(1), target).unwrap();
        let solver = FpSolver::new(default_grid(), 4e-5, sched).unwrap();
        let mut state = solver.initial_state();
        for k in 1..=20 {
            solver.advance_to(&mut state, 0.1 * k as f64);
            assert!((state.mass() - 1.0).abs() < 1e-6);
            assert!(state.density.values.iter().all(|v| *v >= -1e-12));
        }
    }

    #[test]
    fn variance_tracks_the_analytic_flow() {
        let an = AnalyticSolution::shifted_standard(1);
        let solver = analytic_solver(0.01, 4e-5);
        for s in solver.solve(&[0.25, 0.5, 1.0, 2.5]) {
            let err = (s.variance() - an.variance_at(s.t)).abs();
            assert!(err < 1e-4, "t = {}: {err}", s.t);
        }
    }

    #[test]
    fn halving_the_mesh_quarters_the_variance_error() {
        let an = AnalyticSolution::shifted_standard(1);
        let times = [0.1, 0.2, 0.4, 0.8];
        let err = |h: f64, dt: f64| {
            analytic_solver(h, dt)
                .solve(&times)
                .iter()
                .map(|s| (s.variance() - an.variance_at(s.t)).abs())
                .fold(0.0, f64::max)
        };
        // The Euler time error is first order and of opposite sign to the
        // spatial one, so dt is held small enough to isolate the h² term.
        let coarse = err(0.08, 1e-5);
        let fine = err(0.04, 1e-5);
        let ratio = coarse / fine;
        assert!((2.5..=6.0).contains(&ratio), "{coarse:e} / {fine:e} = {ratio}");
    }

    #[test]
    fn pure_diffusion_spreads_linearly() {
        let flat = TargetDensity::new(FnDensity::new(1, |_| 0.0, |_, out| out[0] = 0.0));
        let v0 = 0.5;
        let initial = InitialDensity::new(IsotropicGaussian::new(vec![0.0], v0).unwrap());
        let solver = FpSolver::new(default_grid(), 4e-5, AnnealingSchedule::none(initial, flat)).unwrap();
        for s in solver.solve(&[0.5, 1.0, 2.0]) {
            assert!((s.variance() - (v0 + 2.0 * s.t)).abs() < 1e-4, "{}", s.variance());
        }
    }

    #[test]
    fn kl_trajectory_matches_the_closed_form() {
        let an = AnalyticSolution::shifted_standard(1);
        let solver = analytic_solver(0.01, 4e-5);
        let times: Vec<f64> = (0..=10).map(|k| 0.25 * k as f64).collect();
        for (t, kl) in fp_kl_trajectory(&solver, &times) {
            assert!((kl - an.kl_to_target_at(t)).abs() < 1e-3, "t = {t}: {kl} vs {}", an.kl_to_target_at(t));
        }
    }

    #[test]
    fn mixture_kl_decreases_with_a_late_slowdown() {
        let target = make_gaussian_mixture_1d(&[0.25, 0.75], &[-2.0, 2.0], &[1.0, 1.0]).unwrap();
        let solver = FpSolver::new(
            Grid::cube(1, -12.0, 12.0, 1201),
            1.5e-4,
            AnnealingSchedule::none(InitialDensity::standard(1), target),
        )
        .unwrap();
        let times: Vec<f64> = (0..=40).map(|k| 0.25 * k as f64).collect();
        let kl: Vec<f64> = fp_kl_trajectory(&solver, &times).into_iter().map(|p| p.1).collect();
        assert!(kl.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        // Log-KL decays much faster early (mode discovery) than late (mass
        // transfer between modes).
        let early = (kl[8].ln() - kl[0].ln()) / 2.0;
        let late = (kl[40].ln() - kl[12].ln()) / 7.0;
        assert!(late.abs() < 0.5 * early.abs(), "early {early}, late {late}");
    }

    #[test]
    fn grid_score_of_gaussian_is_linear() {
        let grid = default_grid();
        let var = 0.7;
        let state = FpGridState {
            density: GridDensity::from_log_fn(grid.clone(), |x| -x[0] * x[0] / (2.0 * var)),
            t: 0.0,
            h: 0.01,
            dt: 1e-5,
        };
        let s = fp_score(&state);
        let xs = grid.axis(0);
        let sd = f64::sqrt(var);
        let mut max_err: f64 = 0.0;
        for (x, v) in xs.iter().zip(&s) {
            if x.abs() <= 4.0 * sd {
                max_err = max_err.max((v.unwrap() + x / var).abs());
            }
        }
        assert!(max_err < 1e-8, "{max_err}");
        assert!(s[0].is_none() && s[s.len() - 1].is_none());
    }

    #[test]
    fn grid_score_masks_empty_cells() {
        let grid = Grid::cube(1, -1.0, 1.0, 5);
        let density = GridDensity::from_values(grid, vec![0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let s = fp_score(&FpGridState { density, t: 0.0, h: 0.5, dt: 0.01 });
        assert_eq!(s[1], None);
        assert_eq!(s[2], None);
        assert_eq!(s[3], Some(0.0));
    }

    #[test]
    fn grid_score_of_exact_mixture_matches_analytic_score() {
        let target = make_gaussian_mixture_1d(&[0.25, 0.75], &[-2.0, 2.0], &[1.0, 1.0]).unwrap();
        let grid = default_grid();
        let t2 = target.clone();
        let density = GridDensity::from_log_fn(grid.clone(), move |x| t2.log_density_unnormalized(x));
        let s = fp_score(&FpGridState { density, t: 0.0, h: 0.01, dt: 1e-5 });
        let xs = grid.axis(0);
        for (i, x) in xs.iter().enumerate().filter(|(_, x)| x.abs() < 6.0) {
            let exact = target.score_vec(&[*x])[0];
            // Central difference error is h²/6 · |(log π)'''|, and here
            // (log π)' = −x + 2 tanh(2x + c) so |(log π)'''| = 8|tanh''| < 7.
            assert!((s[i].unwrap() - exact).abs() < 0.01f64.powi(2) / 6.0 * 7.0, "x = {x}");
        }
    }
}
