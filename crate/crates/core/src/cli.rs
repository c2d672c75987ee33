//! The `sbtm` command line: `run`, `sweep`, `compare`, `oracle`, `presets`.
//!
//! Exit codes: 0 success, 1 runtime failure (partial artifacts are kept),
//! 2 invalid configuration or usage (nothing is written).
//!
//! Every run flag can also be given through the environment with the `SBTM_`
//! prefix (`SBTM_SEED`, `SBTM_OUT`, `SBTM_RECORD_EVERY`, …); explicit flags win.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig, PRESETS};
use crate::diagnostics::{ntk_matrix, ntk_min_eigenvalue, DiagnosticsRecord, NTK_MAX_SIZE};
use crate::fp_oracle::{fp_kl_trajectory, FpError, FpSolver};
use crate::io::{self, IoError, Manifest, NtkRow, DIAGNOSTICS_COLUMNS};
use crate::samplers::{head, run, stream, Ensemble, Method, RunObserver, RunOutput, RunStatus};
use crate::score_model::{write_checkpoint, ScoreModel};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}")]
    Run(String),
    #[error(transparent)]
    Oracle(#[from] FpError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) | CliError::Oracle(_) => 2,
            CliError::Io(_) | CliError::Run(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.into())
    }
}

#[derive(Debug, Parser)]
#[command(name = "sbtm", version, about = "Score-based transport sampler and baselines")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one configuration and write its artifacts.
    Run(RunArgs),
    /// Run a grid of methods × sample sizes and tabulate the final KL.
    Sweep(SweepArgs),
    /// Join the diagnostics of several runs on t into one wide CSV.
    Compare(CompareArgs),
    /// Solve the 1D Fokker–Planck equation of a configuration on a grid.
    Oracle(OracleArgs),
    /// List the presets, or print one as TOML.
    Presets { name: Option<String> },
}

#[derive(Debug, Clone, Args)]
pub struct Source {
    /// Shipped preset (exp1 … exp5).
    #[arg(long, env = "SBTM_PRESET", conflicts_with_all = ["config", "manifest"])]
    pub preset: Option<String>,
    /// TOML configuration file.
    #[arg(long, env = "SBTM_CONFIG", conflicts_with = "manifest")]
    pub config: Option<PathBuf>,
    /// Repeat the run recorded in a manifest.json.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, env = "SBTM_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "SBTM_DETERMINISTIC", num_args = 0..=1, default_missing_value = "true")]
    pub deterministic: Option<bool>,
    #[arg(long, env = "SBTM_RECORD_EVERY")]
    pub record_every: Option<usize>,
    #[arg(long, env = "SBTM_METHOD")]
    pub method: Option<Method>,
    #[arg(long, env = "SBTM_N")]
    pub n: Option<usize>,
    #[arg(long, env = "SBTM_FINAL_TIME")]
    pub final_time: Option<f64>,
}

impl Source {
    /// Loads the configuration and applies the overrides; returns it with its
    /// default output name.
    pub fn load(&self) -> Result<(RunConfig, String), CliError> {
        let (mut cfg, name) = match (&self.preset, &self.config, &self.manifest) {
            (Some(p), _, _) => (RunConfig::preset(p)?, p.clone()),
            (None, Some(path), _) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
                let cfg = RunConfig::from_toml(&text)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
                let stem = path.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
                (cfg, stem)
            }
            (None, None, Some(path)) => {
                let m = io::read_manifest(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
                (RunConfig::from_toml(&m.config_toml)?, "rerun".to_string())
            }
            (None, None, None) => return Err(CliError::Usage("one of --preset, --config or --manifest is required".into())),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = self.deterministic {
            cfg.deterministic = d;
        }
        if let Some(k) = self.record_every {
            cfg.diagnostics.record_every = k;
        }
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(n) = self.n {
            cfg.n = n;
        }
        if let Some(t) = self.final_time {
            cfg.final_time = t;
        }
        cfg.validate().map_err(|(key, message)| ConfigError::InvalidUnanchored { key, message })?;
        Ok((cfg, name))
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub source: Source,
    /// Output directory (default: the config's `out`, else `runs/<name>-<method>`).
    #[arg(long, env = "SBTM_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub source: Source,
    /// Comma-separated sample sizes.
    #[arg(long = "ns", value_delimiter = ',', required = true)]
    pub ns: Vec<usize>,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<Method>,
    #[arg(long, env = "SBTM_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Run directories (each with manifest.json and diagnostics.csv).
    #[arg(required = true)]
    pub dirs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Times at which to write the density.
    #[arg(long, value_delimiter = ',', required = true)]
    pub times: Vec<f64>,
    /// Number of KL samples between 0 and the last time.
    #[arg(long, default_value_t = 101)]
    pub kl_points: usize,
    /// PDE time step (default: 90% of the stability bound).
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (including the program name) and runs the command; returns
/// the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run(a) => {
            let (cfg, name) = a.source.load()?;
            let out = a.out.or_else(|| cfg.out.clone()).unwrap_or_else(|| default_out(&name, cfg.method));
            let summary = cmd_run(&cfg, &out)?;
            eprintln!("{}: {} steps, final KL {}", out.display(), summary.steps, fmt_opt(summary.final_kl));
            Ok(())
        }
        Command::Sweep(a) => {
            let (cfg, _) = a.source.load()?;
            let cells = cmd_sweep(&cfg, &a.methods, &a.ns, &a.out)?;
            let failed = cells.iter().filter(|c| c.error.is_some()).count();
            eprintln!("{}: {} cells, {failed} failed", a.out.display(), cells.len());
            Ok(())
        }
        Command::Compare(a) => cmd_compare(&a.dirs, &a.out),
        Command::Oracle(a) => {
            let cfg = match (&a.preset, &a.config) {
                (Some(p), _) => RunConfig::preset(p)?,
                (None, Some(path)) => RunConfig::from_toml(&fs::read_to_string(path)?)?,
                (None, None) => return Err(CliError::Usage("one of --preset or --config is required".into())),
            };
            cmd_oracle(&cfg, &a.times, a.kl_points, a.dt, &a.out)
        }
        Command::Presets { name: None } => {
            for p in PRESETS {
                println!("{p}");
            }
            Ok(())
        }
        Command::Presets { name: Some(p) } => {
            println!("{}", crate::config::preset_text(&p).ok_or(ConfigError::UnknownPreset(p))?);
            Ok(())
        }
    }
}

fn default_out(name: &str, method: Method) -> PathBuf {
    PathBuf::from("runs").join(format!("{name}-{}", method.name()))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.6}"))
}

/// Writes snapshots as they happen and collects NTK probes.
struct ArtifactObserver<'a> {
    dir: &'a Path,
    ntk_every: Option<usize>,
    ntk_particles: usize,
    ntk: Vec<NtkRow>,
    last_snapshot: Option<usize>,
}

impl ArtifactObserver<'_> {
    fn snapshot(&mut self, step: usize, ensemble: &Ensemble) -> Result<(), IoError> {
        let dir = self.dir.join("snapshots");
        fs::create_dir_all(&dir)?;
        let x = ensemble.positions.view();
        io::write_snapshot_csv(&dir.join(format!("step_{step:06}.csv")), step, ensemble.time, x)?;
        io::write_snapshot_bin(&dir.join(format!("step_{step:06}.bin")), step, ensemble.time, x)?;
        self.last_snapshot = Some(step);
        Ok(())
    }
}

impl RunObserver for ArtifactObserver<'_> {
    fn on_record(
        &mut self,
        step: usize,
        ensemble: &Ensemble,
        model: Option<&ScoreModel>,
        _record: &DiagnosticsRecord,
    ) -> Result<(), String> {
        let (Some(k), Some(model)) = (self.ntk_every, model) else {
            return Ok(());
        };
        if step % k.max(1) != 0 {
            return Ok(());
        }
        let m = self.ntk_particles.min(NTK_MAX_SIZE / ensemble.dim()).max(1);
        let h = ntk_matrix(model, head(&ensemble.positions, m)).map_err(|e| e.to_string())?;
        let min_eig = ntk_min_eigenvalue(&h).map_err(|e| e.to_string())?;
        self.ntk.push(NtkRow { t: ensemble.time, min_eig, dim: h.nrows() });
        Ok(())
    }

    fn on_snapshot(&mut self, step: usize, ensemble: &Ensemble) -> Result<(), String> {
        self.snapshot(step, ensemble).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub steps: usize,
    pub status: RunStatus,
    pub final_kl: Option<f64>,
    pub records: Vec<DiagnosticsRecord>,
}

/// Runs `cfg` and writes into `out`:
/// `diagnostics.csv`, `snapshots/step_NNNNNN.{csv,bin}` (on the configured
/// cadence and always for the last step), `model.ckpt` (SBTM), `ntk.csv`
/// (when enabled) and `manifest.json`. On failure everything produced so far
/// is written, the manifest records the error, and `CliError::Run` is returned.
pub fn cmd_run(cfg: &RunConfig, out: &Path) -> Result<RunSummary, CliError> {
    cfg.validate().map_err(|(key, message)| ConfigError::InvalidUnanchored { key, message })?;
    let problem = cfg.problem()?;
    let recorder = cfg.recorder(&problem)?;
    let settings = cfg.settings();
    let ensemble = Ensemble::sample(&problem.initial, cfg.n, cfg.seed);
    let model = (cfg.method == Method::Sbtm).then(|| ScoreModel::new(cfg.architecture(), &mut stream(cfg.seed, 1)));

    fs::create_dir_all(out)?;
    let start = Instant::now();
    let mut observer = ArtifactObserver {
        dir: out,
        ntk_every: cfg.diagnostics.ntk_every,
        ntk_particles: cfg.diagnostics.ntk_particles,
        ntk: Vec::new(),
        last_snapshot: None,
    };
    let result = run(&settings, &problem.schedule, ensemble, model, &recorder, &mut observer);
    let wall = start.elapsed().as_secs_f64();
    let (output, error) = match result {
        Ok(o) => (o, None),
        Err(f) => {
            let msg = f.to_string();
            (f.partial, Some(msg))
        }
    };
    write_run_artifacts(cfg, out, &output, &mut observer, error.clone(), wall)?;
    if let Some(e) = error {
        return Err(CliError::Run(format!("{}: {e}", out.display())));
    }
    Ok(RunSummary {
        steps: output.steps,
        status: output.status,
        final_kl: output.records.last().and_then(|r| r.kl),
        records: output.records,
    })
}

fn write_run_artifacts(
    cfg: &RunConfig,
    out: &Path,
    output: &RunOutput,
    observer: &mut ArtifactObserver<'_>,
    error: Option<String>,
    wall: f64,
) -> Result<(), CliError> {
    io::write_diagnostics_csv(&out.join("diagnostics.csv"), &output.records)?;
    if observer.last_snapshot != Some(output.steps) {
        observer.snapshot(output.steps, &output.ensemble)?;
    }
    if let Some(model) = &output.model {
        write_checkpoint(model, BufWriter::new(File::create(out.join("model.ckpt"))?))
            .map_err(|e| CliError::Run(format!("writing checkpoint: {e}")))?;
    }
    if cfg.diagnostics.ntk_every.is_some() {
        io::write_ntk_csv(&out.join("ntk.csv"), &observer.ntk)?;
    }
    let manifest = Manifest {
        format_version: MANIFEST_FORMAT_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        git_revision: io::git_revision(),
        config: cfg.clone(),
        config_toml: cfg.to_toml(),
        status: output.status,
        error,
        steps: output.steps,
        final_time_reached: output.ensemble.time,
        wall_time_seconds: wall,
        pretrain: output.pretrain.clone(),
    };
    io::write_manifest(&out.join("manifest.json"), &manifest)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub method: Method,
    pub n: usize,
    pub seed: u64,
    /// NaN when the run failed or has no KL estimate.
    pub final_kl: f64,
    pub error: Option<String>,
}

/// Runs every `methods × ns` cell (row-major, cell index `i` uses seed
/// `base + i`) under `out/<method>-n<n>/`, then writes `out/cells.csv`
/// (`method, n, seed, final_kl, error`) and `out/table.csv` (one row per
/// method, one column per n). Failed cells become NaN; the sweep continues.
pub fn cmd_sweep(base: &RunConfig, methods: &[Method], ns: &[usize], out: &Path) -> Result<Vec<SweepCell>, CliError> {
    if methods.is_empty() {
        return Err(CliError::Usage("sweep needs at least one method".into()));
    }
    if ns.is_empty() {
        return Err(CliError::Usage("sweep needs at least one sample size".into()));
    }
    let mut cells = Vec::with_capacity(methods.len() * ns.len());
    for (i, (&method, &n)) in methods.iter().flat_map(|m| ns.iter().map(move |n| (m, n))).enumerate() {
        let mut cfg = base.clone();
        cfg.method = method;
        cfg.n = n;
        cfg.seed = base.seed + i as u64;
        cfg.out = None;
        let dir = out.join(format!("{}-n{n}", method.name()));
        let (final_kl, error) = match cmd_run(&cfg, &dir) {
            Ok(s) => (s.final_kl.unwrap_or(f64::NAN), None),
            Err(e) => (f64::NAN, Some(e.to_string())),
        };
        cells.push(SweepCell { method, n, seed: cfg.seed, final_kl, error });
    }
    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("cells.csv")).map_err(IoError::from)?;
    w.write_record(["method", "n", "seed", "final_kl", "error"]).map_err(IoError::from)?;
    for c in &cells {
        w.write_record([
            c.method.name().to_string(),
            c.n.to_string(),
            c.seed.to_string(),
            c.final_kl.to_string(),
            c.error.clone().unwrap_or_default(),
        ])
        .map_err(IoError::from)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out.join("table.csv")).map_err(IoError::from)?;
    let mut header = vec!["method".to_string()];
    header.extend(ns.iter().map(|n| n.to_string()));
    w.write_record(&header).map_err(IoError::from)?;
    for (mi, m) in methods.iter().enumerate() {
        let mut row = vec![m.name().to_string()];
        row.extend(cells[mi * ns.len()..(mi + 1) * ns.len()].iter().map(|c| c.final_kl.to_string()));
        w.write_record(&row).map_err(IoError::from)?;
    }
    w.flush()?;
    Ok(cells)
}

/// Linear interpolation of an optional series at `t`; `None` outside the
/// series' time range or next to a missing value.
fn interpolate(ts: &[f64], ys: &[Option<f64>], t: f64) -> Option<f64> {
    let tol = 1e-9 * (1.0 + t.abs());
    let j = ts.partition_point(|&s| s < t - tol);
    if j < ts.len() && (ts[j] - t).abs() <= tol {
        return ys[j];
    }
    if j == 0 || j == ts.len() {
        return None;
    }
    let (t0, t1) = (ts[j - 1], ts[j]);
    let (y0, y1) = (ys[j - 1]?, ys[j]?);
    let w = (t - t0) / (t1 - t0);
    Some(y0 + w * (y1 - y0))
}

/// Joins the diagnostics of `dirs` on t. A single directory is copied
/// through unchanged. Otherwise every series is resampled onto the time
/// points of the coarsest one (largest mean spacing; ties go to the first)
/// by linear interpolation, and columns are suffixed `_<method>` (or
/// `_<dir name>` when methods repeat).
pub fn cmd_compare(dirs: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let mut runs = Vec::with_capacity(dirs.len());
    for d in dirs {
        let manifest_path = d.join("manifest.json");
        if !manifest_path.is_file() {
            return Err(CliError::Usage(format!("{}: no manifest.json", d.display())));
        }
        let manifest = io::read_manifest(&manifest_path)?;
        let records = io::read_diagnostics_csv(&d.join("diagnostics.csv"))?;
        runs.push((d, manifest, records));
    }
    if runs.len() == 1 {
        io::write_diagnostics_csv(out, &runs[0].2)?;
        return Ok(());
    }
    let mut counts: HashMap<Method, usize> = HashMap::new();
    for (_, m, _) in &runs {
        *counts.entry(m.config.method).or_default() += 1;
    }
    let suffixes: Vec<String> = runs
        .iter()
        .map(|(d, m, _)| {
            if counts[&m.config.method] == 1 {
                m.config.method.name().to_string()
            } else {
                d.file_name().map_or_else(|| d.display().to_string(), |s| s.to_string_lossy().into_owned())
            }
        })
        .collect();
    let spacing = |r: &[DiagnosticsRecord]| match r {
        [first, .., last] => (last.t - first.t) / (r.len() - 1) as f64,
        _ => f64::INFINITY,
    };
    let coarsest = (0..runs.len())
        .fold(0, |best, i| if spacing(&runs[i].2) > spacing(&runs[best].2) { i } else { best });
    let times: Vec<f64> = runs[coarsest].2.iter().map(|r| r.t).collect();

    let mut w = csv::Writer::from_path(out).map_err(IoError::from)?;
    let mut header = vec!["t".to_string()];
    for s in &suffixes {
        header.extend(DIAGNOSTICS_COLUMNS[1..].iter().map(|c| format!("{c}_{s}")));
    }
    w.write_record(&header).map_err(IoError::from)?;
    let columns: Vec<(Vec<f64>, Vec<Vec<Option<f64>>>)> =
        runs.iter().map(|(_, _, r)| (r.iter().map(|x| x.t).collect(), record_columns(r))).collect();
    for &t in &times {
        let mut row = vec![t.to_string()];
        for (ts, cols) in &columns {
            row.extend(cols.iter().map(|ys| interpolate(ts, ys, t).map_or_else(String::new, |v| v.to_string())));
        }
        w.write_record(&row).map_err(IoError::from)?;
    }
    w.flush()?;
    Ok(())
}

/// The optional columns of a series in `DIAGNOSTICS_COLUMNS` order (without `t`).
fn record_columns(records: &[DiagnosticsRecord]) -> Vec<Vec<Option<f64>>> {
    let fields: [fn(&DiagnosticsRecord) -> Option<f64>; 8] = [
        |r| r.loss,
        |r| r.kl,
        |r| r.fisher,
        |r| r.dissipation,
        |r| r.identity_lhs,
        |r| r.identity_rhs,
        |r| r.l2_error,
        |r| r.cosine_sim,
    ];
    fields.iter().map(|f| records.iter().map(f).collect()).collect()
}

/// Writes `density_<i>.csv` (x, f) for each requested time, `target.csv`,
/// and `kl.csv` (t, kl) on `kl_points` equally spaced times up to the last one.
pub fn cmd_oracle(cfg: &RunConfig, times: &[f64], kl_points: usize, dt: Option<f64>, out: &Path) -> Result<(), CliError> {
    if cfg.dim() != 1 {
        return Err(FpError::NotOneDimensional(cfg.dim()).into());
    }
    if times.iter().any(|t| !(*t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(CliError::Usage("--times must be nonnegative and sorted".into()));
    }
    let problem = cfg.problem()?;
    let grid = crate::fp_oracle::default_grid();
    let dt = match dt {
        Some(dt) => dt,
        None => match FpSolver::new(grid.clone(), f64::MIN_POSITIVE, problem.schedule.clone()) {
            Ok(s) => 0.9 * s.stability_bound(),
            Err(e) => return Err(e.into()),
        },
    };
    let solver = FpSolver::new(grid, dt, problem.schedule)?;
    fs::create_dir_all(out)?;
    for (i, s) in solver.solve(times).iter().enumerate() {
        io::write_grid_density_csv(&out.join(format!("density_{i}.csv")), &s.density)?;
    }
    io::write_grid_density_csv(&out.join("target.csv"), &solver.target_density())?;
    let t_end = times.last().copied().unwrap_or(0.0);
    let k = kl_points.max(2);
    let kl_times: Vec<f64> = (0..k).map(|i| t_end * i as f64 / (k - 1) as f64).collect();
    io::write_kl_series_csv(&out.join("kl.csv"), &fp_kl_trajectory(&solver, &kl_times))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_is_linear_and_respects_gaps() {
        let ts = [0.0, 1.0, 2.0, 3.0];
        let ys = [Some(0.0), Some(2.0), None, Some(5.0)];
        assert_eq!(interpolate(&ts, &ys, 0.5), Some(1.0));
        assert_eq!(interpolate(&ts, &ys, 1.0), Some(2.0));
        assert_eq!(interpolate(&ts, &ys, 1.5), None);
        assert_eq!(interpolate(&ts, &ys, 3.5), None);
        assert_eq!(interpolate(&ts, &ys, -0.1), None);
    }

    #[test]
    fn flags_override_the_preset() {
        let cli = Cli::try_parse_from(["sbtm", "run", "--preset", "exp1", "--seed", "7", "--record-every", "3", "--deterministic"])
            .unwrap();
        let Command::Run(a) = cli.command else { panic!() };
        let (cfg, name) = a.source.load().unwrap();
        assert_eq!((cfg.seed, cfg.diagnostics.record_every, name.as_str()), (7, 3, "exp1"));
    }

    #[test]
    fn preset_and_config_are_exclusive() {
        assert!(Cli::try_parse_from(["sbtm", "run", "--preset", "exp1", "--config", "x.toml"]).is_err());
    }
}
