//! Configured runs, presets, γ sweeps and mass-evolution studies, with their
//! CSV/JSON/SVG artifacts.

mod output;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{
    build_grid, build_initial, DensityField, Grid, InitialSpec, ModelKind, ModelSpec,
    PotentialKind, PotentialSpec,
};
use crate::entropy::{
    fit_exponential_rate, predicted_rate, EntropyKind, FitWindow, PredictedRate, RateBounds,
    RateReport,
};
use crate::error::{FluxError, Result};
use crate::spectral::{friedrichs_k, symmetric_k, EigenResult};
use crate::stationary::{stationary_closed, stationary_numeric};
use crate::transient::{
    cfl_max_dt, run_transient, NewtonConfig, SchemeKind, SolverConfig, StepDiagnostics,
    Trajectory,
};

pub use output::{format_number, line_chart_svg, Series};

/// Environment variable capping sweep parallelism.
pub const THREADS_ENV: &str = "FOKKER_FLUX_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AutoStep {
    #[serde(rename = "auto")]
    Auto,
}

/// Time step: a number, or `"auto"` for half the explicit stability bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeStep {
    Fixed(f64),
    Auto(AutoStep),
}

impl TimeStep {
    pub const AUTO: TimeStep = TimeStep::Auto(AutoStep::Auto);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Emit {
    Snapshots,
    Entropy,
    Mass,
    Summary,
    Svg,
}

impl Emit {
    pub const ALL: [Emit; 5] = [Emit::Snapshots, Emit::Entropy, Emit::Mass, Emit::Summary, Emit::Svg];
}

fn default_gamma() -> f64 {
    1.0
}
fn default_potential() -> PotentialKind {
    PotentialKind::Linear
}
fn default_n() -> usize {
    200
}
fn default_dt() -> TimeStep {
    TimeStep::AUTO
}
fn default_observe_every() -> usize {
    1000
}
fn default_outputs() -> PathBuf {
    PathBuf::from("out")
}
fn default_emit() -> Vec<Emit> {
    Emit::ALL.to_vec()
}

/// A complete run description, read from a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    pub alpha: f64,
    pub beta: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_potential")]
    pub potential: PotentialKind,
    pub initial: InitialSpec,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_dt")]
    pub dt: TimeStep,
    pub t_end: f64,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    #[serde(default = "default_observe_every")]
    pub observe_every: usize,
    #[serde(default = "default_outputs")]
    pub outputs: PathBuf,
    #[serde(default = "default_emit")]
    pub emit: Vec<Emit>,
    #[serde(default)]
    pub scheme: SchemeKind,
    #[serde(default)]
    pub newton: NewtonConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| FluxError::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn potential_spec(&self) -> PotentialSpec {
        PotentialSpec {
            kind: self.potential.clone(),
            gamma: self.gamma,
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec::new(self.model, self.alpha, self.beta, self.potential_spec())
    }

    pub fn grid(&self) -> Result<Grid> {
        build_grid(self.n)
    }

    pub fn emits(&self, what: Emit) -> bool {
        self.emit.contains(&what)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() {
            return Err(FluxError::Config(format!("gamma must be finite, got {}", self.gamma)));
        }
        let model = self.model_spec();
        model.validate()?;
        let grid = self.grid()?;
        model.potential.evaluate(&grid)?;
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(FluxError::Config(format!("t_end must be positive, got {}", self.t_end)));
        }
        if let TimeStep::Fixed(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(FluxError::Config(format!("dt must be positive, got {dt}")));
            }
        }
        if self.observe_every == 0 {
            return Err(FluxError::Config("observe_every must be at least 1".into()));
        }
        if let Some(t) = self
            .snapshot_times
            .iter()
            .find(|&&t| !(t >= 0.0 && t <= self.t_end))
        {
            return Err(FluxError::Config(format!(
                "snapshot time {t} outside [0, t_end = {}]",
                self.t_end
            )));
        }
        if self.scheme == SchemeKind::ImplicitEntropy && self.model != ModelKind::C {
            return Err(FluxError::Config(
                "the implicit entropy scheme is available for model C only".into(),
            ));
        }
        build_initial(&self.initial, &grid, &model)?;
        Ok(())
    }

    /// Concrete time step; `"auto"` resolves to half the explicit bound.
    pub fn resolve_dt(&self) -> Result<f64> {
        match self.dt {
            TimeStep::Fixed(dt) => Ok(dt),
            TimeStep::Auto(_) => Ok(0.5 * cfl_max_dt(&self.model_spec(), &self.grid()?)?),
        }
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let mut cfg = SolverConfig::new(self.resolve_dt()?, self.t_end);
        cfg.observe_every = self.observe_every;
        cfg.scheme = self.scheme;
        cfg.newton = self.newton;
        cfg.snapshot_times = self.snapshot_times.clone();
        Ok(cfg)
    }

    /// Same run on half the resolution with a fourfold step, for quick checks.
    pub fn coarse(&self) -> Self {
        let mut c = self.clone();
        c.n = 100;
        c.dt = TimeStep::Fixed(2e-5);
        c.observe_every = (self.observe_every / 4).max(1);
        c
    }
}

/// Spectral predictions attached to model A runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenSummary {
    /// Symmetric part of the operator, φ′(0) = 0 and φ′(1) = −βφ(1).
    pub symmetric: EigenResult,
    /// Quadratic-entropy dissipation bound; only available when ρ∞ is constant,
    /// in which case the boundary weights are α/(2ρ∞).
    pub friedrichs: Option<EigenResult>,
}

impl EigenSummary {
    pub fn for_model(model: &ModelSpec, rho_inf: &DensityField) -> Result<Option<Self>> {
        if model.model != ModelKind::A {
            return Ok(None);
        }
        let v = rho_inf.values();
        let (lo, hi) = v
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let friedrichs = if hi - lo <= 1e-12 * hi.abs() {
            let w = model.alpha / (2.0 * hi);
            Some(friedrichs_k(w, w)?)
        } else {
            None
        };
        Ok(Some(Self {
            symmetric: symmetric_k(model.beta)?,
            friedrichs,
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub model: ModelKind,
    pub entropy_kind: EntropyKind,
    /// Fitted exponential decay rate of the relative entropy.
    pub fitted_rate: Option<f64>,
    pub rate_report: Option<RateReport>,
    pub fit_error: Option<String>,
    pub predicted_rate: Option<PredictedRate>,
    pub final_time: f64,
    /// sup|ρ(t_end) − ρ∞| against the closed form.
    pub final_sup_distance: f64,
    /// sup|ρ(t_end) − ρ∞| against the scheme's own equilibrium.
    pub final_sup_distance_discrete: f64,
    pub initial_mass: f64,
    pub final_mass: f64,
    pub stationary_mass_closed: f64,
    pub stationary_mass_numeric: f64,
    pub dt: f64,
    pub steps: usize,
    pub diagnostics: StepDiagnostics,
    pub eigen: Option<EigenSummary>,
    /// Kept out of summary.json so repeated runs produce identical files.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
    pub config: RunConfig,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub summary: RunSummary,
    pub trajectory: Trajectory,
    pub initial: DensityField,
    pub closed_form: DensityField,
}

/// Runs the configured simulation without touching the file system.
pub fn simulate(config: &RunConfig) -> Result<Simulation> {
    simulate_inner(config, false)
}

/// As [`simulate`], also keeping the density at every observation time.
pub fn simulate_recorded(config: &RunConfig) -> Result<Simulation> {
    simulate_inner(config, true)
}

fn simulate_inner(config: &RunConfig, record_fields: bool) -> Result<Simulation> {
    let started = Instant::now();
    config.validate()?;
    let model = config.model_spec();
    let grid = config.grid()?;
    let initial = build_initial(&config.initial, &grid, &model)?;
    let mut solver = config.solver_config()?;
    solver.record_fields = record_fields;
    let closed = stationary_closed(&model, &grid)?;
    let numeric = stationary_numeric(&model, &grid)?;
    let trajectory = run_transient(&model, &initial, &solver)?;

    let obs = &trajectory.observations;
    let window = FitWindow::default_for(&obs.t, &obs.entropy, config.t_end);
    let predicted = predicted_rate(
        &model,
        &closed.field,
        &RateBounds::from_initial(&initial, &closed.field),
    )?;
    let (rate_report, fit_error) = match fit_exponential_rate(&obs.t, &obs.entropy, window) {
        Ok(mut r) => {
            r.predicted_rate = Some(predicted);
            (Some(r), None)
        }
        Err(e) => (None, Some(e.to_string())),
    };
    let summary = RunSummary {
        model: config.model,
        entropy_kind: trajectory.entropy_kind,
        fitted_rate: rate_report.map(|r| r.fitted_slope),
        rate_report,
        fit_error,
        predicted_rate: Some(predicted),
        final_time: trajectory.final_time,
        final_sup_distance: trajectory.final_field.sup_distance(&closed.field),
        final_sup_distance_discrete: trajectory.final_field.sup_distance(&trajectory.reference),
        initial_mass: grid.integrate(initial.values()),
        final_mass: grid.integrate(trajectory.final_field.values()),
        stationary_mass_closed: grid.integrate(closed.field.values()),
        stationary_mass_numeric: grid.integrate(numeric.field.values()),
        dt: solver.dt,
        steps: solver.step_count(),
        diagnostics: trajectory.diagnostics,
        eigen: EigenSummary::for_model(&model, &closed.field)?,
        wall_clock_seconds: 0.0,
        config: config.clone(),
    };
    let mut sim = Simulation {
        summary,
        trajectory,
        initial,
        closed_form: closed.field,
    };
    sim.summary.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok(sim)
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub simulation: Simulation,
    pub files: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn summary(&self) -> &RunSummary {
        &self.simulation.summary
    }
}

/// Simulates and writes the requested artifacts into `config.outputs`.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    let simulation = simulate(config)?;
    let files = write_artifacts(&simulation, &config.outputs)?;
    Ok(RunOutcome { simulation, files })
}

pub fn write_artifacts(sim: &Simulation, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let cfg = &sim.summary.config;
    let traj = &sim.trajectory;
    let obs = &traj.observations;
    let mut files = Vec::new();
    if cfg.emits(Emit::Entropy) {
        let path = dir.join("entropy.csv");
        output::write_columns(
            &path,
            &["t", "entropy", "mass", "l1", "residual"],
            &[&obs.t, &obs.entropy, &obs.mass, &obs.l1, &obs.residual],
        )?;
        files.push(path);
    }
    if cfg.emits(Emit::Mass) {
        let path = dir.join("mass.csv");
        output::write_columns(&path, &["t", "mass"], &[&obs.t, &obs.mass])?;
        files.push(path);
    }
    if cfg.emits(Emit::Snapshots) {
        let path = dir.join("snapshots.csv");
        let mut header = vec!["x".to_string()];
        header.extend(traj.times.iter().map(|t| format!("rho(t={t})")));
        header.push("rho_inf".into());
        let mut cols: Vec<&[f64]> = vec![sim.initial.grid().nodes()];
        cols.extend(traj.snapshots.iter().map(|s| s.values()));
        cols.push(sim.closed_form.values());
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        output::write_columns(&path, &header, &cols)?;
        files.push(path);
    }
    if cfg.emits(Emit::Summary) {
        let path = dir.join("summary.json");
        let mut text = serde_json::to_string_pretty(&sim.summary)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        files.push(path);
    }
    if cfg.emits(Emit::Svg) {
        let x = sim.initial.grid().nodes();
        let mut series: Vec<Series> = traj
            .times
            .iter()
            .zip(&traj.snapshots)
            .map(|(t, s)| Series::new(format!("t = {t}"), x, s.values()))
            .collect();
        series.push(Series::new("stationary", x, sim.closed_form.values()));
        let path = dir.join("density.svg");
        std::fs::write(&path, line_chart_svg("density", "x", "rho", &series, false))?;
        files.push(path);

        let positive: Vec<(f64, f64)> = obs
            .t
            .iter()
            .zip(&obs.entropy)
            .filter(|(_, &e)| e > 0.0)
            .map(|(&t, &e)| (t, e))
            .collect();
        let (t, e): (Vec<f64>, Vec<f64>) = positive.into_iter().unzip();
        let path = dir.join("entropy.svg");
        std::fs::write(
            &path,
            line_chart_svg(
                "relative entropy",
                "t",
                "E",
                &[Series::new("entropy", &t, &e)],
                true,
            ),
        )?;
        files.push(path);
    }
    Ok(files)
}

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 9] = [
    "evolution-A",
    "entropy-A",
    "entropy-A-v0",
    "evolution-B",
    "entropy-B",
    "evolution-C",
    "entropy-C",
    "mass1",
    "mass2",
];

fn preset_run(model: ModelKind, alpha: f64, beta: f64, initial: InitialSpec, t_end: f64) -> RunConfig {
    RunConfig {
        model,
        alpha,
        beta,
        gamma: 1.0,
        potential: PotentialKind::Linear,
        initial,
        n: 200,
        dt: TimeStep::Fixed(5e-6),
        t_end,
        snapshot_times: Vec::new(),
        observe_every: 1000,
        outputs: default_outputs(),
        emit: default_emit(),
        scheme: SchemeKind::Explicit,
        newton: NewtonConfig::default(),
    }
}

pub fn preset(name: &str) -> Result<RunConfig> {
    let affine = InitialSpec::affine(-0.1, 1.2);
    let mut cfg = match name {
        "evolution-A" => {
            let mut c = preset_run(ModelKind::A, 1.0, 0.9, affine, 9.0);
            c.snapshot_times = vec![0.0, 0.05, 1.5, 9.0];
            c
        }
        "entropy-A" => preset_run(ModelKind::A, 1.0, 1.0, affine, 6.0),
        "entropy-A-v0" => {
            let mut c = preset_run(ModelKind::A, 1.0, 1.0, affine, 6.0);
            c.gamma = 0.0;
            c
        }
        "evolution-B" | "entropy-B" => {
            let mut c = preset_run(ModelKind::B, 1.0, 0.9, affine, 20.0);
            c.snapshot_times = vec![0.0, 0.05, 1.5, 20.0];
            c
        }
        "evolution-C" | "entropy-C" => {
            let mut c = preset_run(ModelKind::C, 1.0, 0.9, InitialSpec::Parabola, 3.7);
            c.snapshot_times = vec![0.0, 0.05, 0.35, 3.7];
            c
        }
        "mass1" | "mass2" => {
            let init = if name == "mass1" {
                InitialSpec::Mass1
            } else {
                InitialSpec::Mass2
            };
            let mut c = preset_run(ModelKind::A, 1.0, 0.9, init, 10.0);
            c.observe_every = 100;
            c.snapshot_times = vec![0.0, 0.05, 0.5, 10.0];
            c
        }
        other => {
            return Err(FluxError::Config(format!(
                "unknown preset '{other}', expected one of {}",
                PRESETS.join(", ")
            )))
        }
    };
    cfg.outputs = PathBuf::from("out").join(name);
    Ok(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub fitted_slope: f64,
    pub r_squared: f64,
    pub samples: usize,
}

fn thread_count() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// One run per γ, in parallel, merged in increasing γ.
///
/// With `out` set, `sweep.csv` receives every row that finished, even when
/// another member failed; the first failure in γ order is then returned.
pub fn gamma_sweep(base: &RunConfig, gammas: &[f64], out: Option<&Path>) -> Result<Vec<SweepRow>> {
    if base.model != ModelKind::A {
        return Err(FluxError::Config("the gamma sweep is defined for model A".into()));
    }
    if let Some(g) = gammas.iter().find(|g| !g.is_finite()) {
        return Err(FluxError::Config(format!("gamma values must be finite, got {g}")));
    }
    let mut gammas = gammas.to_vec();
    gammas.sort_by(f64::total_cmp);

    let member = |gamma: f64| -> Result<SweepRow> {
        let mut cfg = base.clone();
        cfg.gamma = gamma;
        let sim = simulate(&cfg)?;
        let report = sim.summary.rate_report.ok_or_else(|| {
            FluxError::Fit(format!(
                "gamma = {gamma}: {}",
                sim.summary.fit_error.clone().unwrap_or_default()
            ))
        })?;
        Ok(SweepRow {
            gamma,
            fitted_slope: report.fitted_slope,
            r_squared: report.r_squared,
            samples: report.samples,
        })
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count() {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| FluxError::Solver(format!("thread pool: {e}")))?;
    let results: Vec<Result<SweepRow>> = pool.install(|| gammas.par_iter().map(|&g| member(g)).collect());

    let rows: Vec<SweepRow> = results.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let g: Vec<f64> = rows.iter().map(|r| r.gamma).collect();
        let s: Vec<f64> = rows.iter().map(|r| r.fitted_slope).collect();
        let q: Vec<f64> = rows.iter().map(|r| r.r_squared).collect();
        output::write_columns(
            &dir.join("sweep.csv"),
            &["gamma", "fitted_slope", "r_squared"],
            &[&g, &s, &q],
        )?;
    }
    match results.into_iter().find_map(|r| r.err()) {
        Some(e) => Err(e),
        None => Ok(rows),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MassPreset {
    Mass1,
    Mass2,
}

impl MassPreset {
    pub fn name(self) -> &'static str {
        match self {
            MassPreset::Mass1 => "mass1",
            MassPreset::Mass2 => "mass2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extremum {
    pub time: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassReport {
    pub preset: MassPreset,
    pub initial_mass: f64,
    pub final_mass: f64,
    /// Largest sampled mass, when it lies strictly between the endpoints in
    /// time and above both endpoint values.
    pub interior_maximum: Option<Extremum>,
    /// Smallest sampled mass, when interior and below both endpoint values.
    pub interior_minimum: Option<Extremum>,
    pub stationary_mass: f64,
    #[serde(skip)]
    pub t: Vec<f64>,
    #[serde(skip)]
    pub mass: Vec<f64>,
}

/// Interior extrema of a sampled series: (maximum, minimum).
pub fn interior_extrema(t: &[f64], values: &[f64]) -> (Option<Extremum>, Option<Extremum>) {
    let n = values.len();
    if n < 3 {
        return (None, None);
    }
    let (first, last) = (values[0], values[n - 1]);
    let (mut imax, mut imin) = (0, 0);
    for (i, &v) in values.iter().enumerate() {
        if v > values[imax] {
            imax = i;
        }
        if v < values[imin] {
            imin = i;
        }
    }
    let at = |i: usize| Extremum {
        time: t[i],
        value: values[i],
    };
    let max = (imax > 0 && imax < n - 1 && values[imax] > first.max(last)).then(|| at(imax));
    let min = (imin > 0 && imin < n - 1 && values[imin] < first.min(last)).then(|| at(imin));
    (max, min)
}

/// Runs a non-monotone mass preset; `out` receives mass.csv and mass_report.json.
pub fn mass_evolution(which: MassPreset, out: Option<&Path>) -> Result<MassReport> {
    let cfg = preset(which.name())?;
    mass_evolution_with(which, &cfg, out)
}

/// As [`mass_evolution`] with an explicit configuration (same preset initial data).
pub fn mass_evolution_with(which: MassPreset, cfg: &RunConfig, out: Option<&Path>) -> Result<MassReport> {
    let sim = simulate(cfg)?;
    let obs = &sim.trajectory.observations;
    let (interior_maximum, interior_minimum) = interior_extrema(&obs.t, &obs.mass);
    let report = MassReport {
        preset: which,
        initial_mass: sim.summary.initial_mass,
        final_mass: sim.summary.final_mass,
        interior_maximum,
        interior_minimum,
        stationary_mass: sim.summary.stationary_mass_closed,
        t: obs.t.clone(),
        mass: obs.mass.clone(),
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        output::write_columns(&dir.join("mass.csv"), &["t", "mass"], &[&report.t, &report.mass])?;
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        std::fs::write(dir.join("mass_report.json"), text)?;
    }
    Ok(report)
}
