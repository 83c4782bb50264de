//! Time stepping for the three models.
//!
//! Space is discretized in conservative form on the node-centered control
//! volumes of the grid (half cells at both ends). Interior face fluxes are
//!
//! ```text
//! J_{i+1/2} = −(ρ_{i+1} − ρ_i)/dx + f(ρ̄) V′_{i+1/2},   ρ̄ = (ρ_i + ρ_{i+1})/2
//! ```
//!
//! and the boundary faces sit on the end nodes. For model A they carry the
//! imposed fluxes J(0) = α and J(1) = βρ_{n−1}; models B and C have no-flux walls.
//! The half-cell treatment is the same update a ghost-node scheme produces
//! when the ghost value is chosen to reproduce the boundary flux.

use serde::{Deserialize, Serialize};

use crate::domain::{DensityField, Grid, ModelKind, ModelSpec, PotentialValues};
use crate::entropy::{self, EntropyKind, ObservationSeries};
use crate::error::{FluxError, Result};
use crate::stationary;
use crate::tridiag::Tridiagonal;

/// Precomputed discretization of one model on one grid.
#[derive(Debug, Clone)]
pub struct Scheme {
    grid: Grid,
    model: ModelSpec,
    potential: PotentialValues,
    /// β e^{−V_i}
    decay: Vec<f64>,
    /// Control-volume widths.
    widths: Vec<f64>,
}

impl Scheme {
    pub fn new(model: &ModelSpec, grid: &Grid) -> Result<Self> {
        model.validate()?;
        let potential = model.potential.evaluate(grid)?;
        let decay = potential
            .nodal
            .iter()
            .map(|v| model.beta * (-v).exp())
            .collect();
        let widths = (0..grid.len()).map(|i| grid.cell_width(i)).collect();
        Ok(Self {
            grid: grid.clone(),
            model: model.clone(),
            potential,
            decay,
            widths,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn potential(&self) -> &PotentialValues {
        &self.potential
    }

    #[inline]
    fn interior_flux(&self, rho: &[f64], face: usize) -> f64 {
        let (l, r) = (rho[face], rho[face + 1]);
        let mean = 0.5 * (l + r);
        -(r - l) / self.grid.dx() + self.model.model.mobility(mean) * self.potential.face_slope[face]
    }

    /// Flux through interior face `face` (between nodes `face` and `face + 1`).
    pub fn face_flux(&self, rho: &[f64], face: usize) -> Result<f64> {
        let faces = self.grid.interior_faces();
        if face >= faces {
            return Err(FluxError::Index { index: face, faces });
        }
        Ok(self.interior_flux(rho, face))
    }

    /// Boundary fluxes (at x = 0, at x = 1), positive to the right.
    #[inline]
    pub fn boundary_fluxes(&self, rho: &[f64]) -> (f64, f64) {
        match self.model.model {
            ModelKind::A => (self.model.alpha, self.model.beta * rho[rho.len() - 1]),
            ModelKind::B | ModelKind::C => (0.0, 0.0),
        }
    }

    #[inline]
    fn reaction(&self, rho: f64, i: usize) -> f64 {
        match self.model.model {
            ModelKind::A => 0.0,
            ModelKind::B => self.model.alpha - self.decay[i] * rho,
            ModelKind::C => self.model.alpha * (1.0 - rho) - self.decay[i] * rho,
        }
    }

    pub fn fluxes(&self, rho: &[f64]) -> FluxField {
        let n = self.grid.len();
        let (left, right) = self.boundary_fluxes(rho);
        let mut faces = Vec::with_capacity(n + 1);
        faces.push(left);
        faces.extend((0..n - 1).map(|f| self.interior_flux(rho, f)));
        faces.push(right);
        FluxField { faces }
    }

    /// Semi-discrete right-hand side dρ_i/dt.
    pub fn rate_of_change(&self, rho: &[f64], out: &mut [f64]) {
        let n = self.grid.len();
        let (left, right) = self.boundary_fluxes(rho);
        let mut west = left;
        for i in 0..n {
            let east = if i + 1 < n {
                self.interior_flux(rho, i)
            } else {
                right
            };
            out[i] = -(east - west) / self.widths[i] + self.reaction(rho[i], i);
            west = east;
        }
    }

    /// Sup-norm of the discrete steady-state equation.
    pub fn residual(&self, rho: &[f64]) -> f64 {
        let mut out = vec![0.0; rho.len()];
        self.rate_of_change(rho, &mut out);
        out.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest explicit step keeping every diagonal coefficient of the update nonnegative.
    pub fn cfl_max_dt(&self) -> f64 {
        let dx = self.grid.dx();
        let slope = self.potential.max_abs_slope();
        let robin = match self.model.model {
            ModelKind::A => 2.0 * self.model.beta,
            _ => 0.0,
        };
        let reaction = match self.model.model {
            ModelKind::A => 0.0,
            ModelKind::B => self.model.beta * self.potential.sup_exp_neg(),
            ModelKind::C => self.model.alpha + self.model.beta * self.potential.sup_exp_neg(),
        };
        dx * dx / (2.0 + dx * (slope + robin) + dx * dx * reaction)
    }

    /// One forward Euler step in place; `scratch` is resized as needed.
    pub fn advance_explicit(&self, rho: &mut [f64], dt: f64, scratch: &mut Vec<f64>) -> Result<()> {
        scratch.resize(rho.len(), 0.0);
        self.rate_of_change(rho, scratch);
        for (i, (r, d)) in rho.iter_mut().zip(scratch.iter()).enumerate() {
            *r += dt * d;
            if !r.is_finite() {
                return Err(FluxError::Divergence { node: i });
            }
        }
        Ok(())
    }
}

/// Face fluxes including both boundary faces (n + 1 values, left to right).
#[derive(Debug, Clone, PartialEq)]
pub struct FluxField {
    pub faces: Vec<f64>,
}

impl FluxField {
    pub fn left_boundary(&self) -> f64 {
        self.faces[0]
    }

    pub fn right_boundary(&self) -> f64 {
        self.faces[self.faces.len() - 1]
    }

    pub fn interior(&self) -> &[f64] {
        &self.faces[1..self.faces.len() - 1]
    }
}

/// J at interior face `face` for the density `rho`.
pub fn face_flux(rho: &DensityField, model: &ModelSpec, face: usize) -> Result<f64> {
    Scheme::new(model, rho.grid())?.face_flux(rho.values(), face)
}

pub fn cfl_max_dt(model: &ModelSpec, grid: &Grid) -> Result<f64> {
    Ok(Scheme::new(model, grid)?.cfl_max_dt())
}

/// One explicit Euler step; refuses steps above [`cfl_max_dt`].
pub fn step_explicit(rho: &DensityField, model: &ModelSpec, dt: f64) -> Result<DensityField> {
    let scheme = Scheme::new(model, rho.grid())?;
    let max_dt = scheme.cfl_max_dt();
    if !(dt > 0.0 && dt <= max_dt) {
        return Err(FluxError::Stability { dt, max_dt });
    }
    let mut next = rho.clone();
    scheme.advance_explicit(next.values_mut(), dt, &mut Vec::new())?;
    Ok(next)
}

/// Sup-norm residual of the discrete stationary equation, boundary faces included.
pub fn residual_stationary(rho: &DensityField, model: &ModelSpec) -> Result<f64> {
    Ok(Scheme::new(model, rho.grid())?.residual(rho.values()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    pub max_iter: usize,
    pub tolerance: f64,
    /// Maximum number of step halvings in the backtracking line search.
    pub damping: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tolerance: 1e-10,
            damping: 8,
        }
    }
}

#[inline]
fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Largest change of the entropy variable in one Newton update.
const MAX_ENTROPY_UPDATE: f64 = 2.0;

/// Smallest continuation increment is dt / 2^this.
const MAX_CONTINUATION_HALVINGS: i32 = 30;

/// Backward Euler for model C written in the entropy variable
/// u = log(ρ/(1 − ρ)) − V, so that ρ = logistic(u + V) stays in (0, 1) and the
/// flux reads −ρ(1 − ρ)∂ₓu.
#[derive(Debug, Clone)]
pub struct ImplicitEntropyStepper {
    scheme: Scheme,
    newton: NewtonConfig,
}

impl ImplicitEntropyStepper {
    pub fn new(model: &ModelSpec, grid: &Grid, newton: NewtonConfig) -> Result<Self> {
        if model.model != ModelKind::C {
            return Err(FluxError::Precondition(format!(
                "the implicit entropy scheme is defined for model C only, got model {}",
                model.model
            )));
        }
        Ok(Self {
            scheme: Scheme::new(model, grid)?,
            newton,
        })
    }

    fn densities(&self, u: &[f64], rho: &mut [f64], one_minus: &mut [f64]) {
        let v = &self.scheme.potential.nodal;
        for i in 0..u.len() {
            rho[i] = logistic(u[i] + v[i]);
            one_minus[i] = logistic(-(u[i] + v[i]));
        }
    }

    /// Per-volume residual of the backward Euler system at `u`.
    fn residual(&self, u: &[f64], prev: &[f64], dt: f64, rho: &[f64], om: &[f64], out: &mut [f64]) {
        let n = u.len();
        let dx = self.scheme.grid.dx();
        let alpha = self.scheme.model.alpha;
        let mut west = 0.0;
        for i in 0..n {
            let east = if i + 1 < n {
                let m = 0.5 * (rho[i] * om[i] + rho[i + 1] * om[i + 1]);
                -m * (u[i + 1] - u[i]) / dx
            } else {
                0.0
            };
            let reaction = alpha * om[i] - self.scheme.decay[i] * rho[i];
            out[i] = (rho[i] - prev[i]) / dt + (east - west) / self.scheme.widths[i] - reaction;
            west = east;
        }
    }

    fn jacobian(&self, u: &[f64], dt: f64, rho: &[f64], om: &[f64]) -> Tridiagonal {
        let n = u.len();
        let dx = self.scheme.grid.dx();
        let alpha = self.scheme.model.alpha;
        let mut jac = Tridiagonal::zeros(n);
        for i in 0..n {
            let s = rho[i] * om[i];
            jac.diag[i] += s / dt + (alpha + self.scheme.decay[i]) * s;
        }
        for f in 0..n - 1 {
            let (sl, sr) = (rho[f] * om[f], rho[f + 1] * om[f + 1]);
            let m = 0.5 * (sl + sr);
            let du = u[f + 1] - u[f];
            // ∂J/∂u on each side of the face, mobility derivative included
            let d_left = m / dx - 0.5 * sl * (om[f] - rho[f]) * du / dx;
            let d_right = -m / dx - 0.5 * sr * (om[f + 1] - rho[f + 1]) * du / dx;
            let (wl, wr) = (self.scheme.widths[f], self.scheme.widths[f + 1]);
            jac.diag[f] += d_left / wl;
            jac.upper[f] += d_right / wl;
            jac.lower[f + 1] -= d_left / wr;
            jac.diag[f + 1] -= d_right / wr;
        }
        jac
    }

    /// Newton iteration for the backward Euler system with step `dt`, started at `u`.
    fn newton(&self, u: &mut Vec<f64>, prev: &[f64], dt: f64) -> Result<Vec<f64>> {
        let n = prev.len();
        let sup = |r: &[f64]| r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        // The Newton direction always descends ‖F‖₂, not necessarily ‖F‖∞.
        let merit = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>();

        let (mut rho, mut om, mut res) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        self.densities(u, &mut rho, &mut om);
        self.residual(u, prev, dt, &rho, &om, &mut res);
        let mut norm = sup(&res);
        let mut level = merit(&res);
        let mut trial = vec![0.0; n];
        let (mut trho, mut tom, mut tres) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for _ in 0..self.newton.max_iter {
            if norm < self.newton.tolerance {
                break;
            }
            let failure = || FluxError::StepFailure {
                iterations: self.newton.max_iter,
                residual: norm,
            };
            // A singular Jacobian means the logistic map has saturated.
            let delta = self.jacobian(u, dt, &rho, &om).solve(&res).map_err(|_| failure())?;
            // Large steps in u saturate the logistic map; cap them first.
            let mut lambda = (MAX_ENTROPY_UPDATE / sup(&delta)).min(1.0);
            let mut halvings = 0;
            loop {
                for i in 0..n {
                    trial[i] = u[i] - lambda * delta[i];
                }
                self.densities(&trial, &mut trho, &mut tom);
                self.residual(&trial, prev, dt, &trho, &tom, &mut tres);
                let tlevel = merit(&tres);
                if tlevel.is_finite() && tlevel < level {
                    std::mem::swap(u, &mut trial);
                    std::mem::swap(&mut rho, &mut trho);
                    std::mem::swap(&mut om, &mut tom);
                    std::mem::swap(&mut res, &mut tres);
                    norm = sup(&res);
                    level = tlevel;
                    break;
                }
                if halvings >= self.newton.damping {
                    return Err(failure());
                }
                lambda *= 0.5;
                halvings += 1;
            }
        }
        if !(norm < self.newton.tolerance) {
            return Err(FluxError::StepFailure {
                iterations: self.newton.max_iter,
                residual: norm,
            });
        }
        if let Some(i) = rho.iter().position(|&r| !(r > 0.0 && r < 1.0)) {
            return Err(FluxError::Domain(format!(
                "implicit step saturated the logistic map at node {i}"
            )));
        }
        Ok(rho)
    }

    /// Advances `prev` by `dt`; errors if Newton stalls.
    ///
    /// When Newton fails from `prev`, the same system is reached by
    /// continuation in the step size: the backward Euler system is solved for
    /// an increasing sequence of steps τ up to dt, each solve starting from
    /// the last converged one. The increment is halved on failure and doubled
    /// on success, down to dt / 2^[`MAX_CONTINUATION_HALVINGS`].
    pub fn step(&self, prev: &[f64], dt: f64) -> Result<Vec<f64>> {
        if let Some(i) = prev.iter().position(|&r| !(r > 0.0 && r < 1.0)) {
            return Err(FluxError::Domain(format!(
                "implicit scheme needs 0 < rho < 1, node {i} holds {}",
                prev[i]
            )));
        }
        let v = &self.scheme.potential.nodal;
        let mut done: Vec<f64> = prev
            .iter()
            .zip(v)
            .map(|(&r, &vi)| (r / (1.0 - r)).ln() - vi)
            .collect();
        let mut u = done.clone();
        let first = match self.newton(&mut u, prev, dt) {
            Ok(rho) => return Ok(rho),
            Err(e) => e,
        };
        let min_increment = dt / f64::powi(2.0, MAX_CONTINUATION_HALVINGS);
        let (mut tau, mut increment) = (0.0, 0.5 * dt);
        loop {
            let target = (tau + increment).min(dt);
            u.clone_from(&done);
            match self.newton(&mut u, prev, target) {
                Ok(rho) if target >= dt => return Ok(rho),
                Ok(_) => {
                    tau = target;
                    done.clone_from(&u);
                    increment *= 2.0;
                }
                Err(FluxError::StepFailure { .. }) | Err(FluxError::Domain(_)) => {
                    increment *= 0.5;
                    if increment < min_increment {
                        return Err(first);
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// One backward Euler step of model C in the entropy variable.
pub fn step_implicit_entropy(
    rho: &DensityField,
    model: &ModelSpec,
    dt: f64,
    newton: NewtonConfig,
) -> Result<DensityField> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(FluxError::Config(format!("time step must be positive, got {dt}")));
    }
    let stepper = ImplicitEntropyStepper::new(model, rho.grid(), newton)?;
    DensityField::new(rho.grid().clone(), stepper.step(rho.values(), dt)?)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    #[default]
    Explicit,
    /// Backward Euler in the entropy variable (model C only).
    ImplicitEntropy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Observation stride in steps.
    pub observe_every: usize,
    pub scheme: SchemeKind,
    pub newton: NewtonConfig,
    /// Times at which the field is stored; rounded to the nearest step.
    pub snapshot_times: Vec<f64>,
    /// Evaluate entropy and mass after every step (not only at observations).
    pub track_steps: bool,
    /// Entropy used for observations; defaults to the model's own.
    pub entropy: Option<EntropyKind>,
    /// Keep the density at every observation in [`Trajectory::observed_fields`].
    pub record_fields: bool,
}

impl SolverConfig {
    pub fn new(dt: f64, t_end: f64) -> Self {
        Self {
            dt,
            t_end,
            observe_every: 1000,
            scheme: SchemeKind::Explicit,
            newton: NewtonConfig::default(),
            snapshot_times: Vec::new(),
            track_steps: true,
            entropy: None,
            record_fields: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(FluxError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(FluxError::Config(format!(
                "t_end must be nonnegative, got {}",
                self.t_end
            )));
        }
        if self.observe_every == 0 {
            return Err(FluxError::Config("observe_every must be at least 1".into()));
        }
        if let Some(&t) = self
            .snapshot_times
            .iter()
            .find(|&&t| !(t >= 0.0 && t <= self.t_end * (1.0 + 1e-12)))
        {
            return Err(FluxError::Config(format!(
                "snapshot time {t} outside [0, {}]",
                self.t_end
            )));
        }
        Ok(())
    }

    /// Number of steps; the last one is shortened if t_end is not a multiple of dt.
    pub fn step_count(&self) -> usize {
        let ratio = self.t_end / self.dt;
        let nearest = ratio.round();
        if (nearest - ratio).abs() <= 1e-9 * ratio.max(1.0) {
            nearest as usize
        } else {
            ratio.ceil() as usize
        }
    }

    fn time_at(&self, k: usize, steps: usize) -> f64 {
        if k >= steps {
            self.t_end
        } else {
            k as f64 * self.dt
        }
    }
}

/// Per-step monitors collected when [`SolverConfig::track_steps`] is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub steps: usize,
    /// Largest entropy increase between consecutive steps (≤ 0 if monotone).
    pub max_entropy_increase: f64,
    /// Largest |M^{k+1} − M^k − dt(α − βρ^k_{n−1})| (model A only).
    pub max_mass_balance_defect: Option<f64>,
    pub min_value: f64,
    pub max_value: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<DensityField>,
    pub observations: ObservationSeries,
    pub final_field: DensityField,
    pub final_time: f64,
    /// Equilibrium the observations are measured against.
    pub reference: DensityField,
    pub entropy_kind: EntropyKind,
    pub diagnostics: StepDiagnostics,
    /// Densities at the observation times, when requested.
    pub observed_fields: Vec<DensityField>,
}

/// Equilibrium against which a run is measured: the scheme's own discrete
/// steady state for the explicit stepper, the closed form for the implicit one.
pub fn reference_equilibrium(model: &ModelSpec, grid: &Grid, scheme: SchemeKind) -> Result<DensityField> {
    let sol = match scheme {
        SchemeKind::Explicit => stationary::stationary_numeric(model, grid)?,
        SchemeKind::ImplicitEntropy => stationary::stationary_closed(model, grid)?,
    };
    Ok(sol.field)
}

enum Stepper {
    Explicit(Scheme, Vec<f64>),
    Implicit(ImplicitEntropyStepper),
}

impl Stepper {
    fn advance(&mut self, rho: &mut Vec<f64>, dt: f64) -> Result<()> {
        match self {
            Stepper::Explicit(scheme, scratch) => scheme.advance_explicit(rho, dt, scratch),
            Stepper::Implicit(stepper) => {
                *rho = stepper.step(rho, dt)?;
                Ok(())
            }
        }
    }
}

/// Integrates `initial` to `config.t_end`, sampling observations along the way.
pub fn run_transient(model: &ModelSpec, initial: &DensityField, config: &SolverConfig) -> Result<Trajectory> {
    config.validate()?;
    let grid = initial.grid().clone();
    let scheme = Scheme::new(model, &grid)?;
    initial.check_admissible(model.model, config.scheme == SchemeKind::ImplicitEntropy)?;
    let mut stepper = match config.scheme {
        SchemeKind::Explicit => {
            let max_dt = scheme.cfl_max_dt();
            if config.dt > max_dt {
                return Err(FluxError::Stability {
                    dt: config.dt,
                    max_dt,
                });
            }
            Stepper::Explicit(scheme.clone(), Vec::with_capacity(grid.len()))
        }
        SchemeKind::ImplicitEntropy => {
            Stepper::Implicit(ImplicitEntropyStepper::new(model, &grid, config.newton)?)
        }
    };

    let reference = reference_equilibrium(model, &grid, config.scheme)?;
    let kind = config.entropy.unwrap_or_else(|| EntropyKind::for_model(model.model));
    let rinf = reference.values().to_vec();
    let observe = |rho: &[f64], t: f64, obs: &mut ObservationSeries| -> Result<f64> {
        let e = entropy::entropy_of(kind, &grid, rho, &rinf)?;
        obs.push(
            t,
            e,
            grid.integrate(rho),
            entropy::l1_of(&grid, rho, &rinf),
            scheme.residual(rho),
        );
        Ok(e)
    };

    let steps = config.step_count();
    let mut snap_steps: Vec<(usize, usize)> = config
        .snapshot_times
        .iter()
        .enumerate()
        .map(|(j, &t)| (((t / config.dt).round() as usize).min(steps), j))
        .collect();
    snap_steps.sort();
    let mut snap_slots: Vec<Option<(f64, DensityField)>> = vec![None; config.snapshot_times.len()];
    let mut next_snap = 0;

    let mut rho = initial.values().to_vec();
    let mut obs = ObservationSeries::default();
    let mut entropy_now = observe(&rho, 0.0, &mut obs)?;
    let mut observed_fields = Vec::new();
    let record = |rho: &[f64], fields: &mut Vec<DensityField>| {
        if config.record_fields {
            fields.push(DensityField::new(grid.clone(), rho.to_vec()).expect("finite state"));
        }
    };
    record(&rho, &mut observed_fields);
    let mut mass_now = grid.integrate(&rho);
    let mut diag = StepDiagnostics {
        steps,
        max_entropy_increase: f64::NEG_INFINITY,
        max_mass_balance_defect: (model.model == ModelKind::A).then_some(0.0),
        min_value: rho.iter().copied().fold(f64::INFINITY, f64::min),
        max_value: rho.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    let mut take_snapshots = |k: usize, t: f64, rho: &[f64], next: &mut usize| {
        while *next < snap_steps.len() && snap_steps[*next].0 == k {
            let field = DensityField::new(grid.clone(), rho.to_vec()).expect("finite state");
            snap_slots[snap_steps[*next].1] = Some((t, field));
            *next += 1;
        }
    };
    take_snapshots(0, 0.0, &rho, &mut next_snap);

    for k in 1..=steps {
        let t_prev = config.time_at(k - 1, steps);
        let t = config.time_at(k, steps);
        let dt = t - t_prev;
        let outflow = model.beta * rho[rho.len() - 1];
        stepper
            .advance(&mut rho, dt)
            .map_err(|e| FluxError::Step {
                time: t,
                source: Box::new(e),
            })?;
        let observe_now = k % config.observe_every == 0 || k == steps;
        if config.track_steps {
            for &v in &rho {
                diag.min_value = diag.min_value.min(v);
                diag.max_value = diag.max_value.max(v);
            }
            let mass_next = grid.integrate(&rho);
            if let Some(defect) = diag.max_mass_balance_defect.as_mut() {
                let expected = dt * (model.alpha - outflow);
                *defect = defect.max((mass_next - mass_now - expected).abs());
            }
            mass_now = mass_next;
            if !observe_now {
                let e = entropy::entropy_of(kind, &grid, &rho, &rinf).map_err(|e| FluxError::Step {
                    time: t,
                    source: Box::new(e),
                })?;
                diag.max_entropy_increase = diag.max_entropy_increase.max(e - entropy_now);
                entropy_now = e;
            }
        }
        if observe_now {
            let e = observe(&rho, t, &mut obs).map_err(|e| FluxError::Step {
                time: t,
                source: Box::new(e),
            })?;
            record(&rho, &mut observed_fields);
            if config.track_steps {
                diag.max_entropy_increase = diag.max_entropy_increase.max(e - entropy_now);
            }
            entropy_now = e;
        }
        take_snapshots(k, t, &rho, &mut next_snap);
    }
    if steps == 0 || !config.track_steps {
        diag.max_entropy_increase = diag.max_entropy_increase.max(0.0);
    }

    let (times, snapshots) = snap_slots.into_iter().flatten().unzip();
    let final_time = config.time_at(steps, steps);
    Ok(Trajectory {
        times,
        snapshots,
        observations: obs,
        final_field: DensityField::new(grid.clone(), rho)?,
        final_time,
        reference,
        entropy_kind: kind,
        diagnostics: diag,
        observed_fields,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_grid, build_initial, InitialSpec, PotentialSpec};
    use crate::stationary::stationary_closed;
    use approx::assert_relative_eq;

    fn model(kind: ModelKind, alpha: f64, beta: f64, pot: PotentialSpec) -> ModelSpec {
        ModelSpec::new(kind, alpha, beta, pot)
    }

    #[test]
    fn implicit_step_survives_sharp_spike_by_continuation() {
        let g = build_grid(9).unwrap();
        let m = model(ModelKind::C, 0.2, 0.2, PotentialSpec::zero());
        let mut v = vec![0.02; 9];
        v[3] = 0.9289159292999717;
        let rho = DensityField::new(g.clone(), v).unwrap();
        let out = step_implicit_entropy(&rho, &m, 0.3553097704396461, NewtonConfig::default()).unwrap();
        let st = ImplicitEntropyStepper::new(&m, &g, NewtonConfig::default()).unwrap();
        let u: Vec<f64> = out.values().iter().map(|&r| (r / (1.0 - r)).ln()).collect();
        let (mut r, mut o, mut res) = (vec![0.0; 9], vec![0.0; 9], vec![0.0; 9]);
        st.densities(&u, &mut r, &mut o);
        st.residual(&u, rho.values(), 0.3553097704396461, &r, &o, &mut res);
        assert!(res.iter().all(|x| x.abs() < 1e-9), "{res:?}");
        // diffusion flattens the spike
        assert!(out.values()[3] < 0.25);
    }

    #[test]
    fn implicit_jacobian_matches_finite_differences() {
        let g = build_grid(7).unwrap();
        let m = model(ModelKind::C, 0.7, 1.3, PotentialSpec::scaled_linear(1.5));
        let st = ImplicitEntropyStepper::new(&m, &g, NewtonConfig::default()).unwrap();
        let prev = [0.1, 0.3, 0.5, 0.8, 0.2, 0.6, 0.4];
        let u = [-1.0, 0.5, 2.0, -0.3, 1.1, -2.0, 0.2];
        let dt = 0.05;
        let eval = |u: &[f64]| {
            let (mut r, mut o, mut out) = (vec![0.0; 7], vec![0.0; 7], vec![0.0; 7]);
            st.densities(u, &mut r, &mut o);
            st.residual(u, &prev, dt, &r, &o, &mut out);
            (r, o, out)
        };
        let (r, o, _) = eval(&u);
        let jac = st.jacobian(&u, dt, &r, &o);
        let h = 1e-6;
        for j in 0..7 {
            let (mut up, mut dn) = (u, u);
            up[j] += h;
            dn[j] -= h;
            let (fp, fm) = (eval(&up).2, eval(&dn).2);
            for i in 0..7 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                let exact = match j as isize - i as isize {
                    0 => jac.diag[i],
                    1 => jac.upper[i],
                    -1 => jac.lower[i],
                    _ => 0.0,
                };
                assert!((fd - exact).abs() < 1e-6 * (1.0 + fd.abs()), "({i},{j}): fd {fd} vs {exact}");
            }
        }
    }

    #[test]
    fn constant_density_fluxes() {
        let g = build_grid(20).unwrap();
        let rho = DensityField::from_fn(&g, |_| 1.7);
        let a = model(ModelKind::A, 1.0, 0.9, PotentialSpec::linear());
        for f in 0..g.interior_faces() {
            assert_relative_eq!(face_flux(&rho, &a, f).unwrap(), 1.7, epsilon = 1e-14);
        }
        let z = model(ModelKind::A, 1.0, 0.9, PotentialSpec::zero());
        assert_eq!(face_flux(&rho, &z, 3).unwrap(), 0.0);
        assert!(matches!(
            face_flux(&rho, &a, 19),
            Err(FluxError::Index { index: 19, faces: 19 })
        ));
    }

    #[test]
    fn equilibrium_flux_equals_influx() {
        let g = build_grid(200).unwrap();
        let a = model(ModelKind::A, 1.0, 0.9, PotentialSpec::linear());
        let rinf = stationary_closed(&a, &g).unwrap().field;
        let flux = Scheme::new(&a, &g).unwrap().fluxes(rinf.values());
        assert_eq!(flux.faces.len(), g.len() + 1);
        assert_eq!(flux.left_boundary(), 1.0);
        let dev = flux.interior().iter().fold(0.0f64, |m, j| m.max((j - 1.0).abs()));
        assert!(dev < 1e-4, "{dev:e}");
        assert_relative_eq!(flux.right_boundary(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn no_flux_walls_for_reaction_models() {
        let g = build_grid(10).unwrap();
        let rho = DensityField::from_fn(&g, |x| 0.3 + 0.2 * x);
        for kind in [ModelKind::B, ModelKind::C] {
            let s = Scheme::new(&model(kind, 1.0, 0.9, PotentialSpec::linear()), &g).unwrap();
            let f = s.fluxes(rho.values());
            assert_eq!((f.left_boundary(), f.right_boundary()), (0.0, 0.0));
        }
    }

    #[test]
    fn cfl_bound_values() {
        let g = build_grid(200).unwrap();
        let dx = g.dx();
        let b0 = model(ModelKind::B, 1.0, 1.0, PotentialSpec::zero());
        let dt0 = cfl_max_dt(&b0, &g).unwrap();
        assert_relative_eq!(dt0, dx * dx / 2.0, max_relative = 1e-4);
        assert!((dt0 - 1.263e-5).abs() < 1e-8);
        let b1 = model(ModelKind::B, 1.0, 0.9, PotentialSpec::linear());
        assert_relative_eq!(
            cfl_max_dt(&b1, &g).unwrap(),
            dx * dx / (2.0 + dx),
            max_relative = 1e-4
        );
        for kind in [ModelKind::A, ModelKind::B, ModelKind::C] {
            let m = model(kind, 1.0, 0.9, PotentialSpec::linear());
            assert!(cfl_max_dt(&m, &g).unwrap() > 5e-6);
        }
    }

    #[test]
    fn explicit_step_rejects_large_dt() {
        let g = build_grid(50).unwrap();
        let m = model(ModelKind::A, 1.0, 0.9, PotentialSpec::linear());
        let rho = DensityField::from_fn(&g, |_| 1.0);
        let max_dt = cfl_max_dt(&m, &g).unwrap();
        assert!(matches!(
            step_explicit(&rho, &m, 2.0 * max_dt),
            Err(FluxError::Stability { .. })
        ));
        assert!(step_explicit(&rho, &m, max_dt).is_ok());
    }

    #[test]
    fn model_b_equilibrium_is_nearly_fixed() {
        let g = build_grid(100).unwrap();
        let m = model(ModelKind::B, 1.0, 0.9, PotentialSpec::linear());
        let rinf = stationary_closed(&m, &g).unwrap().field;
        let dt = 1e-5;
        let next = step_explicit(&rinf, &m, dt).unwrap();
        let res = residual_stationary(&rinf, &m).unwrap();
        assert!(next.sup_distance(&rinf) <= res * dt * (1.0 + 1e-9));
        // the half cells at the walls are first-order consistent
        assert!(res < 1e-2);
    }

    #[test]
    fn shifted_model_b_equilibrium_rates() {
        let g = build_grid(100).unwrap();
        let m = model(ModelKind::B, 1.0, 0.9, PotentialSpec::linear());
        let scheme = Scheme::new(&m, &g).unwrap();
        let rinf = stationary_closed(&m, &g).unwrap().field;
        let shifted: Vec<f64> = rinf.values().iter().map(|r| r + 0.1).collect();
        let (mut base, mut moved) = (vec![0.0; 100], vec![0.0; 100]);
        scheme.rate_of_change(rinf.values(), &mut base);
        scheme.rate_of_change(&shifted, &mut moved);
        // a constant shift adds the uniform drift flux 0.1 V' = 0.1 and the
        // decay -0.1 beta e^{-V}; the walls block the drift flux
        let h = 0.5 * g.dx();
        for (i, &x) in g.nodes().iter().enumerate() {
            let mut expected = -0.1 * 0.9 * (-x).exp();
            if i == 0 {
                expected -= 0.1 / h;
            } else if i == 99 {
                expected += 0.1 / h;
            }
            assert!((moved[i] - base[i] - expected).abs() < 1e-9, "node {i}");
        }
    }

    #[test]
    fn mass_balance_is_exact_per_step() {
        let g = build_grid(60).unwrap();
        let m = model(ModelKind::A, 1.0, 0.9, PotentialSpec::linear());
        let rho0 = build_initial(&InitialSpec::Mass2, &g, &m).unwrap();
        let dt = 0.5 * cfl_max_dt(&m, &g).unwrap();
        let mut rho = rho0;
        for _ in 0..500 {
            let next = step_explicit(&rho, &m, dt).unwrap();
            let dm = g.integrate(next.values()) - g.integrate(rho.values());
            let expected = dt * (1.0 - 0.9 * rho.values()[59]);
            assert!((dm - expected).abs() < 1e-12);
            rho = next;
        }
    }

    #[test]
    fn run_with_zero_end_time_holds_initial_state() {
        let g = build_grid(30).unwrap();
        let m = model(ModelKind::B, 1.0, 0.9, PotentialSpec::linear());
        let rho0 = DensityField::from_fn(&g, |x| 1.2 - 0.1 * x);
        let mut cfg = SolverConfig::new(1e-4, 0.0);
        cfg.snapshot_times = vec![0.0];
        let traj = run_transient(&m, &rho0, &cfg).unwrap();
        assert_eq!(traj.observations.len(), 1);
        assert_eq!(traj.snapshots.len(), 1);
        assert_eq!(traj.final_field, rho0);
        assert_eq!(traj.final_time, 0.0);
    }

    #[test]
    fn run_samples_and_snapshots() {
        let g = build_grid(40).unwrap();
        let m = model(ModelKind::A, 1.0, 0.9, PotentialSpec::linear());
        let rho0 = DensityField::from_fn(&g, |x| 1.2 - 0.1 * x);
        let mut cfg = SolverConfig::new(1e-4, 0.1005);
        cfg.observe_every = 100;
        cfg.snapshot_times = vec![0.05, 0.0, 0.1005];
        let traj = run_transient(&m, &rho0, &cfg).unwrap();
        // observations at steps 0, 100, ..., 1000 and the final step 1005
        assert_eq!(cfg.step_count(), 1005);
        assert_eq!(traj.observations.len(), 12);
        assert!(traj.observations.t.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(traj.final_time, 0.1005);
        assert_eq!(traj.times.len(), 3);
        assert_relative_eq!(traj.times[0], 0.05, epsilon = 1e-12);
        assert_eq!(traj.times[1], 0.0);
        assert!(traj.diagnostics.max_mass_balance_defect.unwrap() < 1e-12);
    }

    #[test]
    fn run_rejects_unstable_dt() {
        let g = build_grid(100).unwrap();
        let m = model(ModelKind::A, 1.0, 0.9, PotentialSpec::linear());
        let rho0 = DensityField::from_fn(&g, |_| 1.0);
        let err = run_transient(&m, &rho0, &SolverConfig::new(1e-3, 1.0)).unwrap_err();
        assert!(matches!(err, FluxError::Stability { .. }));
    }

    #[test]
    fn implicit_fixed_point_at_equilibrium() {
        let g = build_grid(100).unwrap();
        let m = model(ModelKind::C, 1.0, 0.9, PotentialSpec::linear());
        let rinf = stationary_closed(&m, &g).unwrap().field;
        let next = step_implicit_entropy(&rinf, &m, 1e-3, NewtonConfig::default()).unwrap();
        assert!(next.sup_distance(&rinf) < 1e-10);
    }

    #[test]
    fn implicit_requires_model_c_and_open_box() {
        let g = build_grid(20).unwrap();
        let b = model(ModelKind::B, 1.0, 0.9, PotentialSpec::linear());
        let rho = DensityField::from_fn(&g, |_| 0.5);
        assert!(matches!(
            step_implicit_entropy(&rho, &b, 1e-3, NewtonConfig::default()),
            Err(FluxError::Precondition(_))
        ));
        let c = model(ModelKind::C, 1.0, 0.9, PotentialSpec::linear());
        let edge = DensityField::from_fn(&g, |x| if x < 0.5 { 0.5 } else { 1.0 });
        assert!(step_implicit_entropy(&edge, &c, 1e-3, NewtonConfig::default()).is_err());
    }

    #[test]
    fn implicit_newton_failure_reports_residual() {
        let g = build_grid(50).unwrap();
        let c = model(ModelKind::C, 1.0, 0.9, PotentialSpec::linear());
        let rho = DensityField::from_fn(&g, |x| (1.0 - (x - 0.5) * (x - 0.5)).clamp(0.01, 0.99));
        let newton = NewtonConfig {
            max_iter: 1,
            tolerance: 1e-14,
            damping: 0,
        };
        let err = step_implicit_entropy(&rho, &c, 1e-1, newton).unwrap_err();
        assert!(matches!(err, FluxError::StepFailure { iterations: 1, .. }), "{err}");
    }

    #[test]
    fn implicit_step_dissipates_two_species_entropy() {
        let g = build_grid(200).unwrap();
        let c = model(ModelKind::C, 1.0, 0.9, PotentialSpec::linear());
        let rinf = stationary_closed(&c, &g).unwrap().field;
        let mut rho = DensityField::from_fn(&g, |x| (1.0 - (x - 0.5) * (x - 0.5)).clamp(0.01, 0.99));
        let mut e = entropy::entropy(EntropyKind::TwoSpecies, &rho, &rinf).unwrap();
        for _ in 0..50 {
            rho = step_implicit_entropy(&rho, &c, 1e-3, NewtonConfig::default()).unwrap();
            assert!(rho.values().iter().all(|&r| r > 0.0 && r < 1.0));
            let e_next = entropy::entropy(EntropyKind::TwoSpecies, &rho, &rinf).unwrap();
            assert!(e_next <= e + 1e-12, "{e_next} > {e}");
            e = e_next;
        }
    }
}
