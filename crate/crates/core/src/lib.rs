//! Finite-volume solver for one-dimensional Fokker–Planck equations with
//! in- and outflow, their stationary states, and entropy decay diagnostics.
//!
//! Three models share the flux `J = −ρ′ + f(ρ) V′` on `[0, 1]`:
//!
//! * `A`: linear flux, inflow `α` at `x = 0`, outflow `βρ` at `x = 1`;
//! * `B`: linear flux, no-flux walls, bulk reaction `α − βe^{−V}ρ`;
//! * `C`: volume-exclusion flux `ρ(1 − ρ)V′`, bulk reaction `α(1 − ρ) − βe^{−V}ρ`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod domain;
pub mod entropy;
pub mod error;
pub mod experiments;
pub mod spectral;
pub mod stationary;
pub mod transient;
pub mod tridiag;

pub use domain::{
    build_grid, build_initial, eval_potential, DensityField, Grid, InitialSpec, ModelKind,
    ModelSpec, PotentialKind, PotentialSpec, PotentialValues,
};
pub use entropy::{
    ck_check, ck_constant, entropy, fit_exponential_rate, k1_bound, l1_distance, mass, phi,
    predicted_rate, EntropyKind, FitWindow, ObservationSeries, PredictedRate, RateBounds,
    RateReport, RateSource,
};
pub use error::{ErrorClass, FluxError, Result};
pub use spectral::{discrete_min_rayleigh, friedrichs_k, symmetric_k, EigenResult, EquationTag};
pub use stationary::{
    stationary_closed, stationary_model_a_closed, stationary_model_b_closed,
    stationary_model_c_closed, stationary_numeric, StationaryMethod, StationarySolution,
};
pub use transient::{
    cfl_max_dt, face_flux, residual_stationary, run_transient, step_explicit,
    step_implicit_entropy, NewtonConfig, SchemeKind, SolverConfig, Trajectory,
};
