//! Grids, potentials, model parameters and initial data on the unit interval.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{FluxError, Result};

/// Uniform mesh on [0, 1] with `n` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    n: usize,
    dx: f64,
    nodes: Arc<[f64]>,
}

impl Grid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(FluxError::InvalidGrid(format!(
                "at least 3 nodes required, got {n}"
            )));
        }
        let intervals = (n - 1) as f64;
        let nodes: Arc<[f64]> = (0..n).map(|i| i as f64 / intervals).collect();
        Ok(Self {
            n,
            dx: 1.0 / intervals,
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Number of interior faces (between consecutive nodes).
    pub fn interior_faces(&self) -> usize {
        self.n - 1
    }

    /// Width of the control volume around node `i`: half cells at the two ends.
    pub fn cell_width(&self, i: usize) -> f64 {
        if i == 0 || i == self.n - 1 {
            0.5 * self.dx
        } else {
            self.dx
        }
    }

    /// Trapezoid rule on the nodal samples `values`.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.n);
        let interior: f64 = values[1..self.n - 1].iter().sum();
        self.dx * (interior + 0.5 * (values[0] + values[self.n - 1]))
    }

    /// Trapezoid rule on `f(i)` evaluated at every node index.
    pub fn integrate_by<F: FnMut(usize) -> f64>(&self, mut f: F) -> f64 {
        let mut interior = 0.0;
        for i in 1..self.n - 1 {
            interior += f(i);
        }
        self.dx * (interior + 0.5 * (f(0) + f(self.n - 1)))
    }
}

/// Shorthand for [`Grid::new`].
pub fn build_grid(n: usize) -> Result<Grid> {
    Grid::new(n)
}

/// Shape of the potential before scaling by `gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "values")]
pub enum PotentialKind {
    /// V(x) = x
    Linear,
    Zero,
    /// V(x) = x; kept distinct so configs can say what they mean.
    ScaledLinear,
    /// Nodal values, linearly interpolated between nodes.
    Tabulated(Vec<f64>),
}

/// The potential `gamma * V(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_gamma() -> f64 {
    1.0
}

impl PotentialSpec {
    pub fn linear() -> Self {
        Self {
            kind: PotentialKind::Linear,
            gamma: 1.0,
        }
    }

    pub fn zero() -> Self {
        Self {
            kind: PotentialKind::Zero,
            gamma: 1.0,
        }
    }

    pub fn scaled_linear(gamma: f64) -> Self {
        Self {
            kind: PotentialKind::ScaledLinear,
            gamma,
        }
    }

    pub fn tabulated(values: Vec<f64>) -> Self {
        Self {
            kind: PotentialKind::Tabulated(values),
            gamma: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() {
            return Err(FluxError::InvalidModel(format!(
                "potential scaling gamma must be finite, got {}",
                self.gamma
            )));
        }
        if let PotentialKind::Tabulated(values) = &self.kind {
            if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                return Err(FluxError::InvalidModel(format!(
                    "tabulated potential is not finite at node {i}"
                )));
            }
        }
        Ok(())
    }

    /// Whether V is affine in x, in which case face derivatives are exact.
    pub fn is_affine(&self) -> bool {
        !matches!(self.kind, PotentialKind::Tabulated(_))
    }

    /// Nodal V and face-centered V′ on `grid`.
    pub fn evaluate(&self, grid: &Grid) -> Result<PotentialValues> {
        self.validate()?;
        let g = self.gamma;
        let (nodal, face_slope): (Vec<f64>, Vec<f64>) = match &self.kind {
            PotentialKind::Linear | PotentialKind::ScaledLinear => (
                grid.nodes().iter().map(|&x| g * x).collect(),
                vec![g; grid.interior_faces()],
            ),
            PotentialKind::Zero => (vec![0.0; grid.len()], vec![0.0; grid.interior_faces()]),
            PotentialKind::Tabulated(values) => {
                if values.len() != grid.len() {
                    return Err(FluxError::Shape {
                        expected: grid.len(),
                        got: values.len(),
                    });
                }
                let nodal: Vec<f64> = values.iter().map(|v| g * v).collect();
                let slope = nodal.windows(2).map(|w| (w[1] - w[0]) / grid.dx()).collect();
                (nodal, slope)
            }
        };
        let face_value = nodal.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        Ok(PotentialValues {
            nodal,
            face_slope,
            face_value,
        })
    }
}

/// Shorthand for [`PotentialSpec::evaluate`].
pub fn eval_potential(spec: &PotentialSpec, grid: &Grid) -> Result<PotentialValues> {
    spec.evaluate(grid)
}

/// Potential sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialValues {
    /// V at the nodes.
    pub nodal: Vec<f64>,
    /// V′ at the n − 1 interior face midpoints.
    pub face_slope: Vec<f64>,
    /// V at the n − 1 interior face midpoints.
    pub face_value: Vec<f64>,
}

impl PotentialValues {
    pub fn max_abs_slope(&self) -> f64 {
        self.face_slope.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn sup_exp_neg(&self) -> f64 {
        self.nodal.iter().fold(0.0, |m, v| m.max((-v).exp()))
    }

    pub fn inf_exp_neg(&self) -> f64 {
        self.nodal
            .iter()
            .fold(f64::INFINITY, |m, v| m.min((-v).exp()))
    }
}

/// Which of the three in/outflow models is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    /// Linear drift-diffusion, influx α at x = 0 and outflux βρ at x = 1.
    A,
    /// Linear drift-diffusion with bulk reaction α − βρe^{−V}, no-flux walls.
    B,
    /// Crowded flux ρ(1 − ρ)V′ with bulk reaction α(1 − ρ) − βρe^{−V}, no-flux walls.
    C,
}

impl ModelKind {
    /// Nonlinearity multiplying V′ in the flux.
    #[inline]
    pub fn mobility(self, rho: f64) -> f64 {
        match self {
            ModelKind::A | ModelKind::B => rho,
            ModelKind::C => rho * (1.0 - rho),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModelKind::A => "A",
            ModelKind::B => "B",
            ModelKind::C => "C",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model: ModelKind,
    pub alpha: f64,
    pub beta: f64,
    pub potential: PotentialSpec,
}

impl ModelSpec {
    pub fn new(model: ModelKind, alpha: f64, beta: f64, potential: PotentialSpec) -> Self {
        Self {
            model,
            alpha,
            beta,
            potential,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(FluxError::InvalidModel(format!(
                "influx rate must satisfy alpha >= alpha0 > 0, got alpha = {}",
                self.alpha
            )));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(FluxError::InvalidModel(format!(
                "outflux rate must satisfy beta >= beta0 > 0, got beta = {}",
                self.beta
            )));
        }
        self.potential.validate()
    }
}

/// Nodal density samples together with the grid they live on.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    grid: Grid,
    values: Vec<f64>,
}

impl DensityField {
    /// Wraps `values`; only checks length and finiteness.
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(FluxError::Shape {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(FluxError::Divergence { node: i });
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: &Grid, f: F) -> Self {
        let values = grid.nodes().iter().map(|&x| f(x)).collect();
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sup_distance(&self, other: &DensityField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Checks the model's positivity (A, B) or box (C) constraint.
    pub fn check_admissible(&self, model: ModelKind, strict_box: bool) -> Result<()> {
        for (i, (&v, &x)) in self.values.iter().zip(self.grid.nodes()).enumerate() {
            let bad = |reason| {
                Err(FluxError::InvalidInitial {
                    node: i,
                    x,
                    value: v,
                    reason,
                })
            };
            if !v.is_finite() {
                return bad("is not finite");
            }
            match model {
                ModelKind::A | ModelKind::B => {
                    if v < 0.0 {
                        return bad("is negative");
                    }
                }
                ModelKind::C => {
                    if strict_box && !(v > 0.0 && v < 1.0) {
                        return bad("is outside the open box (0, 1)");
                    }
                    if !strict_box && !(0.0..=1.0).contains(&v) {
                        return bad("is outside [0, 1]");
                    }
                }
            }
        }
        Ok(())
    }
}

/// Closed-form initial densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum InitialSpec {
    /// ρ₀(x) = slope·x + intercept
    Affine { slope: f64, intercept: f64 },
    /// ρ₀(x) = 1 − (x − 0.5)²
    Parabola,
    /// Plateau 1.9 on [0, 0.5), cosine ramp down to 0 on [0.5, 0.75], zero beyond.
    Mass1,
    /// Zero on [0, 0.9), 3000(x − 0.9)² on [0.9, 1].
    Mass2,
    Tabulated { values: Vec<f64> },
}

impl InitialSpec {
    pub fn affine(slope: f64, intercept: f64) -> Self {
        InitialSpec::Affine { slope, intercept }
    }

    /// Evaluates the closed form at `x`; `None` for tabulated data.
    pub fn eval(&self, x: f64) -> Option<f64> {
        let v = match *self {
            InitialSpec::Affine { slope, intercept } => slope * x + intercept,
            InitialSpec::Parabola => 1.0 - (x - 0.5) * (x - 0.5),
            InitialSpec::Mass1 => {
                if x < 0.5 {
                    1.9
                } else if x <= 0.75 {
                    // Amplitude 0.5 keeps the profile continuous at both ends
                    // of the ramp; the trapezoid mass on n = 200 is 1.1875.
                    1.9 * (0.5 * (4.0 * PI * x).cos() + 0.5)
                } else {
                    0.0
                }
            }
            InitialSpec::Mass2 => {
                if x < 0.9 {
                    0.0
                } else {
                    3000.0 * (x - 0.9) * (x - 0.9)
                }
            }
            InitialSpec::Tabulated { .. } => return None,
        };
        Some(v)
    }
}

/// Samples `spec` on `grid` and checks it against the model's constraint.
///
/// Model C requires every node strictly inside (0, 1).
pub fn build_initial(spec: &InitialSpec, grid: &Grid, model: &ModelSpec) -> Result<DensityField> {
    let field = match spec {
        InitialSpec::Tabulated { values } => DensityField::new(grid.clone(), values.clone())
            .map_err(|e| match e {
                FluxError::Divergence { node } => FluxError::InvalidInitial {
                    node,
                    x: grid.nodes()[node],
                    value: values[node],
                    reason: "is not finite",
                },
                other => other,
            })?,
        closed => DensityField::from_fn(grid, |x| closed.eval(x).expect("closed form")),
    };
    field.check_admissible(model.model, true)?;
    Ok(field)
}
