//! Stationary solutions: closed forms and a Slotboom-variable numeric solve.

use serde::{Deserialize, Serialize};

use crate::domain::{DensityField, Grid, ModelKind, ModelSpec, PotentialKind, PotentialSpec};
use crate::error::{FluxError, Result};
use crate::transient::Scheme;
use crate::tridiag::Tridiagonal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StationaryMethod {
    ClosedForm,
    Numeric,
}

#[derive(Debug, Clone)]
pub struct StationarySolution {
    pub field: DensityField,
    pub method: StationaryMethod,
    pub model: ModelSpec,
    /// Sup-norm residual of the transient scheme's steady equation.
    pub residual: f64,
}

impl StationarySolution {
    fn finish(field: DensityField, method: StationaryMethod, model: &ModelSpec) -> Result<Self> {
        let residual = Scheme::new(model, field.grid())?.residual(field.values());
        Ok(Self {
            field,
            method,
            model: model.clone(),
            residual,
        })
    }
}

fn check_rates(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite() && beta > 0.0 && beta.is_finite()) {
        return Err(FluxError::InvalidModel(format!(
            "stationary solution needs alpha > 0 and beta > 0, got alpha = {alpha}, beta = {beta}"
        )));
    }
    Ok(())
}

/// ∫ₓ¹ e^{−V(s)} ds at every node.
fn tail_integrals(potential: &PotentialSpec, grid: &Grid) -> Result<Vec<f64>> {
    let g = potential.gamma;
    match &potential.kind {
        PotentialKind::Zero => Ok(grid.nodes().iter().map(|x| 1.0 - x).collect()),
        PotentialKind::Linear | PotentialKind::ScaledLinear => {
            if g == 0.0 {
                return Ok(grid.nodes().iter().map(|x| 1.0 - x).collect());
            }
            // ∫ₓ¹ e^{−γs} ds = e^{−γx} (1 − e^{−γ(1−x)}) / γ
            Ok(grid
                .nodes()
                .iter()
                .map(|&x| (-g * x).exp() * -(-g * (1.0 - x)).exp_m1() / g)
                .collect())
        }
        PotentialKind::Tabulated(_) => {
            let v = potential.evaluate(grid)?.nodal;
            let n = grid.len();
            let mut tail = vec![0.0; n];
            for i in (0..n - 1).rev() {
                tail[i] = tail[i + 1] + 0.5 * grid.dx() * ((-v[i]).exp() + (-v[i + 1]).exp());
            }
            Ok(tail)
        }
    }
}

/// ρ∞(x) = α e^{V(x)} (e^{−V(1)}/β + ∫ₓ¹ e^{−V}), the constant-flux profile J ≡ α.
pub fn stationary_model_a_closed(
    alpha: f64,
    beta: f64,
    potential: &PotentialSpec,
    grid: &Grid,
) -> Result<StationarySolution> {
    check_rates(alpha, beta)?;
    let v = potential.evaluate(grid)?.nodal;
    let tail = tail_integrals(potential, grid)?;
    let v_end = v[grid.len() - 1];
    let values = v
        .iter()
        .zip(&tail)
        .map(|(&vi, &ti)| alpha * ((vi - v_end).exp() / beta + vi.exp() * ti))
        .collect();
    let model = ModelSpec::new(ModelKind::A, alpha, beta, potential.clone());
    StationarySolution::finish(
        DensityField::new(grid.clone(), values)?,
        StationaryMethod::ClosedForm,
        &model,
    )
}

/// ρ∞ = (α/β) e^V.
pub fn stationary_model_b_closed(
    alpha: f64,
    beta: f64,
    potential: &PotentialSpec,
    grid: &Grid,
) -> Result<StationarySolution> {
    check_rates(alpha, beta)?;
    let v = potential.evaluate(grid)?.nodal;
    let values = v.iter().map(|vi| alpha / beta * vi.exp()).collect();
    let model = ModelSpec::new(ModelKind::B, alpha, beta, potential.clone());
    StationarySolution::finish(
        DensityField::new(grid.clone(), values)?,
        StationaryMethod::ClosedForm,
        &model,
    )
}

/// ρ∞ = a/(1 + a) with a = (α/β) e^V, evaluated without overflow.
pub fn stationary_model_c_closed(
    alpha: f64,
    beta: f64,
    potential: &PotentialSpec,
    grid: &Grid,
) -> Result<StationarySolution> {
    check_rates(alpha, beta)?;
    let v = potential.evaluate(grid)?.nodal;
    let shift = (alpha / beta).ln();
    let values = v
        .iter()
        .map(|vi| {
            let z = vi + shift;
            if z >= 0.0 {
                1.0 / (1.0 + (-z).exp())
            } else {
                let e = z.exp();
                e / (1.0 + e)
            }
        })
        .collect();
    let model = ModelSpec::new(ModelKind::C, alpha, beta, potential.clone());
    StationarySolution::finish(
        DensityField::new(grid.clone(), values)?,
        StationaryMethod::ClosedForm,
        &model,
    )
}

pub fn stationary_closed(model: &ModelSpec, grid: &Grid) -> Result<StationarySolution> {
    let f = match model.model {
        ModelKind::A => stationary_model_a_closed,
        ModelKind::B => stationary_model_b_closed,
        ModelKind::C => stationary_model_c_closed,
    };
    f(model.alpha, model.beta, &model.potential, grid)
}

/// Steady problem for models A and B in the Slotboom variable u = ρe^{−V}.
///
/// Rows are integrated over the control volumes, which keeps the matrix
/// symmetric: face coefficients e^{V} at face midpoints, the outflow Robin
/// term βe^{V(1)} on the last row (A) or the reaction βh_i on every row (B).
#[derive(Debug, Clone)]
pub struct SlotboomSystem {
    pub matrix: Tridiagonal,
    pub rhs: Vec<f64>,
    /// e^{V} at the nodes, mapping u back to ρ.
    pub exp_v: Vec<f64>,
}

impl SlotboomSystem {
    pub fn assemble(model: &ModelSpec, grid: &Grid) -> Result<Self> {
        model.validate()?;
        if model.model == ModelKind::C {
            return Err(FluxError::Precondition(
                "the Slotboom system is linear only for models A and B".into(),
            ));
        }
        let pot = model.potential.evaluate(grid)?;
        let n = grid.len();
        let mut matrix = Tridiagonal::zeros(n);
        for (f, vf) in pot.face_value.iter().enumerate() {
            let a = vf.exp() / grid.dx();
            matrix.diag[f] += a;
            matrix.diag[f + 1] += a;
            matrix.upper[f] -= a;
            matrix.lower[f + 1] -= a;
        }
        let mut rhs = vec![0.0; n];
        let exp_v: Vec<f64> = pot.nodal.iter().map(|v| v.exp()).collect();
        match model.model {
            ModelKind::A => {
                rhs[0] = model.alpha;
                matrix.diag[n - 1] += model.beta * exp_v[n - 1];
            }
            _ => {
                for (i, r) in rhs.iter_mut().enumerate() {
                    let h = grid.cell_width(i);
                    *r = h * model.alpha;
                    matrix.diag[i] += h * model.beta;
                }
            }
        }
        Ok(Self { matrix, rhs, exp_v })
    }

    /// Direct solve, returned as ρ = e^{V} u.
    pub fn solve(&self) -> Result<Vec<f64>> {
        let u = self.matrix.solve(&self.rhs)?;
        Ok(u.iter().zip(&self.exp_v).map(|(u, e)| u * e).collect())
    }
}

const MAX_REFINEMENTS: usize = 100;

/// Numeric stationary solution.
///
/// Models A and B start from the Slotboom solve, model C from the closed
/// form. Newton's method on the transient scheme's own steady equation then
/// refines the start (for A and B that equation is linear, so one step plus a
/// roundoff cleanup suffices). The result is the explicit scheme's discrete
/// equilibrium.
pub fn stationary_numeric(model: &ModelSpec, grid: &Grid) -> Result<StationarySolution> {
    stationary_numeric_from(model, grid, None)
}

/// As [`stationary_numeric`], starting the refinement from `guess`.
pub fn stationary_numeric_from(
    model: &ModelSpec,
    grid: &Grid,
    guess: Option<&[f64]>,
) -> Result<StationarySolution> {
    let scheme = Scheme::new(model, grid)?;
    let n = grid.len();
    let mut rho = match guess {
        Some(g) if g.len() == n => g.to_vec(),
        Some(g) => {
            return Err(FluxError::Shape {
                expected: n,
                got: g.len(),
            })
        }
        None if model.model == ModelKind::C => stationary_closed(model, grid)?.field.into_values(),
        None => SlotboomSystem::assemble(model, grid)?.solve()?,
    };
    let pot = scheme.potential();
    let decay: Vec<f64> = pot.nodal.iter().map(|v| model.beta * (-v).exp()).collect();
    let inv_dx = 1.0 / grid.dx();
    let mut rate = vec![0.0; n];
    for _ in 0..MAX_REFINEMENTS {
        scheme.rate_of_change(&rho, &mut rate);
        // F = −h dρ/dt = (J_e − J_w) − h R,  J_f = −(ρ_{f+1} − ρ_f)/dx + f(ρ̄) V′_f
        let defect: Vec<f64> = (0..n).map(|i| -grid.cell_width(i) * rate[i]).collect();
        let mut jac = Tridiagonal::zeros(n);
        for f in 0..n - 1 {
            let slope = match model.model {
                ModelKind::C => 1.0 - (rho[f] + rho[f + 1]),
                _ => 1.0,
            };
            let drift = 0.5 * slope * pot.face_slope[f];
            let (dl, dr) = (inv_dx + drift, -inv_dx + drift);
            jac.diag[f] += dl;
            jac.upper[f] += dr;
            jac.lower[f + 1] -= dl;
            jac.diag[f + 1] -= dr;
        }
        match model.model {
            ModelKind::A => jac.diag[n - 1] += model.beta,
            ModelKind::B => (0..n).for_each(|i| jac.diag[i] += grid.cell_width(i) * decay[i]),
            ModelKind::C => (0..n)
                .for_each(|i| jac.diag[i] += grid.cell_width(i) * (model.alpha + decay[i])),
        }
        let delta = jac.solve(&defect)?;
        let mut change = 0.0f64;
        let mut scale = 0.0f64;
        for (r, d) in rho.iter_mut().zip(&delta) {
            *r -= d;
            change = change.max(d.abs());
            scale = scale.max(r.abs());
        }
        if rho.iter().any(|r| !r.is_finite()) {
            return Err(FluxError::Solver("stationary iteration diverged".into()));
        }
        if model.model == ModelKind::C && rho.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
            return Err(FluxError::Solver(
                "Newton iterate left the unit interval".into(),
            ));
        }
        if change <= 8.0 * f64::EPSILON * scale.max(1.0) {
            return StationarySolution::finish(
                DensityField::new(grid.clone(), rho)?,
                StationaryMethod::Numeric,
                model,
            );
        }
    }
    Err(FluxError::Convergence {
        iterations: MAX_REFINEMENTS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::build_grid;
    use approx::assert_relative_eq;

    fn reference_a() -> ModelSpec {
        ModelSpec::new(ModelKind::A, 1.0, 0.9, PotentialSpec::linear())
    }

    #[test]
    fn model_a_closed_matches_explicit_linear_formula() {
        let g = build_grid(200).unwrap();
        let s = stationary_closed(&reference_a(), &g).unwrap();
        // rho_inf = alpha + (1/(beta e) - 1/e) alpha e^x
        let e = 1f64.exp();
        for (&x, &r) in g.nodes().iter().zip(s.field.values()) {
            let expected = 1.0 + (1.0 / (0.9 * e) - 1.0 / e) * x.exp();
            assert_relative_eq!(r, expected, epsilon = 1e-14);
        }
        assert_eq!(s.field.values()[199], 1.0 / 0.9);
        assert!((g.integrate(s.field.values()) - 1.0703).abs() < 1e-4);
    }

    #[test]
    fn model_a_closed_without_potential() {
        let g = build_grid(11).unwrap();
        let m = ModelSpec::new(ModelKind::A, 1.0, 1.0, PotentialSpec::zero());
        let s = stationary_closed(&m, &g).unwrap();
        for (&x, &r) in g.nodes().iter().zip(s.field.values()) {
            assert_relative_eq!(r, 2.0 - x, epsilon = 1e-14);
        }
        assert_eq!(s.field.values()[10], 1.0);
    }

    #[test]
    fn model_a_tabulated_matches_linear() {
        let g = build_grid(400).unwrap();
        let tab = PotentialSpec::tabulated(g.nodes().to_vec());
        let lin = stationary_model_a_closed(1.0, 0.9, &PotentialSpec::linear(), &g).unwrap();
        let tabs = stationary_model_a_closed(1.0, 0.9, &tab, &g).unwrap();
        assert!(lin.field.sup_distance(&tabs.field) < 1e-5);
    }

    #[test]
    fn model_b_closed_values() {
        let g = build_grid(200).unwrap();
        let s = stationary_model_b_closed(1.0, 1.0, &PotentialSpec::zero(), &g).unwrap();
        assert!(s.field.values().iter().all(|&r| r == 1.0));
        let s = stationary_model_b_closed(1.0, 0.9, &PotentialSpec::linear(), &g).unwrap();
        assert_relative_eq!(s.field.values()[199], 1f64.exp() / 0.9, epsilon = 1e-14);
        assert!((s.field.values()[199] - 3.0203).abs() < 1e-4);
        let s = stationary_model_b_closed(2.0, 1.0, &PotentialSpec::zero(), &g).unwrap();
        assert!(s.field.values().iter().all(|&r| r == 2.0));
    }

    #[test]
    fn model_c_closed_values() {
        let g = build_grid(200).unwrap();
        let s = stationary_model_c_closed(1.0, 1.0, &PotentialSpec::zero(), &g).unwrap();
        assert!(s.field.values().iter().all(|&r| r == 0.5));
        let s = stationary_model_c_closed(1.0, 0.9, &PotentialSpec::linear(), &g).unwrap();
        let a = 1f64.exp() / 0.9;
        assert_relative_eq!(s.field.values()[199], a / (1.0 + a), epsilon = 1e-14);
        assert!((s.field.values()[199] - 0.7513).abs() < 1e-4);
        let s = stationary_model_c_closed(1e-6, 1.0, &PotentialSpec::zero(), &g).unwrap();
        assert_relative_eq!(s.field.values()[0], 1e-6, max_relative = 2e-6);
        // zero residual: flux and reaction vanish identically
        assert!(s.residual < 1e-12);
    }

    #[test]
    fn closed_forms_reject_bad_rates() {
        let g = build_grid(10).unwrap();
        for f in [
            stationary_model_a_closed,
            stationary_model_b_closed,
            stationary_model_c_closed,
        ] {
            assert!(matches!(
                f(0.0, 1.0, &PotentialSpec::zero(), &g),
                Err(FluxError::InvalidModel(_))
            ));
            assert!(f(1.0, -1.0, &PotentialSpec::zero(), &g).is_err());
        }
    }

    #[test]
    fn slotboom_matrix_is_symmetric_and_dominant() {
        let g = build_grid(100).unwrap();
        for kind in [ModelKind::A, ModelKind::B] {
            let m = ModelSpec::new(kind, 1.0, 0.9, PotentialSpec::linear());
            let sys = SlotboomSystem::assemble(&m, &g).unwrap();
            assert!(sys.matrix.is_symmetric(0.0));
            assert!(sys.matrix.is_diagonally_dominant());
        }
        let c = ModelSpec::new(ModelKind::C, 1.0, 0.9, PotentialSpec::linear());
        assert!(SlotboomSystem::assemble(&c, &g).is_err());
    }

    #[test]
    fn numeric_matches_closed_form_model_a() {
        let g = build_grid(200).unwrap();
        let num = stationary_numeric(&reference_a(), &g).unwrap();
        let closed = stationary_closed(&reference_a(), &g).unwrap();
        assert_eq!(num.method, StationaryMethod::Numeric);
        assert!(num.field.sup_distance(&closed.field) < 1e-6);
        assert!(num.residual < 1e-10, "{:e}", num.residual);
        assert!(num.field.values().iter().all(|&r| r > 0.0));
        // the plain Slotboom solve is the first iterate and already close
        let slot = SlotboomSystem::assemble(&reference_a(), &g).unwrap().solve().unwrap();
        let gap = slot
            .iter()
            .zip(closed.field.values())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(gap < 1e-6, "{gap:e}");
    }

    #[test]
    fn numeric_matches_closed_form_model_b() {
        let g = build_grid(150).unwrap();
        for (a, b, pot) in [
            (1.0, 0.9, PotentialSpec::linear()),
            (2.0, 0.5, PotentialSpec::scaled_linear(-1.5)),
            (0.3, 3.0, PotentialSpec::zero()),
        ] {
            let m = ModelSpec::new(ModelKind::B, a, b, pot);
            let slot = SlotboomSystem::assemble(&m, &g).unwrap().solve().unwrap();
            let closed = stationary_closed(&m, &g).unwrap();
            for (x, y) in slot.iter().zip(closed.field.values()) {
                assert!((x - y).abs() < 1e-8 * y.max(1.0));
            }
            let num = stationary_numeric(&m, &g).unwrap();
            assert!(num.residual < 1e-10);
        }
    }

    #[test]
    fn numeric_error_is_second_order() {
        let m = reference_a();
        let err = |n| {
            let g = build_grid(n).unwrap();
            let num = stationary_numeric(&m, &g).unwrap();
            num.field.sup_distance(&stationary_closed(&m, &g).unwrap().field)
        };
        let (e1, e2) = (err(101), err(201));
        let ratio = e1 / e2;
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn numeric_model_c_is_discrete_equilibrium() {
        let g = build_grid(200).unwrap();
        let m = ModelSpec::new(ModelKind::C, 1.0, 0.9, PotentialSpec::linear());
        let closed = stationary_closed(&m, &g).unwrap();
        let num = stationary_numeric(&m, &g).unwrap();
        assert_eq!(num.method, StationaryMethod::Numeric);
        assert!(num.residual < 1e-10, "{:e}", num.residual);
        assert!(closed.residual > num.residual);
        assert!(num.field.sup_distance(&closed.field) < 1e-4);
        let guess = vec![0.5; 200];
        let other = stationary_numeric_from(&m, &g, Some(&guess)).unwrap();
        assert!(num.field.sup_distance(&other.field) < 1e-12);
    }

    #[test]
    fn refinement_independent_of_initial_guess() {
        let g = build_grid(200).unwrap();
        let m = reference_a();
        let base = stationary_numeric(&m, &g).unwrap();
        let guess: Vec<f64> = g.nodes().iter().map(|x| 2.0 + (7.0 * x).sin()).collect();
        let other = stationary_numeric_from(&m, &g, Some(&guess)).unwrap();
        assert!(base.field.sup_distance(&other.field) < 1e-12);
    }
}
