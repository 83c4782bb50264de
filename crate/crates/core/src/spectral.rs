//! Robin eigenvalue problems behind model A's decay rate, and a discrete
//! Rayleigh-quotient oracle.

use serde::{Deserialize, Serialize};

use crate::domain::Grid;
use crate::error::{FluxError, Result};
use crate::tridiag::Tridiagonal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EquationTag {
    Friedrichs,
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenResult {
    /// Smallest positive root.
    pub k: f64,
    /// k²
    pub lambda: f64,
    /// 2k²
    pub rate: f64,
    pub equation_tag: EquationTag,
    /// |g(k)| of the normalized characteristic function.
    pub root_residual: f64,
}

const SCAN_START: f64 = 1e-10;
const SCAN_STEP: f64 = 1e-3;
const SCAN_END: f64 = 4.0 * std::f64::consts::PI;
const BISECT_TOL: f64 = 1e-13;

/// Smallest root of `g` in (SCAN_START, 4π], bracketed by a uniform scan.
fn smallest_root(g: impl Fn(f64) -> f64) -> Result<f64> {
    let mut lo = SCAN_START;
    let mut g_lo = g(lo);
    let steps = ((SCAN_END - SCAN_START) / SCAN_STEP).ceil() as usize;
    for s in 1..=steps {
        let hi = (SCAN_START + s as f64 * SCAN_STEP).min(SCAN_END);
        let g_hi = g(hi);
        if g_hi == 0.0 {
            return Ok(hi);
        }
        if g_lo.signum() != g_hi.signum() {
            let (mut a, mut b, mut ga) = (lo, hi, g_lo);
            while b - a > BISECT_TOL {
                let m = 0.5 * (a + b);
                let gm = g(m);
                if gm == 0.0 {
                    return Ok(m);
                }
                if gm.signum() == ga.signum() {
                    a = m;
                    ga = gm;
                } else {
                    b = m;
                }
            }
            return Ok(0.5 * (a + b));
        }
        lo = hi;
        g_lo = g_hi;
    }
    Err(FluxError::RootNotFound { upper: SCAN_END })
}

fn result(k: f64, tag: EquationTag, g: impl Fn(f64) -> f64) -> EigenResult {
    EigenResult {
        k,
        lambda: k * k,
        rate: 2.0 * k * k,
        equation_tag: tag,
        root_residual: g(k).abs(),
    }
}

/// Robin problem −φ″ = k²φ, φ′(0) = w0 φ(0), φ′(1) = −w1 φ(1).
///
/// With φ = w0 sin(kx) + k cos(kx) the right condition reads
/// (w0 w1 − k²) sin k + k (w0 + w1) cos k = 0.
pub fn friedrichs_k(w0: f64, w1: f64) -> Result<EigenResult> {
    if !(w0 > 0.0 && w1 > 0.0 && w0.is_finite() && w1.is_finite()) {
        return Err(FluxError::Precondition(format!(
            "boundary weights must be positive, got w0 = {w0}, w1 = {w1}"
        )));
    }
    let norm = 1.0 + w0 * w1 + w0 + w1;
    let g = move |k: f64| ((w0 * w1 - k * k) * k.sin() + k * (w0 + w1) * k.cos()) / norm;
    let k = smallest_root(g)?;
    Ok(result(k, EquationTag::Friedrichs, g))
}

/// Symmetric part of model A: φ′(0) = 0, φ′(1) = −βφ(1), so k tan k = β.
pub fn symmetric_k(beta: f64) -> Result<EigenResult> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(FluxError::Precondition(format!(
            "outflow rate must be positive, got {beta}"
        )));
    }
    let g = move |k: f64| (beta * k.cos() - k * k.sin()) / (1.0 + beta);
    let k = smallest_root(g)?;
    Ok(result(k, EquationTag::Symmetric, g))
}

#[derive(Debug, Clone)]
pub struct RayleighResult {
    pub lambda: f64,
    /// Minimizer, normalized to unit discrete L² norm.
    pub vector: Vec<f64>,
    pub iterations: usize,
}

const MAX_INVERSE_ITER: usize = 10_000;

/// Minimum of [∫(φ′)² + w0 φ(0)² + w1 φ(1)²] / ∫φ² over piecewise linear φ,
/// with a trapezoid (lumped) mass matrix.
pub fn discrete_min_rayleigh(grid: &Grid, w0: f64, w1: f64) -> Result<RayleighResult> {
    if !(w0 >= 0.0 && w1 >= 0.0 && w0.is_finite() && w1.is_finite()) {
        return Err(FluxError::Precondition(format!(
            "boundary weights must be nonnegative, got w0 = {w0}, w1 = {w1}"
        )));
    }
    let n = grid.len();
    let dx = grid.dx();
    let mut stiff = Tridiagonal::zeros(n);
    for f in 0..n - 1 {
        stiff.diag[f] += 1.0 / dx;
        stiff.diag[f + 1] += 1.0 / dx;
        stiff.upper[f] -= 1.0 / dx;
        stiff.lower[f + 1] -= 1.0 / dx;
    }
    stiff.diag[0] += w0;
    stiff.diag[n - 1] += w1;
    let mass: Vec<f64> = (0..n).map(|i| grid.cell_width(i)).collect();

    // shift by the mass matrix so the pure Neumann pencil stays invertible
    let mut shifted = stiff.clone();
    for (d, m) in shifted.diag.iter_mut().zip(&mass) {
        *d += m;
    }
    let quotient = |phi: &[f64]| {
        let kphi = stiff.mul_vec(phi);
        let num: f64 = phi.iter().zip(&kphi).map(|(a, b)| a * b).sum();
        let den: f64 = phi.iter().zip(&mass).map(|(a, m)| a * a * m).sum();
        (num / den, den)
    };

    let mut phi = vec![1.0; n];
    let (mut lambda, _) = quotient(&phi);
    for it in 1..=MAX_INVERSE_ITER {
        let rhs: Vec<f64> = phi.iter().zip(&mass).map(|(p, m)| p * m).collect();
        phi = shifted.solve(&rhs)?;
        let (next, den) = quotient(&phi);
        let scale = den.sqrt();
        phi.iter_mut().for_each(|p| *p /= scale);
        if (next - lambda).abs() < 1e-12 {
            return Ok(RayleighResult {
                lambda: next,
                vector: phi,
                iterations: it,
            });
        }
        lambda = next;
    }
    Err(FluxError::Convergence {
        iterations: MAX_INVERSE_ITER,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::build_grid;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn half_weights_root() {
        let r = friedrichs_k(0.5, 0.5).unwrap();
        assert!((r.k - 0.9602).abs() < 1e-3);
        assert!((r.rate - 1.8439).abs() < 2e-3);
        assert_eq!(r.equation_tag, EquationTag::Friedrichs);
        let k = r.k;
        let expanded = 2.0 * k * k.cos() + (0.5 - 2.0 * k * k) * k.sin();
        assert!(expanded.abs() < 1e-12);
        assert!(r.root_residual < 1e-12);
    }

    #[test]
    fn symmetric_root() {
        let r = symmetric_k(1.0).unwrap();
        assert!((r.k - 0.8603).abs() < 1e-3);
        assert!((r.rate - 1.4802).abs() < 2e-3);
        assert!((r.k * r.k.tan() - 1.0).abs() < 1e-11);
    }

    #[test]
    fn limits() {
        let d = friedrichs_k(1e6, 1e6).unwrap();
        assert!((d.k - PI).abs() < 1e-3);
        let s = symmetric_k(1e-8).unwrap();
        assert!((s.k - 1e-4).abs() < 1e-7);
        let s = symmetric_k(1e6).unwrap();
        assert!((s.k - FRAC_PI_2).abs() < 1e-3);
    }

    #[test]
    fn no_earlier_sign_change() {
        let r = friedrichs_k(0.5, 0.5).unwrap();
        let g = |k: f64| 2.0 * k * k.cos() + (0.5 - 2.0 * k * k) * k.sin();
        let mut k = 1e-8;
        while k < r.k - 1e-8 {
            assert!(g(k) > 0.0, "sign change near {k}");
            k += 1e-4;
        }
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(friedrichs_k(0.0, 1.0).is_err());
        assert!(symmetric_k(-1.0).is_err());
        assert!(symmetric_k(f64::NAN).is_err());
    }

    #[test]
    fn rayleigh_matches_root() {
        let g = build_grid(2000).unwrap();
        let r = discrete_min_rayleigh(&g, 0.5, 0.5).unwrap();
        let k = friedrichs_k(0.5, 0.5).unwrap().k;
        assert!((r.lambda - k * k).abs() < 1e-4);
        assert!(r.vector.iter().all(|&v| v > 0.0) || r.vector.iter().all(|&v| v < 0.0));
    }

    #[test]
    fn rayleigh_neumann_is_zero() {
        let g = build_grid(100).unwrap();
        let r = discrete_min_rayleigh(&g, 0.0, 0.0).unwrap();
        assert!(r.lambda.abs() < 1e-14);
        let v0 = r.vector[0];
        assert!(r.vector.iter().all(|v| (v - v0).abs() < 1e-12));
    }

    #[test]
    fn rayleigh_converges_quadratically() {
        let exact = friedrichs_k(0.5, 0.5).unwrap().lambda;
        let gap = |n| (discrete_min_rayleigh(&build_grid(n).unwrap(), 0.5, 0.5).unwrap().lambda - exact).abs();
        let ratio = gap(51) / gap(101);
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }
}
