//! Relative entropies, mass-type observables, functional-inequality
//! constants and exponential rate fitting.

use serde::{Deserialize, Serialize};

use crate::domain::{DensityField, Grid, ModelKind, ModelSpec};
use crate::error::{FluxError, Result};
use crate::spectral;

/// Values this far outside the admissible range are treated as roundoff and clamped.
pub const ROUNDOFF_SLACK: f64 = 1e-12;

/// Relative entropy (Bregman distance) flavors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntropyKind {
    /// ½ (ρ − ρ∞)² / ρ∞
    Quadratic,
    /// ρ log(ρ/ρ∞) − (ρ − ρ∞)
    Logarithmic,
    /// ρ log(ρ/ρ∞) + (1 − ρ) log((1 − ρ)/(1 − ρ∞))
    TwoSpecies,
}

impl EntropyKind {
    pub fn for_model(model: ModelKind) -> Self {
        match model {
            ModelKind::A => EntropyKind::Quadratic,
            ModelKind::B => EntropyKind::Logarithmic,
            ModelKind::C => EntropyKind::TwoSpecies,
        }
    }
}

#[inline]
fn xlogy_ratio(x: f64, y: f64) -> f64 {
    // x log(x/y) with 0 log 0 = 0
    if x == 0.0 {
        0.0
    } else {
        x * (x / y).ln()
    }
}

/// Pointwise entropy density.
pub fn entropy_density(kind: EntropyKind, rho: f64, rho_inf: f64) -> Result<f64> {
    match kind {
        EntropyKind::Quadratic => {
            if !(rho_inf > 0.0) {
                return Err(FluxError::Domain(format!(
                    "reference density must be positive, got {rho_inf}"
                )));
            }
            let d = rho - rho_inf;
            Ok(0.5 * d * d / rho_inf)
        }
        EntropyKind::Logarithmic => {
            if !(rho_inf > 0.0) {
                return Err(FluxError::Domain(format!(
                    "reference density must be positive, got {rho_inf}"
                )));
            }
            if rho < -ROUNDOFF_SLACK || !rho.is_finite() {
                return Err(FluxError::Domain(format!("density must be nonnegative, got {rho}")));
            }
            let r = rho.max(0.0);
            Ok((xlogy_ratio(r, rho_inf) - (r - rho_inf)).max(0.0))
        }
        EntropyKind::TwoSpecies => {
            if !(rho_inf > 0.0 && rho_inf < 1.0) {
                return Err(FluxError::Domain(format!(
                    "reference density must lie in (0, 1), got {rho_inf}"
                )));
            }
            if !(-ROUNDOFF_SLACK..=1.0 + ROUNDOFF_SLACK).contains(&rho) {
                return Err(FluxError::Domain(format!("density must lie in [0, 1], got {rho}")));
            }
            let r = rho.clamp(0.0, 1.0);
            Ok((xlogy_ratio(r, rho_inf) + xlogy_ratio(1.0 - r, 1.0 - rho_inf)).max(0.0))
        }
    }
}

/// Trapezoid integral of the entropy density over raw nodal slices.
pub fn entropy_of(kind: EntropyKind, grid: &Grid, rho: &[f64], rho_inf: &[f64]) -> Result<f64> {
    if rho.len() != grid.len() || rho_inf.len() != grid.len() {
        return Err(FluxError::Shape {
            expected: grid.len(),
            got: rho.len().min(rho_inf.len()),
        });
    }
    let mut err = None;
    let value = grid.integrate_by(|i| match entropy_density(kind, rho[i], rho_inf[i]) {
        Ok(v) => v,
        Err(e) => {
            err.get_or_insert(e);
            0.0
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(value),
    }
}

/// Relative entropy E(ρ | ρ∞) of the given kind.
pub fn entropy(kind: EntropyKind, rho: &DensityField, rho_inf: &DensityField) -> Result<f64> {
    entropy_of(kind, rho.grid(), rho.values(), rho_inf.values())
}

/// Trapezoid integral of ρ.
pub fn mass(rho: &DensityField) -> f64 {
    rho.grid().integrate(rho.values())
}

/// Trapezoid integral of |ρ − ρ∞|.
pub fn l1_distance(rho: &DensityField, rho_inf: &DensityField) -> f64 {
    l1_of(rho.grid(), rho.values(), rho_inf.values())
}

pub(crate) fn l1_of(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    grid.integrate_by(|i| (a[i] - b[i]).abs())
}

/// K₄ = 3 / (2‖ρ‖₁ + 4‖ρ∞‖₁) of the Csiszár–Kullback inequality for
/// non-normalized densities.
pub fn ck_constant(rho: &DensityField, rho_inf: &DensityField) -> Result<f64> {
    let g = rho.grid();
    let m = g.integrate_by(|i| rho.values()[i].abs());
    let m_inf = g.integrate_by(|i| rho_inf.values()[i].abs());
    let denom = 2.0 * m + 4.0 * m_inf;
    if denom == 0.0 {
        return Err(FluxError::UndefinedConstant);
    }
    Ok(3.0 / denom)
}

/// Checks E_log(ρ|ρ∞) ≥ K₄ ‖ρ − ρ∞‖₁² up to 1e−12.
pub fn ck_check(rho: &DensityField, rho_inf: &DensityField) -> Result<bool> {
    let k4 = ck_constant(rho, rho_inf)?;
    let e = entropy(EntropyKind::Logarithmic, rho, rho_inf)?;
    let l1 = l1_distance(rho, rho_inf);
    Ok(e >= k4 * l1 * l1 - 1e-12)
}

/// φ(x, y) = [x(log x − log y) − (x − y)] / (√x − √y)²,
/// continuously extended by φ(y, y) = 2 and φ(0, y) = 1.
pub fn phi(x: f64, y: f64) -> Result<f64> {
    if !(y > 0.0 && y.is_finite()) {
        return Err(FluxError::Domain(format!(
            "phi requires y > 0 (diverges as y -> 0), got y = {y}"
        )));
    }
    if !(x >= 0.0 && x.is_finite()) {
        return Err(FluxError::Domain(format!("phi requires x >= 0, got x = {x}")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    let e = (x - y) / y;
    if e.abs() < 1e-3 {
        // Taylor expansion about x = y; the direct formula cancels catastrophically here.
        return Ok(2.0 + e * (1.0 / 3.0 + e * (-1.0 / 8.0 + e * (17.0 / 240.0 - e * 91.0 / 1920.0))));
    }
    let num = x * e.ln_1p() - (x - y);
    let s = x.sqrt() + y.sqrt();
    let den = (x - y) * (x - y) / (s * s);
    Ok(num / den)
}

/// K₁ = max{1, φ(L, min ρ∞)}.
///
/// The divergent φ(L, 0) is replaced by the strictly positive minimum of ρ∞.
pub fn k1_bound(upper_bound: f64, rho_inf_min: f64) -> Result<f64> {
    Ok(phi(upper_bound, rho_inf_min)?.max(1.0))
}

/// Where a predicted decay rate comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateSource {
    /// 2λ of the symmetric part of the model A operator.
    Spectral,
    /// 4βK₂/K₁
    ModelBFormula,
    /// α min{1, inf (1 − ρ∞)/ρ∞}
    ModelCFormula,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedRate {
    pub value: f64,
    pub source: RateSource,
}

/// Extra information some rate predictions need.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RateBounds {
    /// Upper bound L = max{‖ρ∞‖∞, ‖ρ₀‖∞} on the density (model B).
    pub upper_bound: Option<f64>,
}

impl RateBounds {
    pub fn from_initial(rho0: &DensityField, rho_inf: &DensityField) -> Self {
        let sup = |f: &DensityField| f.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Self {
            upper_bound: Some(sup(rho0).max(sup(rho_inf))),
        }
    }
}

/// Analytic decay rate of the model's relative entropy.
///
/// For model A this is the symmetric-part spectral prediction, which is a
/// lower bound on the observed rate when the drift does not vanish.
pub fn predicted_rate(
    model: &ModelSpec,
    rho_inf: &DensityField,
    bounds: &RateBounds,
) -> Result<PredictedRate> {
    model.validate()?;
    match model.model {
        ModelKind::A => {
            let eig = spectral::symmetric_k(model.beta)?;
            Ok(PredictedRate {
                value: eig.rate,
                source: RateSource::Spectral,
            })
        }
        ModelKind::B => {
            let upper = bounds.upper_bound.ok_or_else(|| {
                FluxError::Precondition("model B prediction needs the upper bound L".into())
            })?;
            let pot = model.potential.evaluate(rho_inf.grid())?;
            let k2 = pot.inf_exp_neg();
            let rho_min = rho_inf.values().iter().fold(f64::INFINITY, |m, &v| m.min(v));
            let k1 = k1_bound(upper, rho_min)?;
            Ok(PredictedRate {
                value: 4.0 * model.beta * k2 / k1,
                source: RateSource::ModelBFormula,
            })
        }
        ModelKind::C => {
            let mut inf_ratio = f64::INFINITY;
            for &r in rho_inf.values() {
                if !(r > 0.0 && r < 1.0) {
                    return Err(FluxError::Domain(format!(
                        "model C equilibrium must lie in (0, 1), got {r}"
                    )));
                }
                inf_ratio = inf_ratio.min((1.0 - r) / r);
            }
            Ok(PredictedRate {
                value: model.alpha * inf_ratio.min(1.0),
                source: RateSource::ModelCFormula,
            })
        }
    }
}

/// Time-stamped scalar diagnostics sampled during a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationSeries {
    pub t: Vec<f64>,
    pub entropy: Vec<f64>,
    pub mass: Vec<f64>,
    pub l1: Vec<f64>,
    pub residual: Vec<f64>,
}

impl ObservationSeries {
    pub fn push(&mut self, t: f64, entropy: f64, mass: f64, l1: f64, residual: f64) {
        self.t.push(t);
        self.entropy.push(entropy);
        self.mass.push(mass);
        self.l1.push(l1);
        self.residual.push(residual);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitWindow {
    pub t_lo: f64,
    pub t_hi: f64,
}

/// Entropy level below which samples are considered roundoff.
pub const FIT_FLOOR: f64 = 1e-12;

/// Minimum number of samples inside a fit window.
pub const MIN_FIT_SAMPLES: usize = 10;

impl FitWindow {
    /// `[0.1·t_end, t*]`, t* being the last sample before the series first
    /// drops to [`FIT_FLOOR`].
    pub fn default_for(times: &[f64], values: &[f64], t_end: f64) -> Self {
        let t_lo = 0.1 * t_end;
        let mut t_hi = times.last().copied().unwrap_or(t_end);
        for (k, (&t, &v)) in times.iter().zip(values).enumerate() {
            if t >= t_lo && v <= FIT_FLOOR {
                t_hi = if k > 0 { times[k - 1] } else { t };
                break;
            }
        }
        Self { t_lo, t_hi }
    }
}

/// Least-squares line through (t, log v); decay reported as a positive rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub fitted_slope: f64,
    pub intercept: f64,
    pub fit_window: FitWindow,
    pub r_squared: f64,
    pub samples: usize,
    pub predicted_rate: Option<PredictedRate>,
}

pub fn fit_exponential_rate(times: &[f64], values: &[f64], window: FitWindow) -> Result<RateReport> {
    if times.len() != values.len() {
        return Err(FluxError::Shape {
            expected: times.len(),
            got: values.len(),
        });
    }
    if !(window.t_lo <= window.t_hi) {
        return Err(FluxError::Fit(format!(
            "empty fit window [{}, {}]",
            window.t_lo, window.t_hi
        )));
    }
    let slack = 1e-12 * window.t_hi.abs().max(1.0);
    let floor = 1e3 * f64::EPSILON;
    let mut pts = Vec::new();
    for (&t, &v) in times.iter().zip(values) {
        if t < window.t_lo - slack || t > window.t_hi + slack {
            continue;
        }
        if !(v > 0.0) {
            return Err(FluxError::Fit(format!("nonpositive value {v} at t = {t}")));
        }
        if v <= floor {
            return Err(FluxError::Fit(format!(
                "value {v:e} at t = {t} is at the roundoff floor"
            )));
        }
        pts.push((t, v.ln()));
    }
    if pts.len() < MIN_FIT_SAMPLES {
        return Err(FluxError::Fit(format!(
            "window [{}, {}] holds {} samples, need at least {MIN_FIT_SAMPLES}",
            window.t_lo,
            window.t_hi,
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let t_mean = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let y_mean = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
    for &(t, y) in &pts {
        stt += (t - t_mean) * (t - t_mean);
        sty += (t - t_mean) * (y - y_mean);
        syy += (y - y_mean) * (y - y_mean);
    }
    if stt == 0.0 {
        return Err(FluxError::Fit("all samples share one time stamp".into()));
    }
    let slope = sty / stt;
    let intercept = y_mean - slope * t_mean;
    let ss_res: f64 = pts
        .iter()
        .map(|&(t, y)| {
            let r = y - (intercept + slope * t);
            r * r
        })
        .sum();
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(RateReport {
        fitted_slope: -slope,
        intercept,
        fit_window: window,
        r_squared,
        samples: pts.len(),
        predicted_rate: None,
    })
}
