//! Ensemble-averaged population dynamics of a dephased two-level probe
//! coupled to a transverse field.
//!
//! The |0⟩ population obeys the third-order linear equation
//!
//! ```text
//! P''' + 2Γ P'' + (Γ² + δ² + 2B²) P' + 2ΓB² P − ΓB² = 0
//! ```
//!
//! with P(0) = 1 and all coherences zero, which fixes P'(0) = 0 and
//! P''(0) = −B². Γ is the dephasing rate Γ₂.

use crate::error::{invalid, Result};
use crate::ode::{self, Tolerances};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoLevelParams {
    /// Effective transverse coupling B, rad/s.
    pub coupling_b: f64,
    /// Dephasing rate Γ₂, rad/s.
    pub dephasing_gamma2: f64,
    /// Detuning δ = ω_NV − ω_E, rad/s.
    pub detuning_delta: f64,
}

impl TwoLevelParams {
    pub fn new(coupling_b: f64, dephasing_gamma2: f64, detuning_delta: f64) -> Result<Self> {
        if !(coupling_b >= 0.0 && coupling_b.is_finite()) {
            return Err(invalid("coupling_b", "must be finite and >= 0"));
        }
        if !(dephasing_gamma2 > 0.0 && dephasing_gamma2.is_finite()) {
            return Err(invalid("dephasing_gamma2", "must be finite and > 0"));
        }
        if !detuning_delta.is_finite() {
            return Err(invalid("detuning_delta", "must be finite"));
        }
        Ok(Self {
            coupling_b,
            dephasing_gamma2,
            detuning_delta,
        })
    }

    pub fn resonant(coupling_b: f64, dephasing_gamma2: f64) -> Result<Self> {
        Self::new(coupling_b, dephasing_gamma2, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DampingRegime {
    UnderDamped,
    CriticallyDamped,
    OverDamped,
}

/// Critical coupling Γ₂/(2√2).
pub fn critical_coupling(gamma2: f64) -> f64 {
    gamma2 / (2.0 * std::f64::consts::SQRT_2)
}

pub fn classify_damping(p: &TwoLevelParams) -> DampingRegime {
    let bc = critical_coupling(p.dephasing_gamma2);
    let rel = (p.coupling_b - bc) / bc;
    if rel.abs() <= 1e-12 {
        DampingRegime::CriticallyDamped
    } else if rel > 0.0 {
        DampingRegime::UnderDamped
    } else {
        DampingRegime::OverDamped
    }
}

/// Exact δ = 0 population
/// P₀ = ½ + ½e^{−Γt/2}[cosh(qt/2) + (Γ/q) sinh(qt/2)], q = √(Γ² − 8B²),
/// continued to cos/sin for Γ² < 8B² and by series near q = 0.
pub fn population_resonant(coupling_b: f64, gamma2: f64, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(invalid("t", format!("time must be >= 0, got {t}")));
    }
    if !(gamma2 > 0.0) {
        return Err(invalid("gamma2", "must be > 0"));
    }
    if !(coupling_b >= 0.0) {
        return Err(invalid("coupling_b", "must be >= 0"));
    }
    let a = 0.5 * gamma2 * t;
    // κ² = (q t / 2)², negative in the under-damped regime
    let kappa_sq = (gamma2 * gamma2 - 8.0 * coupling_b * coupling_b) * t * t / 4.0;

    let envelope = if kappa_sq.abs() < 1e-3 {
        let k2 = kappa_sq;
        let cosh = 1.0 + k2 / 2.0 + k2 * k2 / 24.0 + k2 * k2 * k2 / 720.0 + k2.powi(4) / 40320.0;
        let sinhc = 1.0 + k2 / 6.0 + k2 * k2 / 120.0 + k2 * k2 * k2 / 5040.0 + k2.powi(4) / 362880.0;
        (-a).exp() * (cosh + a * sinhc)
    } else if kappa_sq > 0.0 {
        let k = kappa_sq.sqrt();
        let grow = (k - a).exp();
        let shrink = (-k - a).exp();
        0.5 * (grow + shrink) + (a / k) * 0.5 * (grow - shrink)
    } else {
        let k = (-kappa_sq).sqrt();
        (-a).exp() * (k.cos() + a * k.sin() / k)
    };
    Ok(0.5 + 0.5 * envelope)
}

/// Relaxation rate 2B²Γ₂/(δ² + Γ₂²), s⁻¹.
pub fn relaxation_rate(p: &TwoLevelParams) -> f64 {
    let g = p.dephasing_gamma2;
    let b = p.coupling_b;
    2.0 * b * b * g / (p.detuning_delta * p.detuning_delta + g * g)
}

/// Over-damped (Γ₂ ≫ B) population ½ + ½exp(−Γ₁t) with Lorentzian-filtered
/// rate. Accurate only when Γ₂ ≫ B; the regime is not checked.
pub fn population_overdamped(p: &TwoLevelParams, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(invalid("t", format!("time must be >= 0, got {t}")));
    }
    Ok(0.5 + 0.5 * (-relaxation_rate(p) * t).exp())
}

/// Numerically integrates the population equation and samples P₀ at `times`.
///
/// Time is rescaled by Γ₂ internally so the state stays O(1).
pub fn integrate_master_equation(p: &TwoLevelParams, times: &[f64]) -> Result<Vec<f64>> {
    integrate_master_equation_with(p, times, Tolerances::default())
}

pub fn integrate_master_equation_with(p: &TwoLevelParams, times: &[f64], tol: Tolerances) -> Result<Vec<f64>> {
    if times.iter().any(|t| !(*t >= 0.0)) {
        return Err(invalid("times", "times must be >= 0"));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("times", "times must be sorted"));
    }
    let g = p.dephasing_gamma2;
    let b2 = (p.coupling_b / g).powi(2);
    let d2 = (p.detuning_delta / g).powi(2);
    let damping = 1.0 + d2 + 2.0 * b2;
    let rhs =
        move |_u: f64, y: &[f64; 3]| -> [f64; 3] { [y[1], y[2], -2.0 * y[2] - damping * y[1] - 2.0 * b2 * y[0] + b2] };
    let scaled: Vec<f64> = times.iter().map(|t| t * g).collect();
    let states = ode::integrate(rhs, 0.0, [1.0, 0.0, -b2], &scaled, tol)?;
    Ok(states.into_iter().map(|y| y[0]).collect())
}

/// Rate of the slowest exponential in P₀(t) − ½, from a least-squares line
/// through ln(2P₀ − 1). Samples with 2P₀ − 1 ≤ `floor` are skipped.
pub fn fit_exponential_rate(times: &[f64], p0: &[f64], floor: f64) -> Result<f64> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(p0)
        .filter(|(_, p)| 2.0 * **p - 1.0 > floor)
        .map(|(t, p)| (*t, (2.0 * p - 1.0).ln()))
        .collect();
    if pts.len() < 2 {
        return Err(invalid("p0", "fewer than two samples above the floor"));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    Ok(-sxy / sxx)
}
