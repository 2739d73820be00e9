//! Synthetic field-swept decay records and Γ₁ extraction.
//!
//! Contrast model: exp(−√(Γ₁t) − Rt) with additive Gaussian shot noise.
//! Fits run in s = √Γ₁ so the model is smooth at Γ₁ = 0.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::grid::{DecayCurve, FieldSweep, TimeGrid};

/// Phonon-limited baseline rate, s⁻¹.
pub const DEFAULT_PHONON_RATE: f64 = 360.0;

pub fn decay_model(gamma1: f64, r: f64, t: f64) -> f64 {
    (-(gamma1 * t).sqrt() - r * t).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub sweep: FieldSweep,
    pub times: Arc<TimeGrid>,
    pub curves: Vec<DecayCurve>,
    pub phonon_rate_r: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl MeasurementRecord {
    /// Checks one curve per field, matching fields, shared time grid.
    pub fn new(
        sweep: FieldSweep,
        times: Arc<TimeGrid>,
        curves: Vec<DecayCurve>,
        phonon_rate_r: f64,
        noise_sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        if curves.len() != sweep.len() {
            return Err(invalid(
                "curves",
                format!("{} curves for {} field points", curves.len(), sweep.len()),
            ));
        }
        for (c, b) in curves.iter().zip(sweep.values()) {
            if c.field_g != *b {
                return Err(invalid(
                    "curves",
                    format!("curve at {} G does not match sweep field {b} G", c.field_g),
                ));
            }
            if c.times != times {
                return Err(invalid("curves", "all curves must share the record time grid"));
            }
        }
        Ok(Self {
            sweep,
            times,
            curves,
            phonon_rate_r,
            noise_sigma,
            seed,
        })
    }
}

/// Contrast curves for Γ₁ values given per sweep point. Point `i` draws its
/// noise from ChaCha8 stream `i` of `seed`, so output does not depend on
/// thread scheduling.
pub fn synthesize_record(
    sweep: &FieldSweep,
    times: &TimeGrid,
    gamma1: &[f64],
    phonon_rate_r: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<MeasurementRecord> {
    if sweep.is_empty() || times.is_empty() {
        return Err(invalid("sweep", "empty grid"));
    }
    if gamma1.len() != sweep.len() {
        return Err(invalid(
            "gamma1",
            format!("{} rates for {} fields", gamma1.len(), sweep.len()),
        ));
    }
    if let Some(g) = gamma1.iter().find(|g| !(**g >= 0.0 && g.is_finite())) {
        return Err(invalid("gamma1", format!("rates must be finite and >= 0, got {g}")));
    }
    if !(phonon_rate_r >= 0.0 && phonon_rate_r.is_finite()) {
        return Err(invalid("phonon_rate_r", "must be finite and >= 0"));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(invalid("noise_sigma", "must be finite and >= 0"));
    }
    let times = Arc::new(times.clone());
    let curves = sweep
        .values()
        .par_iter()
        .zip(gamma1.par_iter())
        .enumerate()
        .map(|(i, (&b, &g))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let contrast = times
                .values()
                .iter()
                .map(|&t| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    decay_model(g, phonon_rate_r, t) + noise_sigma * z
                })
                .collect();
            DecayCurve::new(b, times.clone(), contrast, noise_sigma)
        })
        .collect::<Result<Vec<_>>>()?;
    MeasurementRecord::new(sweep.clone(), times, curves, phonon_rate_r, noise_sigma, seed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhononMode {
    /// R held at the given value.
    Fixed(f64),
    /// R fitted as one parameter shared by every curve, from this start.
    Fitted(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Relative parameter change that counts as converged.
    pub xtol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            xtol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateProfile {
    pub sweep: FieldSweep,
    /// Γ₁ per field, s⁻¹.
    pub gamma1: Vec<f64>,
    pub gamma1_stderr: Vec<f64>,
    /// Phonon rate used or fitted, s⁻¹.
    pub r_fitted: f64,
    /// Zero when R was held fixed.
    pub r_stderr: f64,
    pub converged: Vec<bool>,
}

impl RateProfile {
    pub fn new(sweep: FieldSweep, gamma1: Vec<f64>, gamma1_stderr: Vec<f64>, r_fitted: f64) -> Result<Self> {
        if gamma1.len() != sweep.len() || gamma1_stderr.len() != sweep.len() {
            return Err(invalid("gamma1", "profile length must match the sweep"));
        }
        if gamma1.iter().chain(&gamma1_stderr).any(|v| !(*v >= 0.0)) {
            return Err(invalid("gamma1", "rates and errors must be >= 0"));
        }
        let n = sweep.len();
        Ok(Self {
            sweep,
            gamma1,
            gamma1_stderr,
            r_fitted,
            r_stderr: 0.0,
            converged: vec![true; n],
        })
    }

    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|c| *c)
    }
}

/// Per-curve normal-equation pieces at fixed (s, R).
#[derive(Debug, Clone, Copy, Default)]
struct CurveTerms {
    sse: f64,
    jss: f64,
    jsr: f64,
    jrr: f64,
    gs: f64,
    gr: f64,
}

fn curve_terms(times: &[f64], y: &[f64], s: f64, r: f64) -> CurveTerms {
    let mut c = CurveTerms::default();
    for (&t, &yi) in times.iter().zip(y) {
        let f = (-s * t.sqrt() - r * t).exp();
        let res = yi - f;
        let js = -t.sqrt() * f;
        let jr = -t * f;
        c.sse += res * res;
        c.jss += js * js;
        c.jsr += js * jr;
        c.jrr += jr * jr;
        c.gs += js * res;
        c.gr += jr * res;
    }
    c
}

fn sse(times: &[f64], y: &[f64], s: f64, r: f64) -> f64 {
    times
        .iter()
        .zip(y)
        .map(|(&t, &yi)| (yi - (-s * t.sqrt() - r * t).exp()).powi(2))
        .sum()
}

/// Starting s for one curve: per-sample log estimates (median), refined
/// against a coarse log scan; whichever has the smaller SSE wins.
fn initial_s(times: &[f64], y: &[f64], r: f64) -> f64 {
    let mut est: Vec<f64> = times
        .iter()
        .zip(y)
        .filter(|(t, yi)| **t > 0.0 && **yi > 0.02 && **yi < 0.98)
        .map(|(&t, &yi)| ((-yi.ln() - r * t) / t.sqrt()).max(0.0))
        .collect();
    let mut best = (f64::INFINITY, 0.0);
    if !est.is_empty() {
        est.sort_by(f64::total_cmp);
        let s = est[est.len() / 2];
        best = (sse(times, y, s, r), s);
    }
    let zero = sse(times, y, 0.0, r);
    if zero < best.0 {
        best = (zero, 0.0);
    }
    // s from 1e-2 to 1e5 (Γ₁ from 1e-4 to 1e10 s⁻¹)
    for k in 0..=140 {
        let s = 10f64.powf(-2.0 + k as f64 * 0.05);
        let e = sse(times, y, s, r);
        if e < best.0 {
            best = (e, s);
        }
    }
    best.1
}

struct CurveFit {
    s: f64,
    sse: f64,
    jss: f64,
    converged: bool,
}

fn fit_curve_fixed_r(times: &[f64], y: &[f64], r: f64, opts: &FitOptions) -> CurveFit {
    let mut s = initial_s(times, y, r);
    let mut terms = curve_terms(times, y, s, r);
    let mut lambda = 1e-3;
    let mut converged = false;
    for _ in 0..opts.max_iter {
        if terms.jss == 0.0 {
            converged = terms.gs == 0.0;
            break;
        }
        let step = terms.gs / (terms.jss * (1.0 + lambda));
        let trial = s + step;
        let t_terms = curve_terms(times, y, trial, r);
        if t_terms.sse <= terms.sse {
            let done = step.abs() <= opts.xtol * s.abs().max(1e-12);
            s = trial;
            terms = t_terms;
            lambda = (lambda * 0.3).max(1e-12);
            if done {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                // no downhill step left: at a minimum to working precision
                converged = terms.gs.abs() <= 1e-9 * terms.jss.sqrt() * terms.sse.sqrt().max(1e-300) + 1e-300;
                converged |= (t_terms.sse - terms.sse).abs() <= 1e-14 * terms.sse.max(1e-300);
                break;
            }
        }
    }
    CurveFit {
        s: s.abs(),
        sse: terms.sse,
        jss: terms.jss,
        converged,
    }
}

/// √(var(s²)) for Gaussian s with mean s and variance var.
fn squared_stderr(s: f64, var: f64) -> f64 {
    (4.0 * s * s * var + 2.0 * var * var).sqrt()
}

/// Fits exp(−√(Γ₁t) − Rt) to every curve. Curves that fail to converge are
/// flagged in `converged` and keep their best estimate.
pub fn extract_rates(record: &MeasurementRecord, mode: PhononMode, opts: &FitOptions) -> Result<RateProfile> {
    let times = record.times.values();
    let m = times.len();
    if m < 4 {
        return Err(invalid(
            "record",
            format!("need at least 4 time samples per curve, got {m}"),
        ));
    }
    match mode {
        PhononMode::Fixed(r) => {
            if !(r.is_finite() && r >= 0.0) {
                return Err(invalid("phonon_rate_r", "must be finite and >= 0"));
            }
            let fits: Vec<CurveFit> = record
                .curves
                .par_iter()
                .map(|c| fit_curve_fixed_r(times, &c.contrast, r, opts))
                .collect();
            let dof = (m - 1) as f64;
            let gamma1 = fits.iter().map(|f| f.s * f.s).collect();
            let stderr = fits
                .iter()
                .map(|f| {
                    let var = if f.jss > 0.0 {
                        f.sse / dof / f.jss
                    } else {
                        f64::INFINITY
                    };
                    squared_stderr(f.s, var)
                })
                .collect();
            let mut p = RateProfile::new(record.sweep.clone(), gamma1, stderr, r)?;
            p.converged = fits.iter().map(|f| f.converged).collect();
            Ok(p)
        }
        PhononMode::Fitted(r0) => fit_global_r(record, r0, opts),
    }
}

/// Joint Levenberg–Marquardt over (s₁..s_N, R). The normal matrix is an
/// arrow: diagonal in the s block plus one dense row/column for R, so each
/// step is solved by a Schur complement on R.
fn fit_global_r(record: &MeasurementRecord, r0: f64, opts: &FitOptions) -> Result<RateProfile> {
    if !(r0.is_finite() && r0 >= 0.0) {
        return Err(invalid("phonon_rate_r", "initial R must be finite and >= 0"));
    }
    let times = record.times.values();
    let curves = &record.curves;
    let n = curves.len();
    let mut s: Vec<f64> = curves
        .par_iter()
        .map(|c| fit_curve_fixed_r(times, &c.contrast, r0, opts).s)
        .collect();
    let mut r = r0;
    let eval = |s: &[f64], r: f64| -> Vec<CurveTerms> {
        curves
            .par_iter()
            .zip(s.par_iter())
            .map(|(c, &si)| curve_terms(times, &c.contrast, si, r))
            .collect()
    };
    let total = |t: &[CurveTerms]| t.iter().map(|c| c.sse).sum::<f64>();

    let mut terms = eval(&s, r);
    let mut cost = total(&terms);
    let mut lambda = 1e-3;
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let mut schur = 0.0;
        let mut rhs = 0.0;
        let mut jrr = 0.0;
        let mut gr = 0.0;
        for c in &terms {
            let a = c.jss * (1.0 + lambda);
            jrr += c.jrr;
            gr += c.gr;
            if a > 0.0 {
                schur += c.jsr * c.jsr / a;
                rhs += c.jsr * c.gs / a;
            }
        }
        let denom = jrr * (1.0 + lambda) - schur;
        let dr = if denom > 0.0 { (gr - rhs) / denom } else { 0.0 };
        let ds: Vec<f64> = terms
            .iter()
            .map(|c| {
                let a = c.jss * (1.0 + lambda);
                if a > 0.0 {
                    (c.gs - c.jsr * dr) / a
                } else {
                    0.0
                }
            })
            .collect();
        let trial_s: Vec<f64> = s.iter().zip(&ds).map(|(a, d)| a + d).collect();
        let trial_r = r + dr;
        let trial_terms = eval(&trial_s, trial_r);
        let trial_cost = total(&trial_terms);
        if trial_cost <= cost {
            let small = dr.abs() <= opts.xtol * r.abs().max(1.0)
                && ds
                    .iter()
                    .zip(&s)
                    .all(|(d, si)| d.abs() <= opts.xtol * si.abs().max(1e-6));
            s = trial_s;
            r = trial_r;
            terms = trial_terms;
            cost = trial_cost;
            lambda = (lambda * 0.3).max(1e-12);
            if small {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                converged = (trial_cost - cost).abs() <= 1e-12 * cost.max(1e-300);
                break;
            }
        }
    }

    let n_obs = (n * times.len()) as f64;
    let sigma2 = cost / (n_obs - (n + 1) as f64).max(1.0);
    // inverse of the arrow matrix: var(R) from the Schur complement,
    // var(s_j) = 1/a_j + (b_j/a_j)² var(R)
    let jrr: f64 = terms.iter().map(|c| c.jrr).sum();
    let schur: f64 = terms
        .iter()
        .filter(|c| c.jss > 0.0)
        .map(|c| c.jsr * c.jsr / c.jss)
        .sum();
    let var_r_unit = if jrr - schur > 0.0 {
        1.0 / (jrr - schur)
    } else {
        f64::INFINITY
    };
    let stderr = terms
        .iter()
        .zip(&s)
        .map(|(c, &si)| {
            let var = if c.jss > 0.0 {
                sigma2 * (1.0 / c.jss + (c.jsr / c.jss).powi(2) * var_r_unit)
            } else {
                f64::INFINITY
            };
            squared_stderr(si.abs(), var)
        })
        .collect();
    let gamma1 = s.iter().map(|v| v * v).collect();
    let mut p = RateProfile::new(record.sweep.clone(), gamma1, stderr, r)?;
    p.r_stderr = (sigma2 * var_r_unit).sqrt();
    p.converged = vec![converged; n];
    Ok(p)
}

/// Removes the field-independent offset: the profile minimum, or the mean
/// over `window` (gauss, inclusive) when given. Results are floored at 0.
pub fn subtract_detuned_baseline(profile: &RateProfile, window: Option<(f64, f64)>) -> Result<RateProfile> {
    if profile.gamma1.len() < 10 {
        return Err(invalid("profile", "need at least 10 points to estimate a baseline"));
    }
    let offset = match window {
        None => profile.gamma1.iter().cloned().fold(f64::INFINITY, f64::min),
        Some((lo, hi)) => {
            let inside: Vec<f64> = profile
                .sweep
                .values()
                .iter()
                .zip(&profile.gamma1)
                .filter(|(b, _)| **b >= lo && **b <= hi)
                .map(|(_, g)| *g)
                .collect();
            if inside.is_empty() {
                return Err(invalid("window", format!("no field points in [{lo}, {hi}] G")));
            }
            inside.iter().sum::<f64>() / inside.len() as f64
        }
    };
    let mut out = profile.clone();
    out.gamma1 = profile.gamma1.iter().map(|g| (g - offset).max(0.0)).collect();
    Ok(out)
}
