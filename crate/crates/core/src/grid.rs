//! Grids and dataset containers shared by every stage of the pipeline.

use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::units::PhysicalConstants;

/// `n` equally spaced points from `min` to `max`, both endpoints included.
pub fn make_uniform_grid(min: f64, max: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(invalid("n", format!("need at least 2 points, got {n}")));
    }
    if !(min.is_finite() && max.is_finite() && max > min) {
        return Err(invalid("max", format!("need max > min, got [{min}, {max}]")));
    }
    let step = (max - min) / (n - 1) as f64;
    let mut grid: Vec<f64> = (0..n).map(|i| min + step * i as f64).collect();
    grid[n - 1] = max;
    Ok(grid)
}

/// `n` logarithmically spaced points from `min` to `max` (both > 0).
pub fn make_log_grid(min: f64, max: f64, n: usize) -> Result<Vec<f64>> {
    if !(min > 0.0) {
        return Err(invalid("min", "log grid needs a positive lower bound"));
    }
    let logs = make_uniform_grid(min.ln(), max.ln(), n)?;
    let mut grid: Vec<f64> = logs.into_iter().map(f64::exp).collect();
    grid[0] = min;
    grid[n - 1] = max;
    Ok(grid)
}

/// Composite trapezoidal rule on an arbitrary increasing abscissa.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

/// Spacing of a uniform grid, or an error if the grid is not uniform to
/// `rel_tol` relative to its span.
pub fn uniform_spacing(grid: &[f64], rel_tol: f64) -> Result<f64> {
    if grid.len() < 2 {
        return Err(Error::GridMismatch("grid needs at least 2 points".into()));
    }
    let n = grid.len();
    let step = (grid[n - 1] - grid[0]) / (n - 1) as f64;
    if !(step > 0.0) {
        return Err(Error::GridMismatch("grid must be increasing".into()));
    }
    let worst = grid
        .windows(2)
        .map(|w| ((w[1] - w[0]) - step).abs())
        .fold(0.0, f64::max);
    if worst > rel_tol * step.abs() {
        return Err(Error::GridMismatch(format!(
            "grid is not uniform (spacing deviates by {:.3e} of the step)",
            worst / step
        )));
    }
    Ok(step)
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0])
}

/// Ordered axial field values, gauss.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSweep {
    b0: Vec<f64>,
}

impl FieldSweep {
    pub fn new(b0_values: Vec<f64>) -> Result<Self> {
        if b0_values.is_empty() {
            return Err(invalid("b0_values", "sweep is empty"));
        }
        if b0_values.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(invalid("b0_values", "fields must be positive and finite"));
        }
        if !strictly_increasing(&b0_values) {
            return Err(invalid("b0_values", "fields must be strictly increasing"));
        }
        Ok(Self { b0: b0_values })
    }

    pub fn linear(min_g: f64, max_g: f64, n: usize) -> Result<Self> {
        Self::new(make_uniform_grid(min_g, max_g, n)?)
    }

    pub fn values(&self) -> &[f64] {
        &self.b0
    }

    pub fn len(&self) -> usize {
        self.b0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b0.is_empty()
    }

    /// Electron Zeeman frequencies ω₀ = γB₀, rad/s.
    pub fn zeeman_frequencies(&self, c: &PhysicalConstants) -> Vec<f64> {
        self.b0
            .iter()
            .map(|&b| c.zeeman_frequency(b).expect("positive field"))
            .collect()
    }
}

/// Dark times, seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t: Vec<f64>,
}

impl TimeGrid {
    pub fn new(dark_times: Vec<f64>) -> Result<Self> {
        if dark_times.is_empty() {
            return Err(invalid("dark_times", "time grid is empty"));
        }
        if !(dark_times[0] >= 0.0) || dark_times.iter().any(|t| !t.is_finite()) {
            return Err(invalid("dark_times", "times must be finite and start at >= 0"));
        }
        if !strictly_increasing(&dark_times) {
            return Err(invalid("dark_times", "times must be strictly increasing"));
        }
        Ok(Self { t: dark_times })
    }

    pub fn log_spaced(min_s: f64, max_s: f64, n: usize) -> Result<Self> {
        Self::new(make_log_grid(min_s, max_s, n)?)
    }

    pub fn values(&self) -> &[f64] {
        &self.t
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Contrast samples against dark time at one field point.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayCurve {
    pub field_g: f64,
    pub times: Arc<TimeGrid>,
    pub contrast: Vec<f64>,
    pub noise_sigma: f64,
}

impl DecayCurve {
    pub fn new(field_g: f64, times: Arc<TimeGrid>, contrast: Vec<f64>, noise_sigma: f64) -> Result<Self> {
        if contrast.len() != times.len() {
            return Err(invalid(
                "contrast",
                format!("{} samples for {} dark times", contrast.len(), times.len()),
            ));
        }
        if !(noise_sigma >= 0.0) {
            return Err(invalid("noise_sigma", "must be >= 0"));
        }
        Ok(Self {
            field_g,
            times,
            contrast,
            noise_sigma,
        })
    }
}

/// Non-negative density sampled on a uniform angular-frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDensity {
    omega: Vec<f64>,
    values: Vec<f64>,
    norm: f64,
}

impl SpectralDensity {
    pub fn new(omega: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if omega.len() != values.len() {
            return Err(Error::GridMismatch(format!(
                "{} values on a {}-point grid",
                values.len(),
                omega.len()
            )));
        }
        uniform_spacing(&omega, 1e-6)?;
        if let Some(bad) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(invalid(
                "values",
                format!("density must be finite and >= 0, found {bad}"),
            ));
        }
        let norm = trapezoid(&omega, &values);
        Ok(Self { omega, values, norm })
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Trapezoidal integral over the grid.
    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn spacing(&self) -> f64 {
        (self.omega[self.omega.len() - 1] - self.omega[0]) / (self.omega.len() - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same grid, values scaled to unit integral.
    pub fn normalized(&self) -> Result<Self> {
        if !(self.norm > 0.0) {
            return Err(invalid("values", "cannot normalise a zero density"));
        }
        let values = self.values.iter().map(|v| v / self.norm).collect();
        Self::new(self.omega.clone(), values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_grid_examples() {
        assert_eq!(make_uniform_grid(0.0, 10.0, 3).unwrap(), vec![0.0, 5.0, 10.0]);
        assert_eq!(make_uniform_grid(-1.0, 1.0, 2).unwrap(), vec![-1.0, 1.0]);
        assert!(make_uniform_grid(0.0, 1.0, 1).is_err());
        assert!(make_uniform_grid(1.0, 1.0, 5).is_err());
        assert!(make_uniform_grid(2.0, 1.0, 5).is_err());
    }

    #[test]
    fn sweep_grid_maps_to_offset_range() {
        let c = PhysicalConstants::default();
        let sweep = FieldSweep::linear(480.0, 540.0, 500).unwrap();
        let lo = crate::units::angular_to_mhz(c.omega0_offset(sweep.values()[499]));
        let hi = crate::units::angular_to_mhz(c.omega0_offset(sweep.values()[0]));
        assert!((lo + 154.0).abs() < 0.5 && (hi - 182.0).abs() < 0.5, "{lo} {hi}");
    }

    #[test]
    fn sweep_and_time_validation() {
        assert!(FieldSweep::new(vec![]).is_err());
        assert!(FieldSweep::new(vec![500.0, 499.0]).is_err());
        assert!(FieldSweep::new(vec![0.0, 1.0]).is_err());
        assert!(TimeGrid::new(vec![-1.0, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.0]).is_err());
        assert!(TimeGrid::new(vec![0.0, 1e-6]).is_ok());
        let tg = TimeGrid::log_spaced(1e-5, 2e-2, 40).unwrap();
        assert_eq!(tg.values()[0], 1e-5);
        assert_eq!(tg.values()[39], 2e-2);
    }

    #[test]
    fn decay_curve_length_checked() {
        let t = Arc::new(TimeGrid::new(vec![0.0, 1.0]).unwrap());
        assert!(DecayCurve::new(500.0, t.clone(), vec![1.0], 0.0).is_err());
        assert!(DecayCurve::new(500.0, t, vec![1.0, 0.9], 0.0).is_ok());
    }

    #[test]
    fn spectral_density_norm_and_validation() {
        let omega = make_uniform_grid(-1.0, 1.0, 201).unwrap();
        let values: Vec<f64> = omega.iter().map(|w| 1.0 - w * w).collect();
        let s = SpectralDensity::new(omega.clone(), values).unwrap();
        assert!((s.norm() - 4.0 / 3.0).abs() < 1e-4);
        let n = s.normalized().unwrap();
        assert!((n.norm() - 1.0).abs() < 1e-12);
        assert!(SpectralDensity::new(omega.clone(), vec![-1.0; 201]).is_err());
        assert!(SpectralDensity::new(vec![0.0, 1.0, 3.0], vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn uniform_grid_spacing_is_constant(min in -1e9f64..1e9, span in 1e-3f64..1e9, n in 2usize..2000) {
            let g = make_uniform_grid(min, min + span, n).unwrap();
            prop_assert_eq!(g.len(), n);
            let step = span / (n - 1) as f64;
            let scale = min.abs().max((min + span).abs());
            for w in g.windows(2) {
                prop_assert!(((w[1] - w[0]) - step).abs() <= 8.0 * f64::EPSILON * scale + 1e-12 * step);
            }
        }

        #[test]
        fn density_norm_matches_trapezoid(vals in proptest::collection::vec(0.0f64..10.0, 2..200)) {
            let omega = make_uniform_grid(0.0, 1.0, vals.len()).unwrap();
            let s = SpectralDensity::new(omega.clone(), vals.clone()).unwrap();
            let t = trapezoid(&omega, &vals);
            prop_assert!((s.norm() - t).abs() <= 1e-9 * t.abs().max(1e-300));
        }
    }
}
