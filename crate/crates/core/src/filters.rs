//! Relaxation filter kernels G(Ω) on the offset variable Ω.
//!
//! Kernels are unit-peak; physical amplitudes live in the bath model.

use crate::error::{invalid, Result};
use crate::grid::uniform_spacing;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelShape {
    /// Γ₂²/(Ω² + Γ₂²): spins outside the lattice.
    Lorentzian,
    /// Γ₂/√(Ω² + Γ₂²): spins inside the lattice (nearest-neighbour averaged).
    SqrtLorentzian,
}

impl KernelShape {
    /// Unit-peak value at offset `x` for linewidth `gamma2`.
    pub fn eval(self, gamma2: f64, x: f64) -> f64 {
        let l = gamma2 * gamma2 / (x * x + gamma2 * gamma2);
        match self {
            KernelShape::Lorentzian => l,
            KernelShape::SqrtLorentzian => l.sqrt(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelShape::Lorentzian => "lorentzian",
            KernelShape::SqrtLorentzian => "sqrt_lorentzian",
        }
    }
}

impl std::str::FromStr for KernelShape {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "lorentzian" => Ok(KernelShape::Lorentzian),
            "sqrt_lorentzian" => Ok(KernelShape::SqrtLorentzian),
            other => Err(format!(
                "unknown kernel shape `{other}` (expected lorentzian or sqrt_lorentzian)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterKernel {
    shape: KernelShape,
    gamma2: f64,
    centers: Vec<f64>,
    grid: Vec<f64>,
    samples: Vec<f64>,
}

impl FilterKernel {
    /// Equal-weight sum of `shape` kernels at `centers` sampled on `grid`,
    /// scaled so the largest sample is 1.
    pub fn sampled(shape: KernelShape, gamma2: f64, centers: &[f64], grid: &[f64]) -> Result<Self> {
        if !(gamma2 > 0.0 && gamma2.is_finite()) {
            return Err(invalid("gamma2", format!("linewidth must be positive, got {gamma2}")));
        }
        if grid.is_empty() {
            return Err(invalid("grid", "kernel grid is empty"));
        }
        let centers: Vec<f64> = if centers.is_empty() {
            vec![0.0]
        } else {
            centers.to_vec()
        };
        let mut samples: Vec<f64> = grid
            .iter()
            .map(|&x| centers.iter().map(|&c| shape.eval(gamma2, x - c)).sum())
            .collect();
        let peak = samples.iter().cloned().fold(0.0, f64::max);
        if !(peak > 0.0) {
            return Err(invalid("grid", "kernel vanishes on the grid"));
        }
        samples.iter_mut().for_each(|v| *v /= peak);
        Ok(Self {
            shape,
            gamma2,
            centers,
            grid: grid.to_vec(),
            samples,
        })
    }

    /// Centred kernel on the symmetric offsets `k·spacing`, k = −half..=half.
    pub fn symmetric(shape: KernelShape, gamma2: f64, spacing: f64, half_bins: usize) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(invalid("spacing", "must be positive"));
        }
        let h = half_bins as i64;
        let grid: Vec<f64> = (-h..=h).map(|k| k as f64 * spacing).collect();
        Self::sampled(shape, gamma2, &[], &grid)
    }

    pub fn shape(&self) -> KernelShape {
        self.shape
    }

    /// Linewidth Γ₂, rad/s.
    pub fn gamma2(&self) -> f64 {
        self.gamma2
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Grid spacing if the kernel sits on a uniform grid with an odd number
    /// of points centred on zero, as the convolution routines require.
    pub fn centred_spacing(&self) -> Result<f64> {
        let n = self.grid.len();
        if n.is_multiple_of(2) {
            return Err(crate::Error::GridMismatch(
                "kernel needs an odd number of samples".into(),
            ));
        }
        if n == 1 {
            return Ok(0.0);
        }
        let step = uniform_spacing(&self.grid, 1e-6)?;
        if self.grid[n / 2].abs() > 1e-6 * step {
            return Err(crate::Error::GridMismatch("kernel grid is not centred on zero".into()));
        }
        Ok(step)
    }
}

pub fn lorentzian_kernel(gamma2: f64, grid: &[f64]) -> Result<FilterKernel> {
    FilterKernel::sampled(KernelShape::Lorentzian, gamma2, &[], grid)
}

pub fn sqrt_lorentzian_kernel(gamma2: f64, grid: &[f64]) -> Result<FilterKernel> {
    FilterKernel::sampled(KernelShape::SqrtLorentzian, gamma2, &[], grid)
}

/// Kernel with Γ₂ = 1/T₂*, one copy per hyperfine shift.
pub fn kernel_from_fid(
    t2_star: f64,
    hyperfine_shifts: &[f64],
    grid: &[f64],
    shape: KernelShape,
) -> Result<FilterKernel> {
    if !(t2_star > 0.0 && t2_star.is_finite()) {
        return Err(invalid("t2_star", format!("must be positive, got {t2_star}")));
    }
    FilterKernel::sampled(shape, 1.0 / t2_star, hyperfine_shifts, grid)
}
