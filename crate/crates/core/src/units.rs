//! Physical constants and unit conversions.
//!
//! Angular frequency (rad/s) is the only internal frequency unit. Fields are
//! carried in gauss at every API surface and converted to tesla inside the
//! physics.

use std::f64::consts::PI;

use crate::error::{invalid, Result};

pub const TESLA_PER_GAUSS: f64 = 1e-4;

/// Carbon number density of diamond, m⁻³. Used for ppm conversions.
pub const DIAMOND_ATOM_DENSITY: f64 = 1.76e29;

/// Vacuum permeability over 4π, T·m/A.
const MU0_OVER_4PI: f64 = 1e-7;
/// Reduced Planck constant, J·s.
const HBAR: f64 = 1.054_571_817e-34;

pub fn gauss_to_tesla(b_gauss: f64) -> f64 {
    b_gauss * TESLA_PER_GAUSS
}

pub fn tesla_to_gauss(b_tesla: f64) -> f64 {
    b_tesla / TESLA_PER_GAUSS
}

/// Hz → rad/s.
pub fn hz_to_angular(f: f64) -> f64 {
    2.0 * PI * f
}

/// rad/s → Hz.
pub fn angular_to_hz(w: f64) -> f64 {
    w / (2.0 * PI)
}

pub fn mhz_to_angular(f_mhz: f64) -> f64 {
    hz_to_angular(f_mhz * 1e6)
}

pub fn angular_to_mhz(w: f64) -> f64 {
    angular_to_hz(w) * 1e-6
}

/// Impurity concentration in ppm → number density in m⁻³.
pub fn ppm_to_density(ppm: f64) -> f64 {
    ppm * 1e-6 * DIAMOND_ATOM_DENSITY
}

/// Constants of the NV probe and its electron-spin environment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    /// Zero-field splitting D, Hz.
    pub zero_field_splitting: f64,
    /// Electron gyromagnetic ratio, rad s⁻¹ T⁻¹.
    pub gamma_e: f64,
}

impl Default for PhysicalConstants {
    /// D = 2.87 GHz and γ_e = 2π × 28.0 GHz/T, i.e. 2.80 MHz/G per sublevel
    /// (1.759e11 rad s⁻¹ T⁻¹). The pair splitting is then exactly 5.60 MHz/G
    /// and the electron resonance D/2 sits at 512.5 G.
    fn default() -> Self {
        Self {
            zero_field_splitting: 2.87e9,
            gamma_e: hz_to_angular(2.80e6) / TESLA_PER_GAUSS,
        }
    }
}

impl PhysicalConstants {
    pub fn new(zero_field_splitting: f64, gamma_e: f64) -> Result<Self> {
        if !(zero_field_splitting.is_finite() && zero_field_splitting > 0.0) {
            return Err(invalid("zero_field_splitting", "must be positive and finite"));
        }
        if !(gamma_e.is_finite() && gamma_e > 0.0) {
            return Err(invalid("gamma_e", "must be positive and finite"));
        }
        Ok(Self {
            zero_field_splitting,
            gamma_e,
        })
    }

    /// Zero-field splitting as an angular frequency, 2πD.
    pub fn d_angular(&self) -> f64 {
        hz_to_angular(self.zero_field_splitting)
    }

    /// Single-sublevel Zeeman slope, Hz/G.
    pub fn zeeman_per_gauss(&self) -> f64 {
        angular_to_hz(self.gamma_e) * TESLA_PER_GAUSS
    }

    /// Splitting of the ±1 pair per gauss, Hz/G.
    pub fn pair_zeeman_per_gauss(&self) -> f64 {
        2.0 * self.zeeman_per_gauss()
    }

    /// Dipolar prefactor μ₀ħγ_e²/4π, rad s⁻¹ m³. Divide by r³ for B_int.
    pub fn dipolar_prefactor(&self) -> f64 {
        MU0_OVER_4PI * HBAR * self.gamma_e * self.gamma_e
    }

    /// Electron Zeeman frequency ω₀ = γ_e B₀ in rad/s for a field in gauss.
    pub fn zeeman_frequency(&self, b0_gauss: f64) -> Result<f64> {
        if !(b0_gauss.is_finite() && b0_gauss >= 0.0) {
            return Err(invalid("b0", format!("field must be >= 0 G, got {b0_gauss}")));
        }
        Ok(self.gamma_e * gauss_to_tesla(b0_gauss))
    }

    /// Field at which the electron Zeeman frequency equals πD (the |0⟩↔|−1⟩
    /// NV transition crosses the free-electron line).
    pub fn resonance_field(&self) -> f64 {
        tesla_to_gauss(PI * self.zero_field_splitting / self.gamma_e)
    }

    /// Ω₀ = 2πD − 2γB₀, rad/s.
    pub fn omega0_offset(&self, b0_gauss: f64) -> f64 {
        self.d_angular() - 2.0 * self.gamma_e * gauss_to_tesla(b0_gauss)
    }

    /// Inverse of [`omega0_offset`](Self::omega0_offset), gauss.
    pub fn field_for_offset(&self, omega0: f64) -> f64 {
        tesla_to_gauss((self.d_angular() - omega0) / (2.0 * self.gamma_e))
    }
}

/// Convenience wrapper using the default constants.
pub fn zeeman_frequency(b0_gauss: f64) -> Result<f64> {
    PhysicalConstants::default().zeeman_frequency(b0_gauss)
}
