//! NV-centre relaxometry toolkit.
//!
//! Models the T₁ relaxation of an NV probe under a tunable axial field,
//! synthesises field-swept decay records from a P1 electron-spin bath and
//! recovers the bath spectral density by iterative Wiener deconvolution.
//!
//! Internal frequencies are angular (rad/s); fields are gauss at the API.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod deconv;
pub mod error;
pub mod filters;
pub mod forward;
pub mod grid;
pub mod ode;
pub mod p1bath;
pub mod spin_dynamics;
pub mod units;

pub use error::{Error, Result};
pub use filters::{FilterKernel, KernelShape};
pub use grid::{DecayCurve, FieldSweep, SpectralDensity, TimeGrid};
pub use units::PhysicalConstants;
