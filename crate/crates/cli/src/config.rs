//! Run configuration: a flat JSON object whose keys carry their units.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nvesr::deconv::{DeconvOptions, NoisePsd};
use nvesr::forward::{FitOptions, PhononMode};
use nvesr::p1bath::{MonteCarloConfig, P1Constants, MIN_HIGH_FIELD_G};
use nvesr::units::{hz_to_angular, mhz_to_angular};
use nvesr::{FieldSweep, KernelShape, PhysicalConstants, TimeGrid};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub zero_field_splitting_mhz: f64,
    pub gamma_e_rad_per_s_per_t: f64,
    pub a_z_mhz: f64,
    pub a_x_mhz: f64,
    pub gamma2_mhz: f64,
    pub gamma_p1_mhz: f64,
    pub density_ppm: f64,
    pub r_min_nm: f64,
    pub mc_samples: usize,
    pub mc_max_relative_stderr: f64,
    /// Central resonance rate the bath model is scaled to; null keeps the raw scale.
    pub peak_gamma1_per_s: Option<f64>,
    pub phonon_rate_per_s: f64,
    pub fit_phonon_rate: bool,
    pub fit_max_iter: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub sweep_min_g: f64,
    pub sweep_max_g: f64,
    pub sweep_points: usize,
    pub time_min_us: f64,
    pub time_max_ms: f64,
    pub time_points: usize,
    pub subtract_baseline: bool,
    /// Mean over this field window is the baseline; null uses the profile minimum.
    pub baseline_window_g: Option<[f64; 2]>,
    pub kernel_shape: String,
    pub max_iter: usize,
    pub tol: f64,
    pub taper_fraction: f64,
    /// Flat noise power per transform bin; null derives it from the fit errors.
    pub noise_psd: Option<f64>,
    /// Worker threads for synthesis, fitting and Monte Carlo; 0 uses all cores.
    pub workers: usize,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let k = PhysicalConstants::default();
        let p = P1Constants::default();
        Self {
            zero_field_splitting_mhz: k.zero_field_splitting / 1e6,
            gamma_e_rad_per_s_per_t: k.gamma_e,
            a_z_mhz: p.a_z / 1e6,
            a_x_mhz: p.a_x / 1e6,
            gamma2_mhz: 5.0,
            gamma_p1_mhz: 1.0,
            density_ppm: 50.0,
            r_min_nm: nvesr::p1bath::DEFAULT_R_MIN * 1e9,
            mc_samples: 1 << 22,
            mc_max_relative_stderr: 0.05,
            peak_gamma1_per_s: Some(1e5),
            phonon_rate_per_s: nvesr::forward::DEFAULT_PHONON_RATE,
            fit_phonon_rate: false,
            fit_max_iter: 200,
            noise_sigma: 0.005,
            seed: 1,
            sweep_min_g: 480.0,
            sweep_max_g: 540.0,
            sweep_points: 500,
            time_min_us: 10.0,
            time_max_ms: 20.0,
            time_points: 40,
            subtract_baseline: false,
            baseline_window_g: None,
            kernel_shape: KernelShape::Lorentzian.name().into(),
            max_iter: 10,
            tol: 1e-4,
            taper_fraction: 0.05,
            noise_psd: None,
            workers: 0,
            output_dir: PathBuf::from("nvesr-out"),
        }
    }
}

/// 1-based line of the first occurrence of `"key"` in the source text.
fn key_line(text: &str, key: &str) -> Option<usize> {
    let quoted = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&quoted)).map(|i| i + 1)
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| CliError::Config(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        if let Err((key, msg)) = cfg.check() {
            let at = key_line(text, key).map(|l| format!("line {l}: ")).unwrap_or_default();
            return Err(CliError::Config(format!("{at}{key}: {msg}")));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Validates against the preconditions of the modules the values feed.
    pub fn validate(&self) -> Result<(), CliError> {
        self.check()
            .map_err(|(key, msg)| CliError::Config(format!("{key}: {msg}")))
    }

    fn check(&self) -> Result<(), (&'static str, String)> {
        fn positive(key: &'static str, v: f64) -> Result<(), (&'static str, String)> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err((key, format!("must be a positive number, got {v}")))
            }
        }
        fn non_negative(key: &'static str, v: f64) -> Result<(), (&'static str, String)> {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err((key, format!("must be a finite number >= 0, got {v}")))
            }
        }
        positive("zero_field_splitting_mhz", self.zero_field_splitting_mhz)?;
        positive("gamma_e_rad_per_s_per_t", self.gamma_e_rad_per_s_per_t)?;
        positive("a_z_mhz", self.a_z_mhz)?;
        positive("a_x_mhz", self.a_x_mhz)?;
        positive("gamma2_mhz", self.gamma2_mhz)?;
        positive("gamma_p1_mhz", self.gamma_p1_mhz)?;
        positive("density_ppm", self.density_ppm)?;
        positive("r_min_nm", self.r_min_nm)?;
        if self.mc_samples < 2 {
            return Err(("mc_samples", "need at least 2 samples".into()));
        }
        positive("mc_max_relative_stderr", self.mc_max_relative_stderr)?;
        if let Some(p) = self.peak_gamma1_per_s {
            positive("peak_gamma1_per_s", p)?;
        }
        non_negative("phonon_rate_per_s", self.phonon_rate_per_s)?;
        if self.fit_max_iter == 0 {
            return Err(("fit_max_iter", "must be >= 1".into()));
        }
        non_negative("noise_sigma", self.noise_sigma)?;
        if !(self.sweep_min_g.is_finite() && self.sweep_min_g >= MIN_HIGH_FIELD_G) {
            return Err((
                "sweep_min_g",
                format!("must be >= {MIN_HIGH_FIELD_G} G (high-field regime)"),
            ));
        }
        if !(self.sweep_max_g.is_finite() && self.sweep_max_g > self.sweep_min_g) {
            return Err(("sweep_max_g", "must exceed sweep_min_g".into()));
        }
        if self.sweep_points < nvesr::deconv::MIN_POINTS {
            return Err(("sweep_points", format!("need at least {}", nvesr::deconv::MIN_POINTS)));
        }
        positive("time_min_us", self.time_min_us)?;
        positive("time_max_ms", self.time_max_ms)?;
        if self.time_max_ms * 1e3 <= self.time_min_us {
            return Err(("time_max_ms", "must exceed time_min_us".into()));
        }
        if self.time_points < 4 {
            return Err(("time_points", "need at least 4 dark times".into()));
        }
        if let Some([lo, hi]) = self.baseline_window_g {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(("baseline_window_g", format!("expected [low, high], got [{lo}, {hi}]")));
            }
        }
        self.kernel_shape
            .parse::<KernelShape>()
            .map_err(|e| ("kernel_shape", e))?;
        if self.max_iter == 0 {
            return Err(("max_iter", "must be >= 1".into()));
        }
        positive("tol", self.tol)?;
        if !(0.0..0.5).contains(&self.taper_fraction) {
            return Err((
                "taper_fraction",
                format!("must lie in [0, 0.5), got {}", self.taper_fraction),
            ));
        }
        if let Some(n) = self.noise_psd {
            non_negative("noise_psd", n)?;
        }
        Ok(())
    }

    pub fn constants(&self) -> Result<PhysicalConstants, CliError> {
        Ok(PhysicalConstants::new(
            self.zero_field_splitting_mhz * 1e6,
            self.gamma_e_rad_per_s_per_t,
        )?)
    }

    pub fn p1(&self) -> Result<P1Constants, CliError> {
        Ok(P1Constants::new(
            self.a_z_mhz * 1e6,
            self.a_x_mhz * 1e6,
            hz_to_angular(self.gamma_p1_mhz * 1e6),
        )?)
    }

    /// Γ₂, rad/s.
    pub fn gamma2(&self) -> f64 {
        mhz_to_angular(self.gamma2_mhz)
    }

    pub fn sweep(&self) -> Result<FieldSweep, CliError> {
        Ok(FieldSweep::linear(
            self.sweep_min_g,
            self.sweep_max_g,
            self.sweep_points,
        )?)
    }

    pub fn times(&self) -> Result<TimeGrid, CliError> {
        Ok(TimeGrid::log_spaced(
            self.time_min_us * 1e-6,
            self.time_max_ms * 1e-3,
            self.time_points,
        )?)
    }

    pub fn kernel_shape(&self) -> Result<KernelShape, CliError> {
        self.kernel_shape.parse().map_err(CliError::Config)
    }

    pub fn monte_carlo(&self) -> MonteCarloConfig {
        MonteCarloConfig {
            samples: self.mc_samples,
            seed: self.seed,
            workers: self.workers,
            max_relative_stderr: self.mc_max_relative_stderr,
        }
    }

    pub fn phonon_mode(&self) -> PhononMode {
        if self.fit_phonon_rate {
            PhononMode::Fitted(self.phonon_rate_per_s)
        } else {
            PhononMode::Fixed(self.phonon_rate_per_s)
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            max_iter: self.fit_max_iter,
            ..FitOptions::default()
        }
    }

    /// Deconvolution settings; the noise level falls back to `auto_noise`.
    pub fn deconv_options(&self, auto_noise: NoisePsd) -> DeconvOptions {
        DeconvOptions {
            max_iter: self.max_iter,
            tol: self.tol,
            taper_fraction: self.taper_fraction,
            noise: self.noise_psd.map(NoisePsd::Flat).unwrap_or(auto_noise),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// SHA-256 of the canonical serialisation, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}
