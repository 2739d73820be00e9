//! Substitutional-nitrogen (P1) electron-spin bath.
//!
//! Line positions, spectral densities, nearest-neighbour coupling statistics
//! and the analytic field-dependent NV relaxation rate. The nuclear
//! quadrupole and nuclear Zeeman terms drop out of every spectrum here and
//! are not represented.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::grid::{FieldSweep, SpectralDensity};
use crate::units::{gauss_to_tesla, hz_to_angular, ppm_to_density, tesla_to_gauss, PhysicalConstants};

/// Lowest field at which the high-field line positions are trusted, gauss.
pub const MIN_HIGH_FIELD_G: f64 = 100.0;

/// C–C bond length, m. Default exclusion radius for coupling moments.
pub const DEFAULT_R_MIN: f64 = 0.154e-9;

/// Γ(4/3).
const GAMMA_4_3: f64 = 0.892_979_511_569_249_2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct P1Constants {
    /// On-axis axial hyperfine A_z, Hz.
    pub a_z: f64,
    /// On-axis transverse hyperfine A_x, Hz.
    pub a_x: f64,
    /// Fraction of P1 centres aligned with the NV axis.
    pub on_axis_fraction: f64,
    /// Bath flip-flop linewidth Γ_P1, rad/s.
    pub gamma_p1: f64,
}

impl Default for P1Constants {
    fn default() -> Self {
        Self {
            a_z: 114e6,
            a_x: 81.3e6,
            on_axis_fraction: 0.25,
            gamma_p1: hz_to_angular(1e6),
        }
    }
}

impl P1Constants {
    pub fn new(a_z: f64, a_x: f64, gamma_p1: f64) -> Result<Self> {
        if !(a_z.is_finite() && a_z > 0.0) {
            return Err(invalid("a_z", "hyperfine must be positive"));
        }
        if !(a_x.is_finite() && a_x >= 0.0) {
            return Err(invalid("a_x", "hyperfine must be >= 0"));
        }
        if !(gamma_p1.is_finite() && gamma_p1 > 0.0) {
            return Err(invalid("gamma_p1", "linewidth must be positive"));
        }
        Ok(Self {
            a_z,
            a_x,
            gamma_p1,
            ..Self::default()
        })
    }

    pub fn off_axis_fraction(&self) -> f64 {
        1.0 - self.on_axis_fraction
    }

    /// Off-axis axial hyperfine (8A_x + A_z)/9, Hz.
    pub fn off_axis_a_z(&self) -> f64 {
        (8.0 * self.a_x + self.a_z) / 9.0
    }

    /// Off-axis transverse hyperfine (5A_x + 4A_z)/9, Hz.
    pub fn off_axis_a_x(&self) -> f64 {
        (5.0 * self.a_x + 4.0 * self.a_z) / 9.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BathGeometry {
    /// Impurity number density, m⁻³.
    pub density_n: f64,
    /// ⟨B⊥²⟩, rad²/s².
    pub b_perp_sq: f64,
    /// ⟨B∥²⟩, rad²/s².
    pub b_par_sq: f64,
}

impl BathGeometry {
    pub fn new(density_n: f64, b_perp_sq: f64, b_par_sq: f64) -> Result<Self> {
        if !(density_n.is_finite() && density_n > 0.0) {
            return Err(invalid("density_n", "density must be positive"));
        }
        if !(b_perp_sq >= 0.0 && b_par_sq >= 0.0) {
            return Err(invalid("b_perp_sq", "second moments must be >= 0"));
        }
        Ok(Self {
            density_n,
            b_perp_sq,
            b_par_sq,
        })
    }

    pub fn from_ppm(density_ppm: f64, b_perp_sq: f64, b_par_sq: f64) -> Result<Self> {
        Self::new(ppm_to_density(density_ppm), b_perp_sq, b_par_sq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Site {
    /// Both orientations contribute (central allowed line).
    All,
    OnAxis,
    OffAxis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transition {
    Allowed,
    Disallowed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct P1Line {
    pub label: &'static str,
    /// Line centre, rad/s.
    pub frequency: f64,
    pub site: Site,
    pub transition: Transition,
    /// Spectral weight including the orientation fraction and the 1/6π or
    /// 1/4π prefactor.
    pub weight: f64,
}

fn allowed_weight(fraction: f64) -> f64 {
    fraction / (6.0 * PI)
}

fn disallowed_weight(fraction: f64) -> f64 {
    fraction / (4.0 * PI)
}

/// Offsets of every line from the bare electron Zeeman frequency in the
/// high-field limit, with weights. Disallowed lines sit at half the
/// corresponding allowed splitting.
fn line_offsets(c: &P1Constants) -> Vec<(&'static str, f64, Site, Transition, f64)> {
    let (on, off) = (c.on_axis_fraction, c.off_axis_fraction());
    let az = hz_to_angular(c.a_z);
    let azo = hz_to_angular(c.off_axis_a_z());
    use Site::*;
    use Transition::*;
    vec![
        ("allowed central", 0.0, All, Allowed, allowed_weight(1.0)),
        ("allowed on-axis -A_z", -az, OnAxis, Allowed, allowed_weight(on)),
        ("allowed on-axis +A_z", az, OnAxis, Allowed, allowed_weight(on)),
        ("allowed off-axis -a_z", -azo, OffAxis, Allowed, allowed_weight(off)),
        ("allowed off-axis +a_z", azo, OffAxis, Allowed, allowed_weight(off)),
        (
            "disallowed on-axis -A_z/2",
            -0.5 * az,
            OnAxis,
            Disallowed,
            disallowed_weight(on),
        ),
        (
            "disallowed on-axis +A_z/2",
            0.5 * az,
            OnAxis,
            Disallowed,
            disallowed_weight(on),
        ),
        (
            "disallowed off-axis -a_z/2",
            -0.5 * azo,
            OffAxis,
            Disallowed,
            disallowed_weight(off),
        ),
        (
            "disallowed off-axis +a_z/2",
            0.5 * azo,
            OffAxis,
            Disallowed,
            disallowed_weight(off),
        ),
    ]
}

/// Allowed lines ω₀, ω₀ ± A_z, ω₀ ± a_z and disallowed lines λ₁..λ₄ at
/// field `b0_gauss`, with λ in exact square-root form.
pub fn p1_line_positions(b0_gauss: f64, consts: &PhysicalConstants, c: &P1Constants) -> Result<Vec<P1Line>> {
    if !(b0_gauss >= MIN_HIGH_FIELD_G) {
        return Err(Error::FieldRegime {
            field_g: b0_gauss,
            min_g: MIN_HIGH_FIELD_G,
        });
    }
    let w0 = consts.zeeman_frequency(b0_gauss)?;
    let ax = hz_to_angular(c.a_x);
    let axo = hz_to_angular(c.off_axis_a_x());
    let lambda = |transverse: f64, shift: f64| (2.0 * transverse * transverse + (w0 + shift).powi(2)).sqrt();
    Ok(line_offsets(c)
        .into_iter()
        .map(|(label, offset, site, transition, weight)| {
            let frequency = match (transition, site) {
                (Transition::Allowed, _) => w0 + offset,
                (Transition::Disallowed, Site::OnAxis) => lambda(ax, offset),
                (Transition::Disallowed, _) => lambda(axo, offset),
            };
            P1Line {
                label,
                frequency,
                site,
                transition,
                weight,
            }
        })
        .collect())
}

fn lorentz(width: f64, x: f64) -> f64 {
    width / (width * width + x * x)
}

/// Full bath spectrum S_all + S_dis on `grid` (rad/s), both frequency signs.
/// Each sign branch integrates to 1 over the whole line.
pub fn spectral_density(
    grid: &[f64],
    b0_gauss: f64,
    consts: &PhysicalConstants,
    c: &P1Constants,
) -> Result<SpectralDensity> {
    let lines = p1_line_positions(b0_gauss, consts, c)?;
    let g = c.gamma_p1;
    let values = grid
        .iter()
        .map(|&w| {
            lines
                .iter()
                .map(|l| l.weight * (lorentz(g, w - l.frequency) + lorentz(g, w + l.frequency)))
                .sum()
        })
        .collect();
    SpectralDensity::new(grid.to_vec(), values)
}

/// Bath spectrum in the offset frame Ω = ω_E − ω₀ (single branch,
/// high-field line positions). With a geometry, allowed lines are scaled
/// by ⟨B⊥²⟩ and disallowed lines by ⟨B∥²⟩.
pub fn offset_spectral_density(
    grid: &[f64],
    c: &P1Constants,
    geometry: Option<&BathGeometry>,
) -> Result<SpectralDensity> {
    let lines = line_offsets(c);
    let g = c.gamma_p1;
    let values = grid
        .iter()
        .map(|&x| {
            lines
                .iter()
                .map(|&(_, offset, _, transition, weight)| {
                    let coupling = match (geometry, transition) {
                        (None, _) => 1.0,
                        (Some(b), Transition::Allowed) => b.b_perp_sq,
                        (Some(b), Transition::Disallowed) => b.b_par_sq,
                    };
                    coupling * weight * lorentz(g, x - offset)
                })
                .sum()
        })
        .collect();
    SpectralDensity::new(grid.to_vec(), values)
}

/// NV relaxation rate Γ₁(ω₀), s⁻¹: the P1 line comb seen through a
/// Lorentzian of combined width Γ₂ + Γ_P1, for both signs of the D/2 term.
pub fn gamma1_analytic(omega0: f64, consts: &PhysicalConstants, c: &P1Constants, g: &BathGeometry, gamma2: f64) -> f64 {
    let w = gamma2 + c.gamma_p1;
    let half_d = 0.5 * consts.d_angular();
    let term = |shift: f64| -> f64 {
        [half_d, -half_d]
            .iter()
            .map(|hd| w / (w * w + 4.0 * (omega0 + hd + shift).powi(2)))
            .sum()
    };
    let az = hz_to_angular(c.a_z);
    let azo = hz_to_angular(c.off_axis_a_z());
    let (on, off) = (c.on_axis_fraction, c.off_axis_fraction());
    let allowed = on * (term(0.5 * az) + term(-0.5 * az)) + off * (term(0.5 * azo) + term(-0.5 * azo)) + term(0.0);
    let disallowed = on * (term(0.25 * az) + term(-0.25 * az)) + off * (term(0.25 * azo) + term(-0.25 * azo));
    g.b_perp_sq / (6.0 * PI) * allowed + g.b_par_sq / (4.0 * PI) * disallowed
}

/// Expected rate maximum in the analytic profile.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryPeak {
    pub label: &'static str,
    pub transition: Transition,
    /// Ω₀ = 2πD − 2ω₀ at the peak, rad/s.
    pub omega0: f64,
    pub field_g: f64,
    /// Lorentzian FWHM in Ω₀, rad/s.
    pub fwhm: f64,
    /// Lorentzian FWHM in field, gauss.
    pub fwhm_g: f64,
}

/// Line list of the analytic profile, sorted by field.
pub fn theory_peaks(consts: &PhysicalConstants, c: &P1Constants, gamma2: f64) -> Vec<TheoryPeak> {
    let w = gamma2 + c.gamma_p1;
    let mut peaks: Vec<TheoryPeak> = line_offsets(c)
        .into_iter()
        .map(|(label, offset, _, transition, _)| TheoryPeak {
            label,
            transition,
            omega0: offset,
            field_g: consts.field_for_offset(offset),
            fwhm: 2.0 * w,
            fwhm_g: tesla_to_gauss(2.0 * w / (2.0 * consts.gamma_e)),
        })
        .collect();
    peaks.sort_by(|a, b| a.field_g.total_cmp(&b.field_g));
    peaks
}

/// Γ₁ at each sweep field with a common scale factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BathModel {
    pub constants: PhysicalConstants,
    pub p1: P1Constants,
    pub geometry: BathGeometry,
    /// Γ₂, rad/s.
    pub gamma2: f64,
    /// Multiplier applied to the analytic rate.
    pub rate_scale: f64,
}

impl BathModel {
    pub fn new(constants: PhysicalConstants, p1: P1Constants, geometry: BathGeometry, gamma2: f64) -> Result<Self> {
        if !(gamma2.is_finite() && gamma2 > 0.0) {
            return Err(invalid("gamma2", "linewidth must be positive"));
        }
        Ok(Self {
            constants,
            p1,
            geometry,
            gamma2,
            rate_scale: 1.0,
        })
    }

    /// Rescales so the central resonance rate equals `peak` s⁻¹, keeping
    /// the profile shape.
    pub fn with_peak_rate(mut self, peak: f64) -> Result<Self> {
        if !(peak.is_finite() && peak > 0.0) {
            return Err(invalid("peak", "peak rate must be positive"));
        }
        self.rate_scale = 1.0;
        let raw = self.gamma1(self.constants.resonance_field());
        if !(raw > 0.0) {
            return Err(invalid("geometry", "bath couplings vanish; cannot rescale"));
        }
        self.rate_scale = peak / raw;
        Ok(self)
    }

    pub fn gamma1(&self, b0_gauss: f64) -> f64 {
        let w0 = self.constants.gamma_e * gauss_to_tesla(b0_gauss);
        self.rate_scale * gamma1_analytic(w0, &self.constants, &self.p1, &self.geometry, self.gamma2)
    }

    pub fn profile(&self, sweep: &FieldSweep) -> Vec<f64> {
        sweep.values().iter().map(|&b| self.gamma1(b)).collect()
    }
}

/// Distance from an NV centre to its nearest impurity for a Poisson bath:
/// P(r) = 4πnr² exp(−4πnr³/3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearestNeighbor {
    pub density_n: f64,
}

impl NearestNeighbor {
    pub fn new(density_n: f64) -> Result<Self> {
        if !(density_n.is_finite() && density_n > 0.0) {
            return Err(invalid("density_n", "density must be positive"));
        }
        Ok(Self { density_n })
    }

    /// Γ(4/3)·(4πn/3)^(−1/3), m.
    pub fn mean(&self) -> f64 {
        GAMMA_4_3 * (4.0 * PI * self.density_n / 3.0).powf(-1.0 / 3.0)
    }

    pub fn pdf(&self, r: f64) -> f64 {
        if r < 0.0 {
            return 0.0;
        }
        let n = self.density_n;
        4.0 * PI * n * r * r * (-4.0 / 3.0 * PI * n * r.powi(3)).exp()
    }

    pub fn cdf(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        -(-4.0 / 3.0 * PI * self.density_n * r.powi(3)).exp_m1()
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sample_beyond(0.0, rng)
    }

    /// Draw conditioned on r > r_min. The enclosed volume beyond r_min is
    /// again exponential, so this is exact.
    pub fn sample_beyond<R: Rng + ?Sized>(&self, r_min: f64, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let e = -(1.0 - u).ln();
        (r_min.powi(3) + 3.0 * e / (4.0 * PI * self.density_n)).cbrt()
    }
}

pub fn nearest_neighbor_distance_stats(density_ppm: f64) -> Result<NearestNeighbor> {
    if !(density_ppm.is_finite() && density_ppm > 0.0) {
        return Err(invalid("density_ppm", "density must be positive"));
    }
    NearestNeighbor::new(ppm_to_density(density_ppm))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloConfig {
    pub samples: usize,
    pub seed: u64,
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
    /// Largest acceptable relative standard error.
    pub max_relative_stderr: f64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            samples: 1 << 22,
            seed: 0,
            workers: 0,
            max_relative_stderr: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingMoments {
    pub b_perp_sq: f64,
    pub b_par_sq: f64,
    pub b_perp_sq_stderr: f64,
    pub b_par_sq_stderr: f64,
    pub samples: usize,
}

const MC_CHUNK: usize = 1 << 16;

#[derive(Default, Clone, Copy)]
struct Sums {
    perp: f64,
    perp2: f64,
    par: f64,
    par2: f64,
}

impl Sums {
    fn merge(self, o: Sums) -> Sums {
        Sums {
            perp: self.perp + o.perp,
            perp2: self.perp2 + o.perp2,
            par: self.par + o.par,
            par2: self.par2 + o.par2,
        }
    }
}

/// Monte Carlo ⟨B⊥²⟩ and ⟨B∥²⟩ over the nearest-neighbour distance (beyond
/// `r_min`) and a uniform orientation. Chunks use independent ChaCha streams
/// keyed by chunk index, so the result does not depend on the worker count.
pub fn coupling_second_moments(
    density_ppm: f64,
    r_min: f64,
    consts: &PhysicalConstants,
    mc: &MonteCarloConfig,
) -> Result<CouplingMoments> {
    let nn = nearest_neighbor_distance_stats(density_ppm)?;
    if !(r_min.is_finite() && r_min > 0.0) {
        return Err(invalid("r_min", "exclusion radius must be positive"));
    }
    if mc.samples < 2 {
        return Err(invalid("samples", "need at least 2 samples"));
    }
    let prefactor = consts.dipolar_prefactor();
    let chunks = mc.samples.div_ceil(MC_CHUNK);

    let run_chunk = |chunk: usize| -> Sums {
        let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
        rng.set_stream(chunk as u64);
        let n = MC_CHUNK.min(mc.samples - chunk * MC_CHUNK);
        let mut s = Sums::default();
        for _ in 0..n {
            let r = nn.sample_beyond(r_min, &mut rng);
            let b = prefactor / r.powi(3);
            let u: f64 = rng.random_range(-1.0..=1.0);
            let sin2 = 1.0 - u * u;
            let perp = (1.5 * b * sin2).powi(2);
            // sin 2Θ = 2 sinΘ cosΘ
            let par = 0.75 * 0.75 * b * b * 4.0 * u * u * sin2;
            s.perp += perp;
            s.perp2 += perp * perp;
            s.par += par;
            s.par2 += par * par;
        }
        s
    };

    let partials: Vec<Sums> = if mc.workers == 0 {
        (0..chunks).into_par_iter().map(run_chunk).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(mc.workers)
            .build()
            .map_err(|e| invalid("workers", e.to_string()))?;
        pool.install(|| (0..chunks).into_par_iter().map(run_chunk).collect())
    };
    // fixed-order reduction keeps the sum bit-reproducible
    let total = partials.into_iter().fold(Sums::default(), Sums::merge);

    let n = mc.samples as f64;
    let stderr = |sum: f64, sum2: f64| {
        let mean = sum / n;
        let var = (sum2 / n - mean * mean).max(0.0) * n / (n - 1.0);
        (mean, (var / n).sqrt())
    };
    let (perp, perp_se) = stderr(total.perp, total.perp2);
    let (par, par_se) = stderr(total.par, total.par2);
    let worst = (perp_se / perp).max(par_se / par);
    if !(worst <= mc.max_relative_stderr) {
        return Err(Error::MonteCarloPrecision {
            relative: worst,
            limit: mc.max_relative_stderr,
        });
    }
    Ok(CouplingMoments {
        b_perp_sq: perp,
        b_par_sq: par,
        b_perp_sq_stderr: perp_se,
        b_par_sq_stderr: par_se,
        samples: mc.samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_uniform_grid;
    use crate::units::angular_to_mhz;

    fn unit_geometry() -> BathGeometry {
        BathGeometry::from_ppm(50.0, 1.0, 0.25).unwrap()
    }

    #[test]
    fn hyperfine_constants() {
        let c = P1Constants::default();
        assert!((c.off_axis_a_z() * 1e-6 - 84.93).abs() < 0.01);
        assert!((c.off_axis_a_z() * 1e-6 - 85.0).abs() < 1.0);
        // (5·81.3 + 4·114)/9
        assert!((c.off_axis_a_x() * 1e-6 - 95.83).abs() < 0.01);
        assert_eq!(c.on_axis_fraction + c.off_axis_fraction(), 1.0);
        assert!(P1Constants::new(114e6, 81.3e6, 0.0).is_err());
    }

    #[test]
    fn allowed_lines_at_512_gauss() {
        let k = PhysicalConstants::default();
        let c = P1Constants::default();
        let lines = p1_line_positions(512.0, &k, &c).unwrap();
        assert_eq!(lines.len(), 9);
        let w0 = k.zeeman_frequency(512.0).unwrap();
        let on: Vec<f64> = lines
            .iter()
            .filter(|l| l.transition == Transition::Allowed && l.site == Site::OnAxis)
            .map(|l| angular_to_mhz(l.frequency - w0))
            .collect();
        assert_eq!(on.len(), 2);
        assert!(on.iter().any(|f| (f + 114.0).abs() < 1e-9));
        assert!(on.iter().any(|f| (f - 114.0).abs() < 1e-9));
    }

    #[test]
    fn disallowed_lines_approach_half_splitting() {
        let k = PhysicalConstants::default();
        let c = P1Constants::default();
        let w0 = k.zeeman_frequency(512.0).unwrap();
        let az = hz_to_angular(c.a_z);
        let lines = p1_line_positions(512.0, &k, &c).unwrap();
        let l1 = lines.iter().find(|l| l.label == "disallowed on-axis +A_z/2").unwrap();
        let approx = w0 + 0.5 * az;
        assert!(((l1.frequency - approx) / approx).abs() < 0.005);

        let c0 = P1Constants { a_x: 0.0, ..c };
        let lines = p1_line_positions(512.0, &k, &c0).unwrap();
        for l in lines
            .iter()
            .filter(|l| l.site == Site::OnAxis && l.transition == Transition::Disallowed)
        {
            let d = (l.frequency - w0).abs();
            assert!((d - 0.5 * az).abs() < 1e-6 * w0);
        }
    }

    #[test]
    fn low_field_rejected() {
        let r = p1_line_positions(50.0, &PhysicalConstants::default(), &P1Constants::default());
        assert!(matches!(r, Err(Error::FieldRegime { .. })));
    }

    #[test]
    fn spectral_density_integral_and_symmetry() {
        let k = PhysicalConstants::default();
        let c = P1Constants::default();
        let lines = p1_line_positions(512.0, &k, &c).unwrap();
        let outer = lines.iter().map(|l| l.frequency).fold(0.0, f64::max) + 30.0 * c.gamma_p1;
        let step = c.gamma_p1 / 8.0;
        let n = (2.0 * outer / step) as usize | 1;
        let grid = make_uniform_grid(-outer, outer, n).unwrap();
        let s = spectral_density(&grid, 512.0, &k, &c).unwrap();
        // each branch carries unit weight
        assert!((s.norm() / 2.0 - 1.0).abs() < 0.01, "{}", s.norm());
        let v = s.values();
        for i in 0..n {
            assert!((v[i] - v[n - 1 - i]).abs() <= 1e-9 * v[i].max(1e-300));
        }
    }

    #[test]
    fn narrow_lines_resolve_nine_centres_per_branch() {
        let k = PhysicalConstants::default();
        let c = P1Constants {
            gamma_p1: hz_to_angular(1e4),
            ..P1Constants::default()
        };
        let w0 = k.zeeman_frequency(512.0).unwrap();
        let lo = w0 - hz_to_angular(150e6);
        let hi = w0 + hz_to_angular(150e6);
        let grid = make_uniform_grid(lo, hi, 300_001).unwrap();
        let s = spectral_density(&grid, 512.0, &k, &c).unwrap();
        let v = s.values();
        let maxima = (1..v.len() - 1)
            .filter(|&i| v[i] > v[i - 1] && v[i] >= v[i + 1])
            .count();
        assert_eq!(maxima, 9);
    }

    #[test]
    fn spectral_norm_invariant_under_field_shift() {
        let k = PhysicalConstants::default();
        let c = P1Constants::default();
        let grid = make_uniform_grid(hz_to_angular(1.0e9), hz_to_angular(1.9e9), 400_001).unwrap();
        let a = spectral_density(&grid, 500.0, &k, &c).unwrap().norm();
        let b = spectral_density(&grid, 520.0, &k, &c).unwrap().norm();
        assert!((a / b - 1.0).abs() < 1e-3, "{a} {b}");
    }

    #[test]
    fn offset_spectrum_convolves_to_rate_profile() {
        // Lorentzian ⊛ Lorentzian: S₀ ⊛ G = πΓ₂ · Γ₁ on the Ω₀ axis
        let k = PhysicalConstants::default();
        let c = P1Constants::default();
        let g = unit_geometry();
        let gamma2 = hz_to_angular(5e6);
        let step = hz_to_angular(0.1e6);
        let half = 40_000i64;
        let xs: Vec<f64> = (-half..=half).map(|i| i as f64 * step).collect();
        let s = offset_spectral_density(&xs, &c, Some(&g)).unwrap();
        for om in [0.0, hz_to_angular(30e6), hz_to_angular(-85e6), hz_to_angular(114e6)] {
            let conv: f64 = xs
                .iter()
                .zip(s.values())
                .map(|(x, v)| v * crate::KernelShape::Lorentzian.eval(gamma2, om - x))
                .sum::<f64>()
                * step;
            let w0 = 0.5 * (k.d_angular() - om);
            let rate = gamma1_analytic(w0, &k, &c, &g, gamma2);
            assert!((conv / (PI * gamma2 * rate) - 1.0).abs() < 0.01, "{om}");
        }
    }

    #[test]
    fn analytic_rate_vanishes_without_coupling() {
        let k = PhysicalConstants::default();
        let c = P1Constants::default();
        let g = BathGeometry::from_ppm(50.0, 0.0, 0.0).unwrap();
        for b in [480.0, 512.5, 540.0] {
            assert_eq!(gamma1_analytic(k.zeeman_frequency(b).unwrap(), &k, &c, &g, 1e7), 0.0);
        }
    }

    #[test]
    fn theory_peaks_layout() {
        let k = PhysicalConstants::default();
        let c = P1Constants::default();
        let peaks = theory_peaks(&k, &c, hz_to_angular(5e6));
        assert_eq!(peaks.len(), 9);
        let allowed: Vec<f64> = peaks
            .iter()
            .filter(|p| p.transition == Transition::Allowed)
            .map(|p| p.field_g)
            .collect();
        assert_eq!(allowed.len(), 5);
        let centre = allowed[2];
        assert!((centre - 512.5).abs() < 1e-9);
        assert!((centre - allowed[0] - 114.0 / 5.6).abs() < 1e-9);
        assert!((allowed[3] - centre - 84.93 / 5.6).abs() < 0.01);
        // FWHM 2(Γ₂+Γ_P1) = 2π·12 MHz in Ω₀
        assert!((angular_to_mhz(peaks[0].fwhm) - 12.0).abs() < 1e-9);
        assert!((peaks[0].fwhm_g - 12.0 / 5.6).abs() < 1e-9);
    }

    #[test]
    fn bath_model_peak_rescaling() {
        let k = PhysicalConstants::default();
        let m = BathModel::new(k, P1Constants::default(), unit_geometry(), hz_to_angular(5e6))
            .unwrap()
            .with_peak_rate(1e5)
            .unwrap();
        assert!((m.gamma1(k.resonance_field()) - 1e5).abs() < 1e-6);
        assert!(m.gamma1(481.3) < 0.2e5);
    }

    #[test]
    fn nearest_neighbor_mean_at_50_ppm() {
        let nn = nearest_neighbor_distance_stats(50.0).unwrap();
        let mean_nm = nn.mean() * 1e9;
        assert!((mean_nm - 2.7).abs() < 0.05 * 2.7, "{mean_nm}");
        let nn8 = NearestNeighbor::new(8.0 * nn.density_n).unwrap();
        assert!((nn8.mean() * 2.0 / nn.mean() - 1.0).abs() < 1e-12);
        assert!(nearest_neighbor_distance_stats(0.0).is_err());
    }

    #[test]
    fn nearest_neighbor_pdf_is_cdf_derivative() {
        let nn = nearest_neighbor_distance_stats(50.0).unwrap();
        for r in [0.5e-9, 1e-9, 2.7e-9, 5e-9] {
            let h = 1e-15;
            let d = (nn.cdf(r + h) - nn.cdf(r - h)) / (2.0 * h);
            assert!((d / nn.pdf(r) - 1.0).abs() < 1e-5);
        }
        assert_eq!(nn.cdf(0.0), 0.0);
    }

    #[test]
    fn angular_average_of_sin4() {
        // ⟨sin⁴Θ⟩ over the sphere = ½∫(1−u²)²du on [−1, 1]
        let n = 200_000;
        let h = 2.0 / n as f64;
        let avg: f64 = (0..n)
            .map(|i| {
                let u = -1.0 + (i as f64 + 0.5) * h;
                (1.0 - u * u).powi(2)
            })
            .sum::<f64>()
            * h
            / 2.0;
        assert!((avg - 8.0 / 15.0).abs() < 1e-9);
    }

    #[test]
    fn coupling_moments_reproducible_and_worker_independent() {
        let k = PhysicalConstants::default();
        let mc = MonteCarloConfig {
            samples: 1 << 22,
            seed: 7,
            workers: 1,
            ..MonteCarloConfig::default()
        };
        let a = coupling_second_moments(50.0, DEFAULT_R_MIN, &k, &mc).unwrap();
        let b = coupling_second_moments(50.0, DEFAULT_R_MIN, &k, &MonteCarloConfig { workers: 3, ..mc }).unwrap();
        assert_eq!(a, b);
        assert!(a.b_perp_sq > 0.0 && a.b_par_sq > 0.0);
        let ratio = a.b_par_sq / a.b_perp_sq;
        assert!((ratio - 0.25).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn coupling_moments_budget_failure() {
        let k = PhysicalConstants::default();
        let mc = MonteCarloConfig {
            samples: 100,
            seed: 1,
            workers: 1,
            max_relative_stderr: 1e-4,
        };
        let r = coupling_second_moments(50.0, DEFAULT_R_MIN, &k, &mc);
        assert!(matches!(r, Err(Error::MonteCarloPrecision { .. })));
    }
}
