//! Spectral reconstruction on the Ω₀ = 2πD − 2ω₀ axis.
//!
//! The rate profile is modelled as M = S₀ ⊛ G and inverted with an
//! iterated Wiener filter. Transforms are unnormalised forward, 1/N inverse.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{invalid, Error, Result};
use crate::filters::FilterKernel;
use crate::forward::RateProfile;
use crate::grid::{make_uniform_grid, uniform_spacing, SpectralDensity};
use crate::units::PhysicalConstants;

/// Smallest sweep accepted for reconstruction.
pub const MIN_POINTS: usize = 16;

/// Rate profile resampled onto a uniform ascending Ω₀ grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvolutionProblem {
    /// Ω₀ values, rad/s.
    pub omega0: Vec<f64>,
    pub signal: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl ConvolutionProblem {
    pub fn spacing(&self) -> f64 {
        (self.omega0[self.omega0.len() - 1] - self.omega0[0]) / (self.omega0.len() - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.omega0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega0.is_empty()
    }
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let j = xs.partition_point(|v| *v <= x);
    if j == 0 {
        return ys[0];
    }
    if j >= xs.len() {
        return ys[xs.len() - 1];
    }
    let (x0, x1) = (xs[j - 1], xs[j]);
    let w = (x - x0) / (x1 - x0);
    ys[j - 1] * (1.0 - w) + ys[j] * w
}

/// Maps each field to Ω₀ = 2πD − 2γB₀, sorts ascending and resamples onto
/// a uniform grid with the same number of points.
pub fn to_omega0_domain(profile: &RateProfile, consts: &PhysicalConstants) -> Result<ConvolutionProblem> {
    let n = profile.sweep.len();
    if n < MIN_POINTS {
        return Err(invalid(
            "profile",
            format!("need at least {MIN_POINTS} field points, got {n}"),
        ));
    }
    let mut rows: Vec<(f64, f64, f64)> = profile
        .sweep
        .values()
        .iter()
        .zip(&profile.gamma1)
        .zip(&profile.gamma1_stderr)
        .map(|((b, g), e)| (consts.omega0_offset(*b), *g, *e))
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let xs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let gs: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let es: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let omega0 = make_uniform_grid(xs[0], xs[n - 1], n)?;
    let signal = omega0.iter().map(|&x| interp(&xs, &gs, x)).collect();
    let stderr = omega0.iter().map(|&x| interp(&xs, &es, x)).collect();
    Ok(ConvolutionProblem { omega0, signal, stderr })
}

fn check_kernel(kernel: &[f64]) -> Result<usize> {
    if kernel.len().is_multiple_of(2) {
        return Err(Error::GridMismatch("kernel needs an odd number of samples".into()));
    }
    Ok(kernel.len() / 2)
}

/// Discrete linear convolution with a centred odd-length kernel, evaluated
/// on the signal's own support ("same" size). O(N·K).
pub fn convolve_direct(signal: &[f64], kernel: &[f64]) -> Result<Vec<f64>> {
    let k = check_kernel(kernel)? as isize;
    let n = signal.len() as isize;
    Ok((0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (kj, g) in kernel.iter().enumerate() {
                let j = i - (kj as isize - k);
                if (0..n).contains(&j) {
                    acc += g * signal[j as usize];
                }
            }
            acc
        })
        .collect())
}

pub fn fft(x: &[Complex64]) -> Vec<Complex64> {
    let mut buf = x.to_vec();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

/// Inverse transform including the 1/N factor.
pub fn ifft(x: &[Complex64]) -> Vec<Complex64> {
    let mut buf = x.to_vec();
    FftPlanner::new().plan_fft_inverse(buf.len()).process(&mut buf);
    let scale = 1.0 / buf.len() as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
    buf
}

fn to_complex(x: &[f64]) -> Vec<Complex64> {
    x.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

/// Kernel laid out circularly in a length-`p` buffer with its centre at 0.
fn wrap_kernel(kernel: &[f64], p: usize) -> Vec<Complex64> {
    let k = kernel.len() / 2;
    let mut out = vec![Complex64::new(0.0, 0.0); p];
    for (i, g) in kernel.iter().enumerate() {
        let off = i as isize - k as isize;
        out[off.rem_euclid(p as isize) as usize].re += g;
    }
    out
}

/// Same result as [`convolve_direct`] through zero-padded transforms.
pub fn convolve_fft(signal: &[f64], kernel: &[f64]) -> Result<Vec<f64>> {
    let k = check_kernel(kernel)?;
    let p = (signal.len() + 2 * k).next_power_of_two();
    let mut s = to_complex(signal);
    s.resize(p, Complex64::new(0.0, 0.0));
    let fs = fft(&s);
    let fg = fft(&wrap_kernel(kernel, p));
    let prod: Vec<Complex64> = fs.iter().zip(&fg).map(|(a, b)| a * b).collect();
    Ok(ifft(&prod).into_iter().take(signal.len()).map(|c| c.re).collect())
}

/// S ⊛ G on the grid of `s`. The kernel must be centred with the same spacing.
pub fn convolve(s: &SpectralDensity, g: &FilterKernel) -> Result<Vec<f64>> {
    let step = g.centred_spacing()?;
    if g.len() > 1 && ((step - s.spacing()) / s.spacing()).abs() > 1e-6 {
        return Err(Error::GridMismatch(format!(
            "kernel spacing {step:.6e} differs from spectrum spacing {:.6e}",
            s.spacing()
        )));
    }
    convolve_fft(s.values(), g.samples())
}

/// Noise power |F(η)|² per transform bin.
#[derive(Debug, Clone, PartialEq)]
pub enum NoisePsd {
    Flat(f64),
    PerBin(Vec<f64>),
}

impl NoisePsd {
    fn at(&self, i: usize) -> f64 {
        match self {
            NoisePsd::Flat(v) => *v,
            NoisePsd::PerBin(v) => v[i],
        }
    }

    fn validate(&self, p: usize) -> Result<()> {
        let ok = match self {
            NoisePsd::Flat(v) => *v >= 0.0 && v.is_finite(),
            NoisePsd::PerBin(v) => v.len() == p && v.iter().all(|x| *x >= 0.0 && x.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid("noise_psd", format!("must be finite, >= 0 and cover {p} bins")))
        }
    }

    fn is_zero(&self) -> bool {
        match self {
            NoisePsd::Flat(v) => *v == 0.0,
            NoisePsd::PerBin(v) => v.iter().all(|x| *x == 0.0),
        }
    }

    /// Flat level from fit errors: median(stderr²) scaled by the transform length.
    pub fn from_stderr(stderr: &[f64], transform_len: usize) -> Self {
        let mut v: Vec<f64> = stderr.iter().map(|e| e * e).filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return NoisePsd::Flat(0.0);
        }
        v.sort_by(f64::total_cmp);
        let med = if !v.len().is_multiple_of(2) {
            v[v.len() / 2]
        } else {
            0.5 * (v[v.len() / 2 - 1] + v[v.len() / 2])
        };
        NoisePsd::Flat(med * transform_len as f64)
    }
}

/// Bin-wise H = F(G)*|F(S)|² / (|F(G)|²|F(S)|² + N). Bins where the
/// denominator vanishes get H = 0.
pub fn wiener_transfer(fg: &[Complex64], fs: &[Complex64], noise: &NoisePsd) -> Result<Vec<Complex64>> {
    if fg.len() != fs.len() {
        return Err(Error::GridMismatch(
            "kernel and spectrum transforms differ in length".into(),
        ));
    }
    noise.validate(fg.len())?;
    if noise.is_zero() {
        let max = fg.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let min = fg.iter().map(|c| c.norm()).fold(f64::INFINITY, f64::min);
        if !(max > 0.0) || min < 1e-12 * max {
            return Err(Error::IllPosed {
                ratio: if max > 0.0 { min / max } else { 0.0 },
            });
        }
    }
    Ok(fg
        .iter()
        .zip(fs)
        .enumerate()
        .map(|(i, (g, s))| {
            let ps = s.norm_sqr();
            let den = g.norm_sqr() * ps + noise.at(i);
            if den > 0.0 {
                g.conj() * (ps / den)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect())
}

/// Transfer function for kernel `g` and spectrum estimate `s0`, both zero
/// padded to the next power of two covering the linear convolution.
pub fn wiener_filter(g: &FilterKernel, s0: &SpectralDensity, noise: &NoisePsd) -> Result<Vec<Complex64>> {
    g.centred_spacing()?;
    let p = (s0.len() + 2 * (g.len() / 2)).next_power_of_two();
    let mut s = to_complex(s0.values());
    s.resize(p, Complex64::new(0.0, 0.0));
    wiener_transfer(&fft(&wrap_kernel(g.samples(), p)), &fft(&s), noise)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeconvOptions {
    pub max_iter: usize,
    /// Relative L2 change between iterates that stops the loop.
    pub tol: f64,
    /// Fraction of bins at each end given a raised-cosine taper.
    pub taper_fraction: f64,
    pub noise: NoisePsd,
}

impl Default for DeconvOptions {
    fn default() -> Self {
        Self {
            max_iter: 10,
            tol: 1e-4,
            taper_fraction: 0.05,
            noise: NoisePsd::Flat(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeconvDiagnostics {
    pub iterations: usize,
    /// Relative L2 change after each iteration.
    pub changes: Vec<f64>,
    pub converged: bool,
    pub diverged: bool,
    pub transform_len: usize,
    pub fill_value: f64,
    pub taper_bins: usize,
    /// min |F(G)| / max |F(G)|.
    pub kernel_conditioning: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deconvolution {
    /// Estimate with negatives floored at 0.
    pub spectrum: SpectralDensity,
    pub diagnostics: DeconvDiagnostics,
}

/// Transform length used by [`deconvolve_iterative`] for `n` samples and a
/// kernel of `kernel_len` samples.
pub fn transform_len(n: usize, kernel_len: usize) -> usize {
    (n + 2 * (kernel_len / 2)).next_power_of_two()
}

/// Iterated Wiener deconvolution of `m` sampled on the uniform grid `omega`.
///
/// The signal is tapered over the outer `taper_fraction` bins towards the
/// mean of the two edge windows and padded with that value. Iteration
/// starts from S⁽⁰⁾ = M and rebuilds H from each new estimate. A relative
/// change that grows three times in a row stops the loop with `diverged` set.
pub fn deconvolve_iterative(omega: &[f64], m: &[f64], g: &FilterKernel, opts: &DeconvOptions) -> Result<Deconvolution> {
    let n = m.len();
    if omega.len() != n {
        return Err(Error::GridMismatch(format!(
            "{n} samples on a {}-point grid",
            omega.len()
        )));
    }
    if n < 2 {
        return Err(invalid("m", "need at least 2 samples"));
    }
    let step = uniform_spacing(omega, 1e-6)?;
    let kstep = g.centred_spacing()?;
    if g.len() > 1 && ((kstep - step) / step).abs() > 1e-6 {
        return Err(Error::GridMismatch(format!(
            "kernel spacing {kstep:.6e} differs from signal spacing {step:.6e}"
        )));
    }
    if !(0.0..0.5).contains(&opts.taper_fraction) {
        return Err(invalid("taper_fraction", "must lie in [0, 0.5)"));
    }
    if !(opts.tol > 0.0) {
        return Err(invalid("tol", "must be > 0"));
    }
    if opts.max_iter == 0 {
        return Err(invalid("max_iter", "must be >= 1"));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(invalid("m", "signal contains non-finite values"));
    }

    let p = transform_len(n, g.len());
    let nt = (opts.taper_fraction * n as f64).floor() as usize;
    let fill = if nt == 0 {
        0.5 * (m[0] + m[n - 1])
    } else {
        let head = m[..nt].iter().sum::<f64>() / nt as f64;
        let tail = m[n - nt..].iter().sum::<f64>() / nt as f64;
        0.5 * (head + tail)
    };
    let mut padded = vec![Complex64::new(fill, 0.0); p];
    for (i, v) in m.iter().enumerate() {
        let w = if i < nt {
            0.5 * (1.0 - (std::f64::consts::PI * i as f64 / nt as f64).cos())
        } else if i >= n - nt {
            0.5 * (1.0 - (std::f64::consts::PI * (n - 1 - i) as f64 / nt as f64).cos())
        } else {
            1.0
        };
        padded[i].re = fill + (v - fill) * w;
    }

    let fg = fft(&wrap_kernel(g.samples(), p));
    let gmax = fg.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let gmin = fg.iter().map(|c| c.norm()).fold(f64::INFINITY, f64::min);
    let fm = fft(&padded);

    let norm = |v: &[Complex64]| v.iter().map(|c| c.re * c.re).sum::<f64>().sqrt();
    let mut est = padded.clone();
    let mut changes = Vec::new();
    let mut converged = false;
    let mut diverged = false;
    let mut growth = 0;
    for _ in 0..opts.max_iter {
        let h = wiener_transfer(&fg, &fft(&est), &opts.noise)?;
        let prod: Vec<Complex64> = h.iter().zip(&fm).map(|(a, b)| a * b).collect();
        let next: Vec<Complex64> = ifft(&prod).into_iter().map(|c| Complex64::new(c.re, 0.0)).collect();
        let diff: Vec<Complex64> = next.iter().zip(&est).map(|(a, b)| a - b).collect();
        let base = norm(&est);
        let change = if base > 0.0 { norm(&diff) / base } else { norm(&diff) };
        if let Some(prev) = changes.last() {
            if change > *prev {
                growth += 1;
            } else {
                growth = 0;
            }
        }
        changes.push(change);
        est = next;
        if change < opts.tol {
            converged = true;
            break;
        }
        if growth >= 3 {
            diverged = true;
            break;
        }
    }

    let values: Vec<f64> = est[..n].iter().map(|c| c.re.max(0.0)).collect();
    let spectrum = SpectralDensity::new(omega.to_vec(), values)?;
    Ok(Deconvolution {
        spectrum,
        diagnostics: DeconvDiagnostics {
            iterations: changes.len(),
            changes,
            converged,
            diverged,
            transform_len: p,
            fill_value: fill,
            taper_bins: nt,
            kernel_conditioning: if gmax > 0.0 { gmin / gmax } else { 0.0 },
        },
    })
}
