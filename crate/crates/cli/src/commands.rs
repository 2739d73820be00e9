//! Subcommand implementations. Each writes its files into `out` and returns
//! the in-memory results alongside the paths written.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use nvesr::deconv::{
    deconvolve_iterative, to_omega0_domain, transform_len, ConvolutionProblem, Deconvolution, NoisePsd,
};
use nvesr::forward::{extract_rates, subtract_detuned_baseline, synthesize_record, MeasurementRecord, RateProfile};
use nvesr::grid::make_uniform_grid;
use nvesr::p1bath::{
    coupling_second_moments, offset_spectral_density, theory_peaks, BathGeometry, BathModel, CouplingMoments,
    TheoryPeak,
};
use nvesr::units::angular_to_mhz;
use nvesr::{FilterKernel, SpectralDensity};

use crate::analysis::{find_peaks, Peak};
use crate::config::RunConfig;
use crate::error::CliError;
use crate::io;
use crate::svg::{line_chart, Series};

/// Peaks below this fraction of the maximum are left out of diagnostics.
const PEAK_THRESHOLD: f64 = 0.05;

/// Runs `f` on a pool of `workers` threads, or the global pool for 0.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("workers: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone)]
pub struct Bath {
    pub model: BathModel,
    pub moments: CouplingMoments,
}

/// Monte Carlo couplings for the configured density, then the rate model
/// scaled to the configured peak.
pub fn build_bath(cfg: &RunConfig) -> Result<Bath, CliError> {
    let consts = cfg.constants()?;
    let moments = coupling_second_moments(cfg.density_ppm, cfg.r_min_nm * 1e-9, &consts, &cfg.monte_carlo())?;
    let geometry = BathGeometry::from_ppm(cfg.density_ppm, moments.b_perp_sq, moments.b_par_sq)?;
    let mut model = BathModel::new(consts, cfg.p1()?, geometry, cfg.gamma2())?;
    if let Some(peak) = cfg.peak_gamma1_per_s {
        model = model.with_peak_rate(peak)?;
    }
    Ok(Bath { model, moments })
}

fn maybe_svg(
    files: &mut Vec<PathBuf>,
    enabled: bool,
    path: PathBuf,
    svg: impl FnOnce() -> String,
) -> Result<(), CliError> {
    if enabled {
        io::write_text(&path, &svg())?;
        files.push(path);
    }
    Ok(())
}

pub fn format_peak_table(peaks: &[TheoryPeak]) -> String {
    let mut s = format!(
        "{:>10}  {:>14}  {:>10}  {}\n",
        "field_G", "frequency_MHz", "fwhm_MHz", "label"
    );
    for p in peaks {
        let _ = writeln!(
            s,
            "{:>10.3}  {:>14.3}  {:>10.3}  {}",
            p.field_g,
            angular_to_mhz(p.omega0),
            angular_to_mhz(p.fwhm),
            p.label
        );
    }
    s
}

#[derive(Debug, Clone)]
pub struct TheoryOutput {
    pub peaks: Vec<TheoryPeak>,
    /// Analytic Γ₁ on the sweep, zero stderr.
    pub profile: RateProfile,
    /// Offset-frame spectrum in the units of the deconvolved estimate.
    pub spectrum: SpectralDensity,
    pub kernel: FilterKernel,
    pub table: String,
    pub files: Vec<PathBuf>,
}

pub fn theory_with(cfg: &RunConfig, bath: &Bath, out: &Path, svg: bool) -> Result<TheoryOutput, CliError> {
    let consts = cfg.constants()?;
    let m = &bath.model;
    let sweep = cfg.sweep()?;
    let gamma1 = m.profile(&sweep);
    let n = sweep.len();
    let profile = io::quantize_profile(&RateProfile::new(
        sweep.clone(),
        gamma1,
        vec![0.0; n],
        cfg.phonon_rate_per_s,
    )?)?;

    let (w_lo, w_hi) = (
        consts.omega0_offset(cfg.sweep_max_g),
        consts.omega0_offset(cfg.sweep_min_g),
    );
    let omega = make_uniform_grid(w_lo, w_hi, n)?;
    let raw = offset_spectral_density(&omega, &m.p1, Some(&m.geometry))?;
    let scale = m.rate_scale / (PI * m.gamma2);
    let spectrum = SpectralDensity::new(omega.clone(), raw.values().iter().map(|v| v * scale).collect())?;
    let kernel = FilterKernel::symmetric(cfg.kernel_shape()?, m.gamma2, omega[1] - omega[0], n - 1)?;
    let peaks = theory_peaks(&consts, &m.p1, m.gamma2);

    let mut files = Vec::new();
    for (name, write) in [
        ("theory_profile.csv", 0),
        ("theory_spectrum.csv", 1),
        ("theory_peaks.csv", 2),
        ("kernel.csv", 3),
    ] {
        let path = out.join(name);
        match write {
            0 => {
                io::write_profile(&path, &profile)?;
                files.push(io::sidecar(&path));
            }
            1 => io::write_spectrum(&path, &spectrum)?,
            2 => io::write_theory_peaks(&path, &peaks)?,
            _ => io::write_kernel(&path, &kernel)?,
        }
        files.push(path);
    }
    maybe_svg(&mut files, svg, out.join("theory_profile.svg"), || {
        line_chart(
            "Analytic relaxation rate",
            "field (G)",
            "gamma1 (1/s)",
            &[Series {
                name: "gamma1",
                x: profile.sweep.values(),
                y: &profile.gamma1,
            }],
        )
    })?;
    maybe_svg(&mut files, svg, out.join("theory_spectrum.svg"), || {
        let f: Vec<f64> = omega.iter().map(|w| angular_to_mhz(*w)).collect();
        line_chart(
            "Bath spectral density",
            "frequency offset (MHz)",
            "density",
            &[Series {
                name: "theory",
                x: &f,
                y: spectrum.values(),
            }],
        )
    })?;
    Ok(TheoryOutput {
        table: format_peak_table(&peaks),
        peaks,
        profile,
        spectrum,
        kernel,
        files,
    })
}

pub fn cmd_theory(cfg: &RunConfig, out: &Path, svg: bool) -> Result<TheoryOutput, CliError> {
    with_workers(cfg.workers, || {
        let bath = build_bath(cfg)?;
        theory_with(cfg, &bath, out, svg)
    })?
}

#[derive(Debug, Clone)]
pub struct SimulateOutput {
    /// Record as written, numbers at CSV precision.
    pub record: MeasurementRecord,
    pub gamma1_true: Vec<f64>,
    pub files: Vec<PathBuf>,
}

pub fn simulate_with(cfg: &RunConfig, bath: &Bath, out: &Path, svg: bool) -> Result<SimulateOutput, CliError> {
    let sweep = cfg.sweep()?;
    let times = cfg.times()?;
    let gamma1_true = bath.model.profile(&sweep);
    let record = synthesize_record(
        &sweep,
        &times,
        &gamma1_true,
        cfg.phonon_rate_per_s,
        cfg.noise_sigma,
        cfg.seed,
    )?;
    let record = io::quantize_record(&record)?;
    let path = out.join("record.csv");
    io::write_record(&path, &record)?;
    let mut files = vec![path.clone(), io::sidecar(&path)];
    maybe_svg(&mut files, svg, out.join("record.svg"), || {
        let res = bath.model.constants.resonance_field();
        let near = (0..record.curves.len())
            .min_by(|&a, &b| {
                (record.curves[a].field_g - res)
                    .abs()
                    .total_cmp(&(record.curves[b].field_g - res).abs())
            })
            .unwrap_or(0);
        let t_ms: Vec<f64> = record.times.values().iter().map(|t| t * 1e3).collect();
        let (a, b) = (&record.curves[near], &record.curves[0]);
        let (na, nb) = (format!("{:.1} G", a.field_g), format!("{:.1} G", b.field_g));
        line_chart(
            "Decay curves",
            "dark time (ms)",
            "contrast",
            &[
                Series {
                    name: &na,
                    x: &t_ms,
                    y: &a.contrast,
                },
                Series {
                    name: &nb,
                    x: &t_ms,
                    y: &b.contrast,
                },
            ],
        )
    })?;
    Ok(SimulateOutput {
        record,
        gamma1_true,
        files,
    })
}

pub fn cmd_simulate(cfg: &RunConfig, out: &Path, svg: bool) -> Result<SimulateOutput, CliError> {
    with_workers(cfg.workers, || {
        let bath = build_bath(cfg)?;
        simulate_with(cfg, &bath, out, svg)
    })?
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    /// Profile as written, numbers at CSV precision.
    pub profile: RateProfile,
    pub files: Vec<PathBuf>,
}

pub fn fit_record(cfg: &RunConfig, record: &MeasurementRecord, out: &Path, svg: bool) -> Result<FitOutput, CliError> {
    let profile = extract_rates(record, cfg.phonon_mode(), &cfg.fit_options())?;
    let profile = io::quantize_profile(&profile)?;
    let path = out.join("profile.csv");
    io::write_profile(&path, &profile)?;
    let mut files = vec![path.clone(), io::sidecar(&path)];
    maybe_svg(&mut files, svg, out.join("profile.svg"), || {
        line_chart(
            "Fitted relaxation rate",
            "field (G)",
            "gamma1 (1/s)",
            &[Series {
                name: "gamma1",
                x: profile.sweep.values(),
                y: &profile.gamma1,
            }],
        )
    })?;
    Ok(FitOutput { profile, files })
}

pub fn cmd_fit(record_file: &Path, cfg: &RunConfig, out: &Path, svg: bool) -> Result<FitOutput, CliError> {
    let record = io::read_record(record_file)?;
    with_workers(cfg.workers, || fit_record(cfg, &record, out, svg))?
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub changes: Vec<f64>,
    pub converged: bool,
    pub diverged: bool,
    pub max_iter: usize,
    pub tol: f64,
    pub transform_len: usize,
    pub taper_fraction: f64,
    pub taper_bins: usize,
    pub fill_value: f64,
    pub kernel_shape: String,
    pub kernel_gamma2_mhz: f64,
    pub kernel_conditioning: f64,
    pub noise_psd: f64,
    pub noise_psd_source: String,
    pub baseline_offset_per_s: Option<f64>,
    pub grid_spacing_mhz: f64,
    pub peaks_mhz: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DeconvOutput {
    /// Rate profile on the uniform Ω₀ grid that was inverted.
    pub problem: ConvolutionProblem,
    pub kernel: FilterKernel,
    pub result: Deconvolution,
    /// Estimate divided by the grid spacing, as written to the CSV.
    pub spectrum: SpectralDensity,
    pub peaks: Vec<Peak>,
    pub diagnostics: Diagnostics,
    pub files: Vec<PathBuf>,
}

impl DeconvOutput {
    pub fn diverged(&self) -> bool {
        self.result.diagnostics.diverged
    }

    /// Sample positions in MHz.
    pub fn frequency_mhz(&self) -> Vec<f64> {
        self.problem.omega0.iter().map(|w| angular_to_mhz(*w)).collect()
    }
}

pub fn deconvolve_profile(
    cfg: &RunConfig,
    profile: &RateProfile,
    out: &Path,
    svg: bool,
) -> Result<DeconvOutput, CliError> {
    let consts = cfg.constants()?;
    let (input, baseline) = if cfg.subtract_baseline {
        let window = cfg.baseline_window_g.map(|[a, b]| (a, b));
        let sub = subtract_detuned_baseline(profile, window)?;
        let offset = profile
            .gamma1
            .iter()
            .zip(&sub.gamma1)
            .map(|(a, b)| a - b)
            .fold(f64::INFINITY, f64::min);
        (sub, Some(offset))
    } else {
        (profile.clone(), None)
    };
    let problem = to_omega0_domain(&input, &consts)?;
    let n = problem.len();
    let step = problem.spacing();
    let kernel = FilterKernel::symmetric(cfg.kernel_shape()?, cfg.gamma2(), step, n - 1)?;
    let p = transform_len(n, kernel.len());
    let auto = NoisePsd::from_stderr(&problem.stderr, p);
    let opts = cfg.deconv_options(auto);
    let noise_level = match &opts.noise {
        NoisePsd::Flat(v) => *v,
        NoisePsd::PerBin(v) => v.iter().sum::<f64>() / v.len() as f64,
    };
    let result = deconvolve_iterative(&problem.omega0, &problem.signal, &kernel, &opts)?;
    let spectrum = SpectralDensity::new(
        problem.omega0.clone(),
        result
            .spectrum
            .values()
            .iter()
            .map(|v| io::quantize(v / step))
            .collect(),
    )?;
    let freq: Vec<f64> = problem.omega0.iter().map(|w| angular_to_mhz(*w)).collect();
    let peaks = find_peaks(&freq, spectrum.values(), PEAK_THRESHOLD);
    let d = &result.diagnostics;
    let diagnostics = Diagnostics {
        iterations: d.iterations,
        changes: d.changes.clone(),
        converged: d.converged,
        diverged: d.diverged,
        max_iter: opts.max_iter,
        tol: opts.tol,
        transform_len: d.transform_len,
        taper_fraction: opts.taper_fraction,
        taper_bins: d.taper_bins,
        fill_value: d.fill_value,
        kernel_shape: kernel.shape().name().into(),
        kernel_gamma2_mhz: cfg.gamma2_mhz,
        kernel_conditioning: d.kernel_conditioning,
        noise_psd: noise_level,
        noise_psd_source: if cfg.noise_psd.is_some() {
            "config"
        } else {
            "fit stderr"
        }
        .into(),
        baseline_offset_per_s: baseline,
        grid_spacing_mhz: angular_to_mhz(step),
        peaks_mhz: peaks.iter().map(|p| p.position).collect(),
    };

    let path = out.join("spectrum.csv");
    io::write_spectrum(&path, &spectrum)?;
    let dpath = out.join("diagnostics.json");
    io::write_json_file(&dpath, &diagnostics)?;
    let mut files = vec![path, dpath];
    maybe_svg(&mut files, svg, out.join("spectrum.svg"), || {
        let peak = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let (ps, pm) = (peak(spectrum.values()), peak(&problem.signal));
        let s: Vec<f64> = spectrum.values().iter().map(|v| v / ps).collect();
        let m: Vec<f64> = problem.signal.iter().map(|v| v / pm).collect();
        line_chart(
            "Reconstructed spectrum (peak-normalised)",
            "frequency offset (MHz)",
            "relative density",
            &[
                Series {
                    name: "measured rate",
                    x: &freq,
                    y: &m,
                },
                Series {
                    name: "deconvolved",
                    x: &freq,
                    y: &s,
                },
            ],
        )
    })?;
    Ok(DeconvOutput {
        problem,
        kernel,
        result,
        spectrum,
        peaks,
        diagnostics,
        files,
    })
}

pub fn cmd_deconvolve(profile_file: &Path, cfg: &RunConfig, out: &Path, svg: bool) -> Result<DeconvOutput, CliError> {
    let profile = io::read_profile(profile_file)?;
    deconvolve_profile(cfg, &profile, out, svg)
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub config: RunConfig,
    pub seeds: BTreeMap<String, u64>,
    pub monte_carlo_samples: usize,
    pub rate_scale: f64,
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub theory: TheoryOutput,
    pub simulate: SimulateOutput,
    pub fit: FitOutput,
    pub deconv: DeconvOutput,
    pub manifest: Manifest,
}

pub fn cmd_pipeline(cfg: &RunConfig, out: &Path, svg: bool) -> Result<PipelineOutput, CliError> {
    with_workers(cfg.workers, || {
        let bath = build_bath(cfg)?;
        let theory = theory_with(cfg, &bath, out, svg)?;
        let simulate = simulate_with(cfg, &bath, out, svg)?;
        let fit = fit_record(cfg, &simulate.record, out, svg)?;
        let deconv = deconvolve_profile(cfg, &fit.profile, out, svg)?;

        let mut files = BTreeMap::new();
        for f in theory
            .files
            .iter()
            .chain(&simulate.files)
            .chain(&fit.files)
            .chain(&deconv.files)
        {
            let name = f
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            files.insert(name, io::sha256_file(f)?);
        }
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: cfg.hash(),
            config: cfg.clone(),
            seeds: BTreeMap::from([("monte_carlo".to_string(), cfg.seed), ("noise".to_string(), cfg.seed)]),
            monte_carlo_samples: bath.moments.samples,
            rate_scale: bath.model.rate_scale,
            files,
        };
        io::write_json_file(&out.join("manifest.json"), &manifest)?;
        Ok(PipelineOutput {
            theory,
            simulate,
            fit,
            deconv,
            manifest,
        })
    })?
}
