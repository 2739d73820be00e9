//! CSV and JSON serialisation of the pipeline's data products.
//!
//! Numbers are written as `{:.8e}` (9 significant digits). Values passed
//! through [`quantize`] survive a write/read cycle exactly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nvesr::forward::{MeasurementRecord, RateProfile};
use nvesr::p1bath::{TheoryPeak, Transition};
use nvesr::units::{angular_to_hz, angular_to_mhz, mhz_to_angular};
use nvesr::{DecayCurve, FieldSweep, FilterKernel, SpectralDensity, TimeGrid};

use crate::error::CliError;

pub fn fmt(x: f64) -> String {
    format!("{x:.8e}")
}

/// Rounds to the precision of the CSV representation.
pub fn quantize(x: f64) -> f64 {
    fmt(x).parse().expect("formatted float parses")
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, format!("line {}: {e}", e.line())))
}

/// Numeric rows of a CSV with exactly the given header, each tagged with its
/// 1-based line number.
fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<(u64, Vec<f64>)>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    let found: Vec<String> = reader
        .headers()
        .map_err(|e| io_err(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if found != header {
        return Err(io_err(
            path,
            format!("expected header `{}`, found `{}`", header.join(","), found.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(io_err(
                path,
                format!(
                    "row at line {line}: expected {} fields, found {}",
                    header.len(),
                    rec.len()
                ),
            ));
        }
        let vals = rec
            .iter()
            .zip(header)
            .map(|(s, col)| {
                s.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    io_err(
                        path,
                        format!("row at line {line}: column {col}: `{s}` is not a finite number"),
                    )
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push((line, vals));
    }
    if rows.is_empty() {
        return Err(io_err(path, "no data rows"));
    }
    Ok(rows)
}

/// Sidecar path: same stem, `.json` extension.
pub fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub phonon_rate_per_s: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub fields_g: Vec<f64>,
    pub times_s: Vec<f64>,
}

/// Copy of `record` with every number rounded to its CSV precision.
pub fn quantize_record(record: &MeasurementRecord) -> Result<MeasurementRecord, CliError> {
    let sweep = FieldSweep::new(record.sweep.values().iter().map(|b| quantize(*b)).collect())?;
    let times = Arc::new(TimeGrid::new(
        record.times.values().iter().map(|t| quantize(*t)).collect(),
    )?);
    let curves = record
        .curves
        .iter()
        .zip(sweep.values())
        .map(|(c, b)| {
            DecayCurve::new(
                *b,
                times.clone(),
                c.contrast.iter().map(|v| quantize(*v)).collect(),
                c.noise_sigma,
            )
        })
        .collect::<nvesr::Result<Vec<_>>>()?;
    Ok(MeasurementRecord::new(
        sweep,
        times,
        curves,
        record.phonon_rate_r,
        record.noise_sigma,
        record.seed,
    )?)
}

/// Long-form CSV `field_G,time_s,contrast` plus a JSON sidecar.
pub fn write_record(path: &Path, record: &MeasurementRecord) -> Result<(), CliError> {
    let mut s = String::from("field_G,time_s,contrast\n");
    for c in &record.curves {
        for (t, v) in c.times.values().iter().zip(&c.contrast) {
            let _ = writeln!(s, "{},{},{}", fmt(c.field_g), fmt(*t), fmt(*v));
        }
    }
    write_text(path, &s)?;
    let meta = RecordMeta {
        phonon_rate_per_s: record.phonon_rate_r,
        noise_sigma: record.noise_sigma,
        seed: record.seed,
        fields_g: record.sweep.values().to_vec(),
        times_s: record.times.values().to_vec(),
    };
    write_json(&sidecar(path), &meta)
}

/// Reads a record CSV. Rows are grouped by consecutive field value; every
/// group must repeat the first group's dark times. The sidecar, when
/// present, supplies R, σ and the seed and must agree with the grids.
pub fn read_record(path: &Path) -> Result<MeasurementRecord, CliError> {
    let rows = read_rows(path, &["field_G", "time_s", "contrast"])?;
    let mut fields: Vec<f64> = Vec::new();
    let mut blocks: Vec<Vec<(u64, f64, f64)>> = Vec::new();
    for (line, v) in rows {
        if fields.last() != Some(&v[0]) {
            fields.push(v[0]);
            blocks.push(Vec::new());
        }
        blocks.last_mut().expect("block exists").push((line, v[1], v[2]));
    }
    let times: Vec<f64> = blocks[0].iter().map(|r| r.1).collect();
    for (b, block) in fields.iter().zip(&blocks) {
        if block.len() != times.len() {
            return Err(io_err(
                path,
                format!("field {b} G has {} dark times, expected {}", block.len(), times.len()),
            ));
        }
        if let Some(r) = block.iter().zip(&times).find(|(r, t)| r.1 != **t) {
            return Err(io_err(
                path,
                format!("row at line {}: dark time differs from the first curve", r.0 .0),
            ));
        }
    }
    let meta = if sidecar(path).exists() {
        let m: RecordMeta = read_json(&sidecar(path))?;
        if m.fields_g != fields || m.times_s != times {
            return Err(io_err(&sidecar(path), "grids disagree with the CSV"));
        }
        Some(m)
    } else {
        None
    };
    let sweep = FieldSweep::new(fields).map_err(|e| io_err(path, e))?;
    let times = Arc::new(TimeGrid::new(times).map_err(|e| io_err(path, e))?);
    let sigma = meta.as_ref().map_or(0.0, |m| m.noise_sigma);
    let curves = sweep
        .values()
        .iter()
        .zip(&blocks)
        .map(|(b, block)| DecayCurve::new(*b, times.clone(), block.iter().map(|r| r.2).collect(), sigma))
        .collect::<nvesr::Result<Vec<_>>>()
        .map_err(|e| io_err(path, e))?;
    MeasurementRecord::new(
        sweep,
        times,
        curves,
        meta.as_ref().map_or(0.0, |m| m.phonon_rate_per_s),
        sigma,
        meta.as_ref().map_or(0, |m| m.seed),
    )
    .map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileMeta {
    pub phonon_rate_per_s: f64,
    pub phonon_rate_stderr: f64,
    pub converged: Vec<bool>,
}

pub fn quantize_profile(p: &RateProfile) -> Result<RateProfile, CliError> {
    let sweep = FieldSweep::new(p.sweep.values().iter().map(|b| quantize(*b)).collect())?;
    let mut out = RateProfile::new(
        sweep,
        p.gamma1.iter().map(|v| quantize(*v)).collect(),
        p.gamma1_stderr.iter().map(|v| quantize(*v)).collect(),
        p.r_fitted,
    )?;
    out.r_stderr = p.r_stderr;
    out.converged = p.converged.clone();
    Ok(out)
}

/// CSV `field_G,gamma1_hz,stderr` plus a JSON sidecar with R and per-point
/// convergence flags.
pub fn write_profile(path: &Path, p: &RateProfile) -> Result<(), CliError> {
    let mut s = String::from("field_G,gamma1_hz,stderr\n");
    for ((b, g), e) in p.sweep.values().iter().zip(&p.gamma1).zip(&p.gamma1_stderr) {
        let _ = writeln!(s, "{},{},{}", fmt(*b), fmt(*g), fmt(*e));
    }
    write_text(path, &s)?;
    let meta = ProfileMeta {
        phonon_rate_per_s: p.r_fitted,
        phonon_rate_stderr: p.r_stderr,
        converged: p.converged.clone(),
    };
    write_json(&sidecar(path), &meta)
}

pub fn read_profile(path: &Path) -> Result<RateProfile, CliError> {
    let rows = read_rows(path, &["field_G", "gamma1_hz", "stderr"])?;
    let sweep = FieldSweep::new(rows.iter().map(|r| r.1[0]).collect()).map_err(|e| io_err(path, e))?;
    let mut p = RateProfile::new(
        sweep,
        rows.iter().map(|r| r.1[1]).collect(),
        rows.iter().map(|r| r.1[2]).collect(),
        0.0,
    )
    .map_err(|e| io_err(path, e))?;
    if sidecar(path).exists() {
        let m: ProfileMeta = read_json(&sidecar(path))?;
        if m.converged.len() != rows.len() {
            return Err(io_err(&sidecar(path), "convergence flags do not match the CSV rows"));
        }
        p.r_fitted = m.phonon_rate_per_s;
        p.r_stderr = m.phonon_rate_stderr;
        p.converged = m.converged;
    }
    Ok(p)
}

/// CSV `frequency_MHz,density` on the Ω₀ axis.
pub fn write_spectrum(path: &Path, s: &SpectralDensity) -> Result<(), CliError> {
    let mut text = String::from("frequency_MHz,density\n");
    for (w, v) in s.omega().iter().zip(s.values()) {
        let _ = writeln!(text, "{},{}", fmt(angular_to_mhz(*w)), fmt(*v));
    }
    write_text(path, &text)
}

pub fn read_spectrum(path: &Path) -> Result<SpectralDensity, CliError> {
    let rows = read_rows(path, &["frequency_MHz", "density"])?;
    SpectralDensity::new(
        rows.iter().map(|r| mhz_to_angular(r.1[0])).collect(),
        rows.iter().map(|r| r.1[1]).collect(),
    )
    .map_err(|e| io_err(path, e))
}

/// CSV `frequency_Hz,value`.
pub fn write_kernel(path: &Path, k: &FilterKernel) -> Result<(), CliError> {
    let mut text = String::from("frequency_Hz,value\n");
    for (w, v) in k.grid().iter().zip(k.samples()) {
        let _ = writeln!(text, "{},{}", fmt(angular_to_hz(*w)), fmt(*v));
    }
    write_text(path, &text)
}

pub fn write_theory_peaks(path: &Path, peaks: &[TheoryPeak]) -> Result<(), CliError> {
    let mut text = String::from("label,transition,field_G,frequency_MHz,fwhm_MHz,fwhm_G\n");
    for p in peaks {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{}",
            p.label,
            transition_name(p.transition),
            fmt(p.field_g),
            fmt(angular_to_mhz(p.omega0)),
            fmt(angular_to_mhz(p.fwhm)),
            fmt(p.fwhm_g)
        );
    }
    write_text(path, &text)
}

pub fn transition_name(t: Transition) -> &'static str {
    match t {
        Transition::Allowed => "allowed",
        Transition::Disallowed => "disallowed",
    }
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_json(path, value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_has_nine_significant_digits() {
        assert_eq!(fmt(512.5), "5.12500000e2");
        assert_eq!(fmt(-1.0 / 3.0), "-3.33333333e-1");
        assert_eq!(fmt(0.0), "0.00000000e0");
        for x in [1.0 / 7.0, 6.02214076e23, -2.5e-17, 123456789.123] {
            assert_eq!(fmt(quantize(x)), fmt(x));
            assert!((quantize(x) / x - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn malformed_rows_name_their_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(&path, "field_G,gamma1_hz,stderr\n1,2,3\n4,x,6\n").unwrap();
        let msg = read_rows(&path, &["field_G", "gamma1_hz", "stderr"])
            .unwrap_err()
            .to_string();
        assert!(msg.contains("line 3") && msg.contains("gamma1_hz"), "{msg}");

        std::fs::write(&path, "field_G,gamma1_hz,stderr\n1,2,3\n4,5\n").unwrap();
        let msg = read_rows(&path, &["field_G", "gamma1_hz", "stderr"])
            .unwrap_err()
            .to_string();
        assert!(msg.contains("line 3"), "{msg}");

        std::fs::write(&path, "a,b,c\n1,2,3\n").unwrap();
        assert!(read_rows(&path, &["field_G", "gamma1_hz", "stderr"]).is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = read_profile(Path::new("/nonexistent/profile.csv")).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }
}
