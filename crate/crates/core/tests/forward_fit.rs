use nvesr::forward::{extract_rates, subtract_detuned_baseline, synthesize_record, FitOptions, PhononMode};
use nvesr::p1bath::{BathGeometry, BathModel, P1Constants};
use nvesr::units::{hz_to_angular, PhysicalConstants};
use nvesr::{FieldSweep, TimeGrid};

fn model() -> BathModel {
    let geometry = BathGeometry::from_ppm(50.0, 1.0, 0.25).unwrap();
    BathModel::new(
        PhysicalConstants::default(),
        P1Constants::default(),
        geometry,
        hz_to_angular(5e6),
    )
    .unwrap()
    .with_peak_rate(1e5)
    .unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn noisy_sweep_recovers_profile() {
    let sweep = FieldSweep::linear(480.0, 540.0, 500).unwrap();
    let times = TimeGrid::log_spaced(1e-5, 2e-2, 40).unwrap();
    let truth = model().profile(&sweep);
    let mut within = 0;
    let mut total = 0;
    // two-standard-error coverage is a 95% statement, so pool several sweeps
    for seed in 1..=8 {
        let rec = synthesize_record(&sweep, &times, &truth, 360.0, 0.005, seed).unwrap();
        let p = extract_rates(&rec, PhononMode::Fixed(360.0), &FitOptions::default()).unwrap();
        let rel: Vec<f64> = p.gamma1.iter().zip(&truth).map(|(a, b)| (a / b - 1.0).abs()).collect();
        assert!(median(rel) <= 0.02);
        assert!(p.all_converged());
        within += p
            .gamma1
            .iter()
            .zip(&truth)
            .zip(&p.gamma1_stderr)
            .filter(|((a, b), e)| (*a - *b).abs() <= 2.0 * **e)
            .count();
        total += truth.len();
    }
    assert!(within as f64 >= 0.95 * total as f64, "{within}/{total}");
}

#[test]
fn residuals_are_white() {
    let sweep = FieldSweep::linear(480.0, 540.0, 50).unwrap();
    let times = TimeGrid::log_spaced(1e-5, 2e-2, 100).unwrap();
    let truth = model().profile(&sweep);
    let rec = synthesize_record(&sweep, &times, &truth, 360.0, 0.005, 3).unwrap();
    let p = extract_rates(&rec, PhononMode::Fixed(360.0), &FitOptions::default()).unwrap();
    let mut rho_sum = 0.0;
    for (curve, g) in rec.curves.iter().zip(&p.gamma1) {
        let res: Vec<f64> = times
            .values()
            .iter()
            .zip(&curve.contrast)
            .map(|(t, y)| y - nvesr::forward::decay_model(*g, 360.0, *t))
            .collect();
        let mean = res.iter().sum::<f64>() / res.len() as f64;
        let c0: f64 = res.iter().map(|r| (r - mean).powi(2)).sum();
        let c1: f64 = res.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
        rho_sum += c1 / c0;
    }
    let rho = rho_sum / rec.curves.len() as f64;
    assert!(rho.abs() < 0.1, "{rho}");
}

#[test]
fn permuting_time_samples_leaves_fit_unchanged() {
    let sweep = FieldSweep::linear(500.0, 520.0, 8).unwrap();
    let times = TimeGrid::log_spaced(1e-5, 2e-2, 40).unwrap();
    let truth = model().profile(&sweep);
    let rec = synthesize_record(&sweep, &times, &truth, 360.0, 0.005, 9).unwrap();
    let a = extract_rates(&rec, PhononMode::Fixed(360.0), &FitOptions::default()).unwrap();

    // reverse every curve together with its time axis
    let perm: Vec<usize> = (0..40).rev().collect();
    let rev_t: Vec<f64> = perm.iter().map(|&i| times.values()[i]).collect();
    let fits: Vec<f64> = rec
        .curves
        .iter()
        .map(|c| {
            let y: Vec<f64> = perm.iter().map(|&i| c.contrast[i]).collect();
            least_squares_s(&rev_t, &y)
        })
        .collect();
    for (fa, s) in a.gamma1.iter().zip(fits) {
        assert!((fa / (s * s) - 1.0).abs() < 1e-6, "{fa} {}", s * s);
    }
}

/// Golden-section minimum of the SSE in s = √Γ₁, independent of the library fit.
fn least_squares_s(t: &[f64], y: &[f64]) -> f64 {
    let sse = |s: f64| -> f64 {
        t.iter()
            .zip(y)
            .map(|(t, y)| (y - (-s * t.sqrt() - 360.0 * t).exp()).powi(2))
            .sum()
    };
    let (mut a, mut b) = (0.0f64, 2000.0f64);
    // coarse bracket first
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..=2000 {
        let s = k as f64;
        let e = sse(s);
        if e < best.0 {
            best = (e, s);
        }
    }
    a = a.max(best.1 - 1.0);
    b = b.min(best.1 + 1.0);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if sse(c) < sse(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

#[test]
fn window_baseline_matches_generator() {
    let sweep = FieldSweep::linear(480.0, 540.0, 500).unwrap();
    let times = TimeGrid::log_spaced(1e-5, 2e-2, 40).unwrap();
    let truth = model().profile(&sweep);
    let rec = synthesize_record(&sweep, &times, &truth, 360.0, 0.005, 21).unwrap();
    let p = extract_rates(&rec, PhononMode::Fixed(360.0), &FitOptions::default()).unwrap();
    let sub = subtract_detuned_baseline(&p, Some((480.0, 484.0))).unwrap();
    let (idx, _): (Vec<usize>, Vec<f64>) = sweep
        .values()
        .iter()
        .enumerate()
        .filter(|(_, b)| **b <= 484.0)
        .map(|(i, b)| (i, *b))
        .unzip();
    let true_mean = idx.iter().map(|&i| truth[i]).sum::<f64>() / idx.len() as f64;
    let offset = p.gamma1[250] - sub.gamma1[250];
    assert!((offset / true_mean - 1.0).abs() < 0.05, "{offset} vs {true_mean}");
    assert!(sub.gamma1.iter().all(|g| *g >= 0.0));
}
