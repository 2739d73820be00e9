use nvesr::deconv::{convolve, convolve_direct, deconvolve_iterative, transform_len, DeconvOptions, NoisePsd};
use nvesr::grid::make_uniform_grid;
use nvesr::p1bath::{offset_spectral_density, BathGeometry, P1Constants};
use nvesr::units::mhz_to_angular;
use nvesr::{FilterKernel, KernelShape, SpectralDensity};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn l2_rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

/// Theory spectrum confined to |Ω| ≤ 150 MHz so that its full convolution
/// with a ±100 MHz kernel fits inside the ±300 MHz grid.
fn compact_theory() -> SpectralDensity {
    let omega = make_uniform_grid(mhz_to_angular(-300.0), mhz_to_angular(300.0), 1201).unwrap();
    let g = BathGeometry::from_ppm(50.0, 1.0, 0.25).unwrap();
    let s = offset_spectral_density(&omega, &P1Constants::default(), Some(&g)).unwrap();
    let vals = omega
        .iter()
        .zip(s.values())
        .map(|(w, v)| if w.abs() <= mhz_to_angular(150.0) { *v } else { 0.0 })
        .collect();
    SpectralDensity::new(omega, vals).unwrap()
}

#[test]
fn zero_noise_recovers_theory_spectrum() {
    let s = compact_theory();
    let step = s.spacing();
    let half = (mhz_to_angular(100.0) / step).round() as usize;
    for shape in [KernelShape::Lorentzian, KernelShape::SqrtLorentzian] {
        let k = FilterKernel::symmetric(shape, mhz_to_angular(5.0), step, half).unwrap();
        let m = convolve(&s, &k).unwrap();
        let d = deconvolve_iterative(s.omega(), &m, &k, &DeconvOptions::default()).unwrap();
        let err = l2_rel(d.spectrum.values(), s.values());
        assert!(err < 0.05, "{shape:?}: {err}");
        assert!(d.diagnostics.iterations <= 10);
    }
}

fn impulse_response(sigma: f64, seed: u64) -> (Vec<f64>, Vec<f64>, f64) {
    let n = 801;
    let step = mhz_to_angular(0.5);
    let omega: Vec<f64> = (0..n).map(|i| (i as f64 - 400.0) * step).collect();
    let g2 = mhz_to_angular(5.0);
    let k = FilterKernel::symmetric(KernelShape::Lorentzian, g2, step, 200).unwrap();
    let mut imp = vec![0.0; n];
    imp[400] = 1.0;
    let clean = convolve_direct(&imp, k.samples()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    let m: Vec<f64> = clean.iter().map(|v| v + noise.sample(&mut rng)).collect();
    let p = transform_len(n, k.len());
    let opts = DeconvOptions {
        noise: NoisePsd::Flat(sigma * sigma * p as f64),
        ..DeconvOptions::default()
    };
    let d = deconvolve_iterative(&omega, &m, &k, &opts).unwrap();
    (omega, d.spectrum.values().to_vec(), g2)
}

#[test]
fn impulse_energy_concentrates_within_linewidth() {
    // measured on Σv²: the floored estimate keeps the positive half of the
    // band-limit ringing, which dominates a plain Σv
    let (omega, rec, g2) = impulse_response(0.005, 1);
    let total: f64 = rec.iter().map(|v| v * v).sum();
    let inside: f64 = omega
        .iter()
        .zip(&rec)
        .filter(|(w, _)| w.abs() <= g2)
        .map(|(_, v)| v * v)
        .sum();
    assert!(inside / total >= 0.8, "{}", inside / total);
}

#[test]
fn peak_to_sidelobe_improves_as_noise_drops() {
    let ratio = |sigma: f64| {
        (1..=5)
            .map(|seed| {
                let (omega, rec, g2) = impulse_response(sigma, seed);
                let peak = rec.iter().cloned().fold(0.0, f64::max);
                let side: Vec<f64> = omega
                    .iter()
                    .zip(&rec)
                    .filter(|(w, _)| w.abs() > 2.0 * g2)
                    .map(|(_, v)| *v)
                    .collect();
                let rms = (side.iter().map(|v| v * v).sum::<f64>() / side.len() as f64).sqrt();
                peak / rms
            })
            .sum::<f64>()
            / 5.0
    };
    let r: Vec<f64> = [0.02, 0.01, 0.005].iter().map(|s| ratio(*s)).collect();
    assert!(r[0] < r[1] && r[1] < r[2], "{r:?}");
}

#[test]
fn noisy_deconvolution_sharpens_central_line() {
    let s = compact_theory();
    let step = s.spacing();
    let k = FilterKernel::symmetric(KernelShape::Lorentzian, mhz_to_angular(5.0), step, 300).unwrap();
    let clean = convolve(&s, &k).unwrap();
    let peak = clean.iter().cloned().fold(0.0, f64::max);
    let sigma = 0.01 * peak;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = Normal::new(0.0, sigma).unwrap();
    let m: Vec<f64> = clean.iter().map(|v| v + noise.sample(&mut rng)).collect();
    let p = transform_len(m.len(), k.len());
    let opts = DeconvOptions {
        noise: NoisePsd::Flat(sigma * sigma * p as f64),
        ..DeconvOptions::default()
    };
    let d = deconvolve_iterative(s.omega(), &m, &k, &opts).unwrap();
    let fwhm = |y: &[f64]| {
        let c = 600;
        let h = y[c] / 2.0;
        let mut l = c;
        while y[l] > h {
            l -= 1;
        }
        let mut r = c;
        while y[r] > h {
            r += 1;
        }
        (r - l) as f64
    };
    assert!(fwhm(d.spectrum.values()) < fwhm(&m));
}
