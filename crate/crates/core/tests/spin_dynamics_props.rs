use std::f64::consts::PI;

use nvesr::spin_dynamics::{
    classify_damping, critical_coupling, fit_exponential_rate, integrate_master_equation, population_resonant,
    relaxation_rate, DampingRegime, TwoLevelParams,
};
use proptest::prelude::*;

#[test]
fn numeric_matches_analytic_on_parameter_grid() {
    let mut seen = [false; 2];
    for i in 0..10 {
        let gamma2 = 2.0 * PI * (1e6 + 1e6 * i as f64);
        for j in 0..10 {
            // B/Γ₂ from 0.02 to 3, both sides of critical
            let ratio = 0.02 * 150f64.powf(j as f64 / 9.0);
            let b = ratio * gamma2;
            let p = TwoLevelParams::resonant(b, gamma2).unwrap();
            seen[(classify_damping(&p) == DampingRegime::UnderDamped) as usize] = true;
            let span = 20.0 / relaxation_rate(&p);
            let times: Vec<f64> = (0..=200).map(|k| span * k as f64 / 200.0).collect();
            let numeric = integrate_master_equation(&p, &times).unwrap();
            for (t, v) in times.iter().zip(&numeric) {
                let exact = population_resonant(b, gamma2, *t).unwrap();
                assert!((v - exact).abs() <= 1e-6, "B/Γ₂={ratio} t={t}: {v} vs {exact}");
            }
        }
    }
    assert!(seen[0] && seen[1]);
}

#[test]
fn critical_damping_matches_series_branch() {
    let gamma2 = 2.0 * PI * 5e6;
    let b = critical_coupling(gamma2);
    let p = TwoLevelParams::resonant(b, gamma2).unwrap();
    assert_eq!(classify_damping(&p), DampingRegime::CriticallyDamped);
    let times: Vec<f64> = (0..=400).map(|k| k as f64 * 0.05 / gamma2).collect();
    let numeric = integrate_master_equation(&p, &times).unwrap();
    for (t, v) in times.iter().zip(&numeric) {
        assert!((v - population_resonant(b, gamma2, *t).unwrap()).abs() < 1e-6);
    }
}

#[test]
fn detuned_fitted_rates_follow_lorentzian() {
    let gamma2 = 2.0 * PI * 5e6;
    let b = gamma2 / 40.0;
    for d in [0.0, 0.5, 1.0, 2.0, 5.0] {
        let p = TwoLevelParams::new(b, gamma2, d * gamma2).unwrap();
        let rate = relaxation_rate(&p);
        let times: Vec<f64> = (0..200)
            .map(|k| 20.0 / gamma2 + k as f64 * 3.0 / (200.0 * rate))
            .collect();
        let pop = integrate_master_equation(&p, &times).unwrap();
        let fitted = fit_exponential_rate(&times, &pop, 1e-12).unwrap();
        assert!((fitted / rate - 1.0).abs() < 0.02, "δ/Γ₂={d}: {fitted} vs {rate}");
    }
}

#[test]
fn steady_state_is_half() {
    let gamma2 = 1.0;
    for b in [0.05, critical_coupling(1.0), 2.0] {
        let p = TwoLevelParams::new(b, gamma2, 0.3).unwrap();
        let t = 60.0 / relaxation_rate(&p).min(0.5);
        let v = integrate_master_equation(&p, &[0.0, t]).unwrap();
        assert_eq!(v[0], 1.0);
        assert!((v[1] - 0.5).abs() < 1e-8, "{}", v[1]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lorentzian_rate_ratio(b in 1e3f64..1e7, g in 1e5f64..1e9, d in -1e10f64..1e10) {
        let r0 = relaxation_rate(&TwoLevelParams::new(b, g, 0.0).unwrap());
        let rd = relaxation_rate(&TwoLevelParams::new(b, g, d).unwrap());
        let expect = g * g / (d * d + g * g);
        prop_assert!((rd / r0 - expect).abs() <= 1e-12);
    }

    #[test]
    fn overdamped_numeric_is_monotone(ratio in 0.005f64..0.3, d in 0.0f64..3.0) {
        let g = 1.0;
        let p = TwoLevelParams::new(ratio * g, g, d * g).unwrap();
        prop_assume!(classify_damping(&p) == DampingRegime::OverDamped);
        let span = 5.0 / relaxation_rate(&p);
        let times: Vec<f64> = (0..100).map(|k| span * k as f64 / 99.0).collect();
        let v = integrate_master_equation(&p, &times).unwrap();
        for w in v.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9);
        }
        prop_assert!(v.iter().all(|x| *x >= 0.5 - 1e-9 && *x <= 1.0 + 1e-9));
    }
}
