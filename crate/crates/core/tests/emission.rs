use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use satbeam::emission::{calibrate_fn, fit_line, fn_plot, fn_rate, Drive, FNParams};
use satbeam::geometry::ElectrodeVoltages;

/// Root of ln 33 = 2 ln(hi/lo) + b (1/lo - 1/hi), found by bisection.
fn anchor_b() -> f64 {
    let (lo, hi) = (1480.3_f64, 1799.7_f64);
    let f = |b: f64| 2.0 * (hi / lo).ln() + b * (1.0 / lo - 1.0 / hi) - 33.0_f64.ln();
    let (mut a, mut c) = (0.0, 1e6);
    for _ in 0..200 {
        let m = 0.5 * (a + c);
        if f(m) > 0.0 {
            c = m;
        } else {
            a = m;
        }
    }
    0.5 * (a + c)
}

#[test]
fn default_params_reproduce_anchor_ratio() {
    let p = FNParams::default();
    assert!((p.b / anchor_b() - 1.0).abs() < 1e-12, "{} vs {}", p.b, anchor_b());
    let ratio = fn_rate(&p, 1799.7).unwrap() / fn_rate(&p, 1480.3).unwrap();
    assert!((ratio - 33.0).abs() < 1e-9);
}

#[test]
fn anchor_calibration_recovers_oracle_slope() {
    let r = 412.0;
    let c = calibrate_fn(&[(1480.3, r), (1799.7, 33.0 * r)], Drive::PotentialDifference).unwrap();
    assert!((c.params.b / anchor_b() - 1.0).abs() < 1e-10);
    let line = fit_line(&fn_plot(&c.params, (1480.0, 1800.0), 9).unwrap()).unwrap();
    assert!((line.slope + anchor_b()).abs() / anchor_b() < 1e-10);
}

#[test]
fn noisy_calibration_recovers_exponent() {
    let truth = FNParams::default();
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<_> = (0..12)
            .map(|k| {
                let phi = 1400.0 + 40.0 * k as f64;
                let noise = 1.0 + rng.random_range(-0.02..0.02);
                (phi, fn_rate(&truth, phi).unwrap() * noise)
            })
            .collect();
        let c = calibrate_fn(&pts, Drive::PotentialDifference).unwrap();
        assert!(
            (c.params.b / truth.b - 1.0).abs() < 0.05,
            "seed {seed}: b = {}",
            c.params.b
        );
    }
}

#[test]
fn potential_difference_drive_depends_only_on_difference() {
    let p = FNParams::default();
    for d in [1300.0, 1480.3, 1650.0, 1799.7] {
        let sweep_c = p.rate_for(&ElectrodeVoltages::new(-1600.0, d - 1600.0)).unwrap();
        let sweep_tip = p.rate_for(&ElectrodeVoltages::new(200.0 - d, 200.0)).unwrap();
        assert!((sweep_c / sweep_tip - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn rate_strictly_increasing(phi in 10.0f64..1e4, step in 1e-3f64..100.0) {
        let p = FNParams::default();
        prop_assert!(fn_rate(&p, phi + step).unwrap() > fn_rate(&p, phi).unwrap());
    }

    #[test]
    fn plot_is_collinear_and_invertible(log_a in -10.0f64..10.0, b in 1e3f64..1e5, lo in 200.0f64..2000.0, width in 10.0f64..2000.0, n in 2usize..40) {
        let p = FNParams::new(log_a.exp(), b, Drive::TipVoltage).unwrap();
        let pts = fn_plot(&p, (lo, lo + width), n).unwrap();
        let line = fit_line(&pts).unwrap();
        prop_assert!(line.max_residual < 1e-10);
        let phis: Vec<_> = pts.iter().map(|q| (1.0 / q.0, fn_rate(&p, 1.0 / q.0).unwrap())).collect();
        let c = calibrate_fn(&phis, Drive::TipVoltage).unwrap();
        prop_assert!((c.params.b / b - 1.0).abs() < 1e-8);
        prop_assert!((c.params.a.ln() - log_a).abs() < 1e-8);
    }
}
