mod common;

use std::f64::consts::{FRAC_PI_2, PI};

use common::{central, rel_err, simpson};
use proptest::prelude::*;
use stoclab::rng::Stream;
use stoclab::specialfns::{erfc, erfcx, mills, st_loss, st_loss_grad};

fn erfc_quad(x: f64) -> f64 {
    // the tail past max(x, 0) + 9 is below e^{-81}
    2.0 / PI.sqrt() * simpson(|z| (-z * z).exp(), x, x.max(0.0) + 9.0, 300_000)
}

#[test]
fn erfc_matches_quadrature() {
    for &x in &[-6.0f64, -3.0, -1.0, -0.25, 0.0, 0.5, 1.0, 2.0, 3.5, 5.0, 6.0] {
        let q = erfc_quad(x);
        let v = erfc(x).unwrap();
        assert!(rel_err(v, q) <= 1e-12, "x={x} erfc={v:e} quad={q:e}");
    }
}

#[test]
fn erfc_tail_matches_quadrature() {
    for &x in &[6.5f64, 9.0, 14.0, 20.0, 26.0] {
        let q = erfc_quad(x);
        let v = erfc(x).unwrap();
        assert!(rel_err(v, q) <= 1e-11, "x={x} erfc={v:e} quad={q:e}");
    }
}

#[test]
fn erfc_fixed_points() {
    assert_eq!(erfc(0.0).unwrap(), 1.0);
    let v = erfc(-(10f64.sqrt())).unwrap();
    assert!(v < 2.0 && 2.0 - v < 1e-5, "{v}");
    assert!(erfc(f64::NAN).is_err());
}

#[test]
fn erfc_range_and_far_tail() {
    for i in 0..=400 {
        let x = -30.0 + 0.15 * i as f64;
        let v = erfc(x).unwrap();
        assert!((0.0..=2.0).contains(&v), "x={x}");
        if x <= 26.0 {
            assert!(v > 0.0, "x={x} v={v}");
        }
        if x >= -5.0 {
            assert!(v < 2.0, "x={x} v={v}");
        }
        if x > 26.5 {
            // below 1e-300 only the absolute error is controlled
            assert!(v <= 1e-300, "x={x}");
        }
    }
}

#[test]
fn erfcx_asymptotic_series_at_40() {
    let x: f64 = 40.0;
    let u = 1.0 / (2.0 * x * x);
    // 1 − 1/(2x²) + 3/(4x⁴) − 15/(8x⁶)
    let series = (1.0 - u + 3.0 * u * u - 15.0 * u * u * u) / (x * PI.sqrt());
    assert!(rel_err(erfcx(x), series) <= 1e-11, "{} vs {series}", erfcx(x));
}

#[test]
fn erfcx_is_product_at_moderate_x() {
    assert_eq!(erfcx(0.0), 1.0);
    let q = erfc_quad(1.0) * 1f64.exp();
    assert!(rel_err(erfcx(1.0), q) <= 1e-12);
    for i in 0..=60 {
        let x = 0.1 * i as f64;
        let want = erfc(x).unwrap();
        assert!(rel_err(erfcx(x) * (-x * x).exp(), want) <= 1e-12, "x={x}");
    }
}

#[test]
fn erfcx_large_arguments_stay_finite() {
    for &x in &[100.0f64, 1e3, 1e4] {
        let v = erfcx(x);
        let u = 1.0 / (2.0 * x * x);
        let series = (1.0 - u + 3.0 * u * u - 15.0 * u * u * u) / (x * PI.sqrt());
        assert!(v.is_finite() && rel_err(v, series) < 1e-12, "x={x}");
    }
}

#[test]
fn mills_integral_representation() {
    for &x in &[-2.0f64, 0.0, 1.0, 2.5, 6.0] {
        let q = simpson(|t| (-x * t - t * t / 2.0).exp(), 0.0, 40.0, 400_000);
        let r = mills(x).r;
        assert!(rel_err(r, q) <= 1e-10, "x={x} r={r} quad={q}");
    }
    assert!((mills(0.0).r - FRAC_PI_2.sqrt()).abs() < 1e-15);
    assert!(mills(30.0).r < mills(29.0).r);
}

#[test]
fn mills_derivatives_match_finite_differences() {
    for &x in &[-4.0f64, -1.0, 0.0, 0.7, 3.0, 12.0] {
        let m = mills(x);
        let d1 = central(|t| mills(t).r, x, 1e-5);
        let d2 = central(|t| mills(t).r1, x, 1e-5);
        assert!((m.r1 - d1).abs() <= 1e-8 * (1.0 + d1.abs()), "x={x}");
        assert!((m.r2 - d2).abs() <= 1e-7 * (1.0 + d2.abs()), "x={x}");
    }
}

fn grid() -> Vec<f64> {
    (0..1000).map(|i| -5.0 + 55.0 * i as f64 / 999.0).collect()
}

#[test]
fn mills_monotonicity_on_grid() {
    let m: Vec<_> = grid().into_iter().map(mills).collect();
    for e in &m {
        assert!(e.r > 0.0 && e.r1 < 0.0 && e.r2 > 0.0, "x={}", e.x);
        // log-convexity
        assert!(e.r * e.r2 > e.r1 * e.r1, "x={}", e.x);
    }
    for w in m.windows(2) {
        assert!(w[1].r < w[0].r, "r at x={}", w[1].x);
        assert!(w[1].r1 > w[0].r1, "r' at x={}", w[1].x);
        assert!(w[1].r2 < w[0].r2, "r'' at x={}", w[1].x);
    }
}

#[test]
fn x2_r1_decreasing_on_nonnegative_axis() {
    let m: Vec<_> = grid().into_iter().filter(|&x| x >= 0.0).map(mills).collect();
    for w in m.windows(2) {
        let (a, b) = (w[0].x * w[0].x * w[0].r1, w[1].x * w[1].x * w[1].r1);
        assert!(b < a, "x={}", w[1].x);
    }
}

#[test]
fn x2_r1_not_monotone_on_negative_axis() {
    // x²r' is 0 at x = 0 and negative on both sides, so it cannot decrease
    // across the whole line
    let m: Vec<_> = grid().into_iter().filter(|&x| x <= 0.0).map(mills).collect();
    let rising = m.windows(2).filter(|w| w[1].x * w[1].x * w[1].r1 >= w[0].x * w[0].x * w[0].r1).count();
    assert!(rising > 0);
}

#[test]
fn erfc_sandwich() {
    let c = 2.0 / PI.sqrt();
    for i in 1..=4000 {
        let x = 40.0 * i as f64 / 4000.0;
        let lo = c / (x + (x * x + 2.0).sqrt());
        let hi = c / (x + (x * x + 4.0 / PI).sqrt());
        let v = erfcx(x);
        assert!(lo < v && v <= hi * (1.0 + 1e-14), "x={x}");
        if x <= 26.0 {
            let e = (-x * x).exp();
            let v = erfc(x).unwrap();
            assert!(lo * e < v && v <= hi * e * (1.0 + 1e-13), "unscaled x={x}");
        }
    }
}

fn g_mc(mu: f64, sigma: f64, n: usize, seed: u64) -> f64 {
    let mut rng = Stream::from_seed(seed);
    (0..n).map(|_| (-(mu + sigma * rng.normal()).abs()).exp()).sum::<f64>() / n as f64
}

#[test]
fn g_against_monte_carlo() {
    let e = 0.5f64.exp() * erfc(1.0 / 2f64.sqrt()).unwrap();
    assert!((st_loss(0.0, 1.0).unwrap() - e).abs() < 1e-14);
    for (mu, s) in [(0.0f64, 1.0f64), (1.0, 1.0), (-2.0, 0.3), (0.5, 4.0)] {
        let mc = g_mc(mu, s, 1_000_000, 7);
        assert!((st_loss(mu, s).unwrap() - mc).abs() <= 2e-3, "mu={mu} s={s}");
    }
}

#[test]
fn g_limits_and_domain() {
    assert!((st_loss(0.0f64, 1e-9).unwrap() - 1.0).abs() < 1e-8);
    assert!(st_loss(0.0f64, 0.0).is_err());
    assert!(st_loss(1.0f64, -1.0).is_err());
    for &mu in &[-50.0f64, 0.0, 3.0, 400.0] {
        let v = st_loss(mu, 1e3).unwrap();
        assert!(v.is_finite() && v > 0.0 && v <= 1.0, "mu={mu}");
    }
}

#[test]
fn g_partials_match_finite_differences() {
    let h = 1e-6;
    for i in 0..12 {
        for j in 0..12 {
            let mu = -3.0 + 6.0 * i as f64 / 11.0;
            let s = 0.1 + 4.9 * j as f64 / 11.0;
            let lg = st_loss_grad(mu, s);
            let dmu = central(|m| st_loss(m, s).unwrap(), mu, h);
            let ds = central(|t| st_loss(mu, t).unwrap(), s, h);
            assert!((lg.dmu - dmu).abs() <= 1e-6, "dmu at ({mu}, {s})");
            assert!((lg.dsigma - ds).abs() <= 1e-6, "dsigma at ({mu}, {s})");
            assert!((lg.alpha1 - 2.0 * lg.dmu).abs() <= 1e-15 * (1.0 + lg.dmu.abs()));
        }
    }
}

proptest! {
    #[test]
    fn g_is_even_in_mu(mu in -40.0f64..40.0, s in 1e-3f64..50.0) {
        prop_assert_eq!(st_loss(mu, s).unwrap(), st_loss(-mu, s).unwrap());
    }

    #[test]
    fn g_in_unit_interval(mu in -30.0f64..30.0, s in 1e-3f64..1e3) {
        let v = st_loss(mu, s).unwrap();
        prop_assert!(v > 0.0 && v <= 1.0);
    }

    #[test]
    fn mills_identities(x in -8.0f64..60.0) {
        let m = mills(x);
        prop_assert!(m.r > 0.0);
        prop_assert!((m.r1 - (x * m.r - 1.0)).abs() <= 1e-12 * (1.0 + (x * m.r).abs()));
        prop_assert!((m.r2 - (m.r + x * x * m.r - x)).abs() <= 1e-9 * (1.0 + (x * x * m.r).abs()));
        prop_assert!(m.r1 < 0.0 && m.r2 > 0.0);
    }

    #[test]
    fn erfc_reflection(x in -6.0f64..6.0) {
        let s = erfc(x).unwrap() + erfc(-x).unwrap();
        prop_assert!((s - 2.0).abs() <= 4e-16);
    }
}
