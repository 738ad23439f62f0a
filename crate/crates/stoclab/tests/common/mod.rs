//! Oracles shared by the integration tests.
#![allow(dead_code)]

/// Composite Simpson rule on [a, b] with `n` (even) panels, summed per
/// block to keep rounding down.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    assert!(n % 2 == 0);
    let h = (b - a) / n as f64;
    let mut total = f(a) + f(b);
    let mut block = 0.0;
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        block += w * f(a + i as f64 * h);
        if i % 1024 == 0 {
            total += block;
            block = 0.0;
        }
    }
    (total + block) * h / 3.0
}

/// Central difference with step `h`.
pub fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
