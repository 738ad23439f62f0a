//! erfc, scaled erfcx, Mill's ratio and the pseudolabel loss g(μ, σ).
//!
//! erfc/erfcx follow W. J. Cody's rational Chebyshev approximations
//! (three intervals, |x| ≤ 0.46875, ≤ 4, > 4). Everything with a Gaussian
//! tail goes through `erfcx` so that large σ never overflows `exp`.

use crate::error::{Error, Result};
use crate::scalar::Real;

const A: [f64; 5] = [
    3.161_123_743_870_565_6,
    113.864_154_151_050_16,
    377.485_237_685_302_02,
    3_209.377_589_138_469_5,
    0.185_777_706_184_603_15,
];
const B: [f64; 4] = [
    23.601_290_952_344_12,
    244.024_637_934_444_17,
    1_282.616_526_077_372_3,
    2_844.236_833_439_170_6,
];
const C: [f64; 9] = [
    0.564_188_496_988_670_1,
    8.883_149_794_388_376,
    66.119_190_637_141_63,
    298.635_138_197_400_1,
    881.952_221_241_769_1,
    1_712.047_612_634_070_6,
    2_051.078_377_826_071_5,
    1_230.339_354_797_997_2,
    2.153_115_354_744_038_5e-8,
];
const D: [f64; 8] = [
    15.744_926_110_709_835,
    117.693_950_891_312_5,
    537.181_101_862_009_9,
    1_621.389_574_566_690_2,
    3_290.799_235_733_459_6,
    4_362.619_090_143_247,
    3_439.367_674_143_721_6,
    1_230.339_354_803_749_4,
];
const P: [f64; 6] = [
    0.305_326_634_961_232_34,
    0.360_344_899_949_804_43,
    0.125_781_726_111_229_25,
    0.016_083_785_148_742_277,
    6.587_491_615_298_378e-4,
    0.016_315_387_137_302_098,
];
const Q: [f64; 5] = [
    2.568_520_192_289_822_4,
    1.872_952_849_923_460_4,
    0.527_905_102_951_428_4,
    0.060_518_341_312_441_32,
    0.002_335_204_976_268_691_8,
];

const SMALL: f64 = 0.46875;
const XBIG: f64 = 26.543;
const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

#[inline]
fn ab<T: Real>(z: T) -> T {
    let c = T::c;
    let num = (((c(A[4]) * z + c(A[0])) * z + c(A[1])) * z + c(A[2])) * z + c(A[3]);
    let den = (((z + c(B[0])) * z + c(B[1])) * z + c(B[2])) * z + c(B[3]);
    num / den
}

#[inline]
fn cd<T: Real>(y: T) -> T {
    let mut num = T::c(C[8]) * y;
    for &ci in &C[..7] {
        num = (num + T::c(ci)) * y;
    }
    num = num + T::c(C[7]);
    let mut den = y;
    for &di in &D[..7] {
        den = (den + T::c(di)) * y;
    }
    den = den + T::c(D[7]);
    num / den
}

#[inline]
fn pq<T: Real>(z: T) -> T {
    let mut num = T::c(P[5]) * z;
    for &pi in &P[..4] {
        num = (num + T::c(pi)) * z;
    }
    num = num + T::c(P[4]);
    let mut den = z;
    for &qi in &Q[..4] {
        den = (den + T::c(qi)) * z;
    }
    den = den + T::c(Q[4]);
    z * num / den
}

/// exp(∓y²) with y split at 1/16 so the rounding of y² does not leak into
/// the exponent.
#[inline]
fn exp_sq<T: Real>(y: T, negative: bool) -> T {
    let s = T::c(16.0);
    let yt = (y * s).trunc() / s;
    let (hi, lo) = (yt * yt, (y - yt) * (y + yt));
    if negative {
        (-hi).exp() * (-lo).exp()
    } else {
        hi.exp() * lo.exp()
    }
}

/// erfcx(y) for y > 0.46875.
#[inline]
fn erfcx_tail<T: Real>(y: T) -> T {
    if y <= T::c(4.0) {
        cd(y)
    } else {
        let z = (y * y).recip();
        (T::c(FRAC_1_SQRT_PI) - pq(z)) / y
    }
}

#[inline]
pub(crate) fn erfc_raw<T: Real>(x: T) -> T {
    let y = x.abs();
    if y <= T::c(SMALL) {
        return T::one() - x * ab(y * y);
    }
    let tail = if y >= T::c(XBIG) {
        T::zero()
    } else {
        erfcx_tail(y) * exp_sq(y, true)
    };
    if x < T::zero() {
        T::c(2.0) - tail
    } else {
        tail
    }
}

/// Complementary error function.
pub fn erfc<T: Real>(x: T) -> Result<T> {
    if x.is_nan() {
        return Err(Error::Domain("erfc of NaN".into()));
    }
    Ok(erfc_raw(x))
}

/// Scaled complementary error function exp(x²)·erfc(x).
///
/// Finite for every x ≥ 0; overflows to +∞ once exp(x²) does for
/// negative x. NaN propagates.
pub fn erfcx<T: Real>(x: T) -> T {
    let y = x.abs();
    if y <= T::c(SMALL) {
        let z = y * y;
        return z.exp() * (T::one() - x * ab(z));
    }
    let t = erfcx_tail(y);
    if x < T::zero() {
        T::c(2.0) * exp_sq(y, false) - t
    } else {
        t
    }
}

/// Mill's ratio r(x) = exp(x²/2)·erfc(x/√2)·√(π/2) with its first two
/// derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MillsEval<T> {
    pub x: T,
    pub r: T,
    pub r1: T,
    pub r2: T,
}

pub fn mills<T: Real>(x: T) -> MillsEval<T> {
    let r = erfcx(x / T::SQRT_2()) * (T::FRAC_PI_2()).sqrt();
    let r1 = x * r - T::one();
    // r + x²r − x, grouped to keep the cancellation inside r1
    let r2 = r + x * r1;
    MillsEval { x, r, r1, r2 }
}

/// sgn with sgn(0) = +1.
#[inline]
pub fn sgn<T: Real>(x: T) -> T {
    if x < T::zero() {
        -T::one()
    } else {
        T::one()
    }
}

/// e^{σ²/2 − μ}·erfc((σ − μ/σ)/√2), continuous at σ = 0.
fn t_term<T: Real>(mu: T, sigma: T) -> T {
    if sigma == T::zero() {
        return if mu > T::zero() {
            T::c(2.0) * (-mu).exp()
        } else if mu == T::zero() {
            T::one()
        } else {
            T::zero()
        };
    }
    let x = (sigma - mu / sigma) / T::SQRT_2();
    if x >= T::zero() {
        erfcx(x) * (-(mu * mu) / (T::c(2.0) * sigma * sigma)).exp()
    } else {
        // here μ > σ², so σ²/2 − μ < 0
        erfc_raw(x) * (sigma * sigma / T::c(2.0) - mu).exp()
    }
}

/// The three erfc/Gaussian terms of the self-training update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ATerms<T> {
    pub a1: T,
    pub a2: T,
    pub a3: T,
}

pub fn a_terms<T: Real>(mu: T, sigma: T) -> ATerms<T> {
    let a3 = if sigma == T::zero() {
        T::zero()
    } else {
        T::c(2.0) * T::SQRT_2() * T::c(FRAC_1_SQRT_PI)
            * (-(mu * mu) / (T::c(2.0) * sigma * sigma)).exp()
    };
    ATerms {
        a1: t_term(mu, sigma),
        a2: t_term(-mu, sigma),
        a3,
    }
}

/// g(μ, σ) = E exp(−|μ + z|), z ∼ N(0, σ²).
pub fn st_loss<T: Real>(mu: T, sigma: T) -> Result<T> {
    if !(sigma > T::zero()) || mu.is_nan() {
        return Err(Error::Domain(format!(
            "st_loss needs sigma > 0 and finite mu (mu = {mu}, sigma = {sigma})"
        )));
    }
    let a = a_terms(mu, sigma);
    Ok((a.a1 + a.a2) / T::c(2.0))
}

/// g together with α₁ = 2∂g/∂μ and α₂ = (2/σ)∂g/∂σ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossGrad<T> {
    pub g: T,
    pub alpha1: T,
    pub alpha2: T,
    pub dmu: T,
    pub dsigma: T,
}

/// Accepts σ = 0, where α₂ takes its limit 2e^{−|μ|} (μ ≠ 0).
pub fn st_loss_grad<T: Real>(mu: T, sigma: T) -> LossGrad<T> {
    let sigma = sigma.abs();
    let a = a_terms(mu, sigma);
    let two = T::c(2.0);
    let alpha1 = a.a2 - a.a1;
    let alpha2 = if sigma == T::zero() {
        two * (-mu.abs()).exp()
    } else {
        a.a1 + a.a2 - a.a3 / sigma
    };
    LossGrad {
        g: (a.a1 + a.a2) / two,
        alpha1,
        alpha2,
        dmu: alpha1 / two,
        dsigma: sigma * alpha2 / two,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn erfc_reference_points() {
        assert_eq!(erfc(0.0f64).unwrap(), 1.0);
        // scipy.special.erfc
        assert_relative_eq!(erfc(0.3f64).unwrap(), 0.671_373_240_540_872_6, max_relative = 1e-14);
        assert_relative_eq!(erfc(2.0f64).unwrap(), 4.677_734_981_047_266e-3, max_relative = 1e-13);
        assert_relative_eq!(erfc(5.5f64).unwrap(), 7.357_847_917_974_398e-15, max_relative = 1e-13);
        assert_relative_eq!(erfc(-1.5f64).unwrap(), 1.966_105_146_475_31, max_relative = 1e-14);
        assert!(erfc(f64::NAN).is_err());
        assert!(erfc(-(10f64.sqrt())).unwrap() > 1.999_99);
    }

    #[test]
    fn erfcx_reference_points() {
        assert_eq!(erfcx(0.0f64), 1.0);
        assert_relative_eq!(erfcx(10.0f64), 0.056_140_992_743_822_59, max_relative = 1e-14);
        assert_relative_eq!(erfcx(-2.0f64), 108.940_904_389_977_98, max_relative = 1e-13);
        let big = erfcx(1e4f64);
        assert!(big.is_finite());
        assert_relative_eq!(big, 1.0 / (1e4 * std::f64::consts::PI.sqrt()), max_relative = 1e-8);
    }

    #[test]
    fn f32_kernels_track_f64() {
        for &x in &[-2.0f64, -0.3, 0.1, 0.7, 3.0, 6.0] {
            let a = erfc(x as f32).unwrap() as f64;
            let b = erfc(x).unwrap();
            assert!((a - b).abs() <= 1e-6 * b.max(1e-30), "x={x}");
        }
        assert!((mills(0.0f32).r - 1.253_314_1).abs() < 1e-6);
    }

    #[test]
    fn mills_at_zero() {
        let m = mills(0.0f64);
        assert_relative_eq!(m.r, std::f64::consts::FRAC_PI_2.sqrt(), max_relative = 1e-15);
        assert_eq!(m.r1, -1.0);
    }

    #[test]
    fn g_limits_and_symmetry() {
        assert_relative_eq!(st_loss(0.0f64, 1e-9).unwrap(), 1.0, max_relative = 1e-8);
        let exact = 0.5f64.exp() * erfc(std::f64::consts::FRAC_1_SQRT_2).unwrap();
        assert_relative_eq!(st_loss(0.0f64, 1.0).unwrap(), exact, max_relative = 1e-14);
        assert_eq!(st_loss(1.3f64, 0.7).unwrap(), st_loss(-1.3f64, 0.7).unwrap());
        assert!(st_loss(1.0f64, 0.0).is_err());
        assert!(st_loss(1.0f64, 1e3).unwrap().is_finite());
    }

    #[test]
    fn alpha_small_sigma_limits() {
        let lg = st_loss_grad(0.8f64, 1e-4);
        assert_relative_eq!(lg.alpha1, -2.0 * (-0.8f64).exp(), max_relative = 1e-3);
        assert_relative_eq!(lg.alpha2, 2.0 * (-0.8f64).exp(), max_relative = 1e-3);
        let lg0 = st_loss_grad(-0.8f64, 0.0);
        assert_relative_eq!(lg0.alpha1, 2.0 * (-0.8f64).exp(), max_relative = 1e-14);
    }

    #[test]
    fn sgn_zero_is_positive() {
        assert_eq!(sgn(0.0f64), 1.0);
        assert_eq!(sgn(-0.0f64), 1.0);
    }
}
