//! Coordinate-scaling augmentations a = c ⊙ x, c ∼ Unif[0,1]^d, and their
//! exact second moments.

use crate::model::{population_second_moment, Domain, ModelParams};
use crate::rng::Stream;
use crate::Matrix;

/// Σ_A = E[aaᵀ] and Σ̃ = E[ã ãᵀ] with ã(x) = E[a | x] = x/2.
#[derive(Debug, Clone, PartialEq)]
pub struct AugMoments {
    pub sigma_a: Matrix,
    pub sigma_tilde: Matrix,
}

pub fn sample_augmentation(x: &[f64], rng: &mut Stream) -> Vec<f64> {
    x.iter().map(|&xi| rng.uniform() * xi).collect()
}

/// E[cᵢcⱼ]: 1/3 on the diagonal, 1/4 off it.
pub fn mask(d: usize) -> Matrix {
    Matrix::from_fn(d, d, |i, j| if i == j { 1.0 / 3.0 } else { 0.25 })
}

/// Moments over the union of source and target.
pub fn augmentation_moments(p: &ModelParams) -> AugMoments {
    augmentation_moments_on(p, Domain::Union)
}

/// Moments for augmentations of draws from `domain` (target-only for SSL).
pub fn augmentation_moments_on(p: &ModelParams, domain: Domain) -> AugMoments {
    let m = population_second_moment(p, domain);
    AugMoments {
        sigma_a: mask(p.d()).hadamard(&m),
        sigma_tilde: m.scale(0.25),
    }
}

/// The σsp² coefficient of the w_spu entry of 4Σ_A that follows from the
/// Hadamard mask.
pub const SPU_SIGMA_COEF: f64 = 2.0 / 3.0;

/// Twice [`SPU_SIGMA_COEF`], for comparing against block forms that use it.
pub const SPU_SIGMA_COEF_DOUBLED: f64 = 4.0 / 3.0;

/// Union moments restricted to W = span{w_inv, w_spu}, as 2×2 matrices in
/// that basis. Valid for w* = 1/√din. `spu_sigma_coef` is the σsp²
/// coefficient of the w_spu diagonal entry (times 4); pass
/// [`SPU_SIGMA_COEF`] for the exact block.
pub fn w_blocks(p: &ModelParams, spu_sigma_coef: f64) -> (Matrix, Matrix) {
    let (g, din, dsp) = (p.gamma, p.d_in as f64, p.d_sp as f64);
    let (s2in, s2sp) = (p.sigma_in * p.sigma_in, p.sigma_sp * p.sigma_sp);
    let a_in = 0.25 * (g * g * (1.0 + 1.0 / (3.0 * din)) + s2in / 3.0 * (1.0 - 1.0 / din));
    let a_x = g * dsp.sqrt() / 8.0;
    let a_sp = 0.25 * (dsp / 2.0 + spu_sigma_coef * s2sp + 1.0 / 6.0);
    let sa = Matrix::from_rows(&[vec![a_in, a_x], vec![a_x, a_sp]]);
    let t_x = g * dsp.sqrt() / 2.0;
    let st = Matrix::from_rows(&[vec![g * g, t_x], vec![t_x, dsp / 2.0 + s2sp / 2.0]]).scale(0.25);
    (sa, st)
}
