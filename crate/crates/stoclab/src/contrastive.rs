//! Barlow Twins with linear features: the whitened closed form, a
//! κ-penalised gradient trainer, the subspace alignment bound, and the
//! (c1..c4) decomposition of the two predictive rows.

use crate::augment::{augmentation_moments, w_blocks, AugMoments, SPU_SIGMA_COEF};
use crate::error::{Error, Result};
use crate::linalg::{inv_sqrt_sym, sym_eig};
use crate::model::{decompose, ModelParams};
use crate::rng::Stream;
use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSource {
    ClosedForm,
    GradientTrained,
}

/// k×d linear feature extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub phi: Matrix,
    pub source: FeatureSource,
    /// Whitened eigenvalues of the rows (closed form only).
    pub nu: Vec<f64>,
}

impl FeatureMap {
    pub fn k(&self) -> usize {
        self.phi.rows()
    }

    pub fn d(&self) -> usize {
        self.phi.cols()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.phi.matvec(x)
    }
}

/// Every whitened direction, not just the top k.
#[derive(Debug, Clone)]
pub struct BtSpectrum {
    /// d×d, rows sorted by `nu` descending, sign-canonical.
    pub rows: Matrix,
    pub nu: Vec<f64>,
}

impl BtSpectrum {
    pub fn top(&self, k: usize) -> FeatureMap {
        let idx: Vec<usize> = (0..k).collect();
        FeatureMap {
            phi: self.rows.select_rows(&idx),
            source: FeatureSource::ClosedForm,
            nu: self.nu[..k].to_vec(),
        }
    }
}

/// Rows Uᵀ Σ_A^{-1/2} for all eigenvectors U of Σ_A^{-1/2} Σ̃ Σ_A^{-1/2}.
pub fn bt_spectrum(m: &AugMoments, p: &ModelParams) -> Result<BtSpectrum> {
    let s = inv_sqrt_sym(&m.sigma_a)?;
    let c = s.matmul(&m.sigma_tilde).matmul(&s);
    let e = sym_eig(&c)?;
    let mut rows = e.vectors.transpose().matmul(&s);
    canonicalize_rows(&mut rows, p);
    Ok(BtSpectrum { rows, nu: e.values })
}

/// Closed-form top-k solution on the union of both domains, k = `p.k`.
pub fn bt_closed_form(p: &ModelParams) -> Result<FeatureMap> {
    p.validate()?;
    Ok(bt_spectrum(&augmentation_moments(p), p)?.top(p.k))
}

/// Sign convention: the first row with a W component gets c3 ≤ 0, the
/// second gets c2 ≥ 0; everything else has its largest entry positive.
fn canonicalize_rows(rows: &mut Matrix, p: &ModelParams) {
    let mut seen_w = 0;
    for i in 0..rows.rows() {
        let r = rows.row(i).to_vec();
        let dec = decompose(&r, p).expect("row length is d");
        let w2 = dec.a_inv * dec.a_inv + dec.a_spu * dec.a_spu;
        let n2: f64 = r.iter().map(|x| x * x).sum();
        let big = r.iter().copied().fold(0.0f64, |b, x| if x.abs() > b.abs() { x } else { b });
        let flip = if w2 > 1e-12 * n2 {
            seen_w += 1;
            let tiny = 1e-12 * n2.sqrt();
            match seen_w {
                1 if dec.a_spu.abs() > tiny => dec.a_spu > 0.0,
                2 if dec.a_inv.abs() > tiny => dec.a_inv < 0.0,
                _ if dec.a_inv.abs() > tiny => dec.a_inv < 0.0,
                _ => dec.a_spu < 0.0,
            }
        } else {
            big < 0.0
        };
        if flip {
            rows.row_mut(i).iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// L(Φ) = 2·tr(Φ(Σ_A − Σ̃)Φᵀ) + κ‖ΦΣ_AΦᵀ − I‖_F² and its gradient.
pub fn bt_loss_grad(phi: &Matrix, m: &AugMoments, kappa: f64) -> (f64, Matrix) {
    let diff = &m.sigma_a - &m.sigma_tilde;
    let pd = phi.matmul(&diff);
    let pa = phi.matmul(&m.sigma_a);
    let gram = pa.matmul(&phi.transpose());
    let e = &gram - &Matrix::identity(phi.rows());
    let loss = 2.0 * pd.inner(phi) + kappa * e.inner(&e);
    let grad = &pd.scale(4.0) + &e.matmul(&pa).scale(4.0 * kappa);
    (loss, grad)
}

pub fn bt_loss(phi: &Matrix, m: &AugMoments, kappa: f64) -> f64 {
    bt_loss_grad(phi, m, kappa).0
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub map: FeatureMap,
    /// Loss before each step, then the final loss.
    pub losses: Vec<f64>,
    pub final_loss: f64,
    pub grad_norm: f64,
}

pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_STEPS: usize = 20_000;
const DIVERGED: f64 = 1e12;

/// Full-batch gradient descent from `init`.
pub fn bt_descend(m: &AugMoments, init: Matrix, kappa: f64, steps: usize, lr: f64) -> Result<TrainOutcome> {
    bt_descend_tol(m, init, kappa, steps, lr, 0.0)
}

/// [`bt_descend`] that also stops once ‖∇L‖_F ≤ `grad_tol`.
pub fn bt_descend_tol(m: &AugMoments, init: Matrix, kappa: f64, max_steps: usize, lr: f64, grad_tol: f64) -> Result<TrainOutcome> {
    if !(kappa > 0.0) || !(lr > 0.0) {
        return Err(Error::Domain(format!("need kappa > 0 and lr > 0 (kappa = {kappa}, lr = {lr})")));
    }
    let mut phi = init;
    let mut losses = Vec::new();
    let mut step = 0;
    let (final_loss, grad) = loop {
        let (loss, grad) = bt_loss_grad(&phi, m, kappa);
        if !(loss <= DIVERGED) {
            return Err(Error::Diverged { step, loss });
        }
        losses.push(loss);
        if step == max_steps || grad.frobenius() <= grad_tol {
            break (loss, grad);
        }
        phi = &phi - &grad.scale(lr);
        step += 1;
    };
    Ok(TrainOutcome {
        map: FeatureMap { phi, source: FeatureSource::GradientTrained, nu: Vec::new() },
        losses,
        final_loss,
        grad_norm: grad.frobenius(),
    })
}

/// Train k = `p.k` rows on the union moments from i.i.d. N(0, 1/d) entries.
pub fn bt_gradient_train(p: &ModelParams, kappa: f64, steps: usize, lr: f64, rng: &mut Stream) -> Result<TrainOutcome> {
    bt_gradient_train_tol(p, kappa, steps, lr, 0.0, rng)
}

/// [`bt_gradient_train`] with the early stop of [`bt_descend_tol`].
pub fn bt_gradient_train_tol(p: &ModelParams, kappa: f64, max_steps: usize, lr: f64, grad_tol: f64, rng: &mut Stream) -> Result<TrainOutcome> {
    p.validate()?;
    let d = p.d();
    let sd = (1.0 / d as f64).sqrt();
    let mut init = Matrix::zeros(p.k, d);
    for i in 0..p.k {
        for x in init.row_mut(i) {
            *x = sd * rng.normal();
        }
    }
    bt_descend_tol(&augmentation_moments(p), init, kappa, max_steps, lr, grad_tol)
}

/// Outcome of comparing a trained map with the closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubspaceBound {
    /// min_W E‖WΦ⋆(a) − Φ̂(a)‖².
    pub achieved: f64,
    /// kε / (2γ_{k+1}).
    pub bound: f64,
    /// γ_{k+1} = 1 − ν_{k+1}.
    pub gamma_next: f64,
    /// Lower estimate of γ_{k+1} used by the bound.
    pub gamma_next_lower: f64,
    pub epsilon: f64,
    /// L(Φ̂, κ) as evaluated here.
    pub loss: f64,
    /// L(Φ̂, κ) ≤ ε.
    pub low_loss: bool,
    /// The bound exceeds E‖Φ̂(a)‖², which caps any alignment error.
    pub vacuous: bool,
    pub holds: bool,
}

/// Alignment of `phi_hat` to the span of the top-k closed-form rows in the
/// Σ_A metric, against the low-loss bound.
pub fn bt_subspace_bound(phi_hat: &FeatureMap, epsilon: f64, kappa: f64, p: &ModelParams) -> Result<SubspaceBound> {
    let m = augmentation_moments(p);
    let spec = bt_spectrum(&m, p)?;
    let (k, d) = (phi_hat.k(), p.d());
    if phi_hat.d() != d {
        return Err(Error::Dimension { expected: d, got: phi_hat.d() });
    }
    if k >= d {
        return Err(Error::Domain("alignment bound needs k < d".into()));
    }
    let pa = phi_hat.phi.matmul(&m.sigma_a);
    let eta = pa.matmul(&spec.rows.transpose());
    let mut achieved = 0.0;
    let mut energy = 0.0;
    for i in 0..k {
        let e_i: f64 = pa.row(i).iter().zip(phi_hat.phi.row(i)).map(|(a, b)| a * b).sum();
        let in_top: f64 = eta.row(i)[..k].iter().map(|x| x * x).sum();
        energy += e_i;
        achieved += (e_i - in_top).max(0.0);
    }
    let gamma_next = 1.0 - spec.nu[k];
    let gamma_1 = 1.0 - spec.nu[0];
    let kf = k as f64;
    let bound = kf * epsilon / (2.0 * gamma_next);
    let gamma_next_lower = 2.0 * gamma_1 * gamma_1 / (kf * epsilon) * (1.0 - (epsilon / kappa).sqrt()) - gamma_1 / kf;
    let loss = bt_loss(&phi_hat.phi, &m, kappa);
    Ok(SubspaceBound {
        achieved,
        bound,
        gamma_next,
        gamma_next_lower,
        epsilon,
        loss,
        low_loss: loss <= epsilon * (1.0 + 1e-12),
        vacuous: bound >= energy,
        holds: achieved <= bound,
    })
}

/// φ₁ = c1·w_inv + c3·w_spu, φ₂ = c2·w_inv + c4·w_spu, plus the pieces of
/// the 2×2 reduction that produce them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplificationCoeffs {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub alpha: f64,
    pub beta: f64,
    pub theta: f64,
    pub tau: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda1_tilde: f64,
    pub lambda2_tilde: f64,
    /// Whitened eigenvalues of the two rows.
    pub nu1: f64,
    pub nu2: f64,
}

impl AmplificationCoeffs {
    /// Coefficients for features equal to the raw (w_inv, w_spu) coordinates.
    pub fn identity() -> Self {
        Self {
            c1: 1.0,
            c2: 0.0,
            c3: 0.0,
            c4: 1.0,
            alpha: 0.0,
            beta: 0.0,
            theta: 0.0,
            tau: 1.0,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda1_tilde: 1.0,
            lambda2_tilde: 1.0,
            nu1: 1.0,
            nu2: 1.0,
        }
    }

    /// The scale-free trigonometric form (cotα/τ + tanθ, −1 + cotα·tanθ/τ,
    /// 1/τ − cotα·tanθ, tanθ/τ + cotα), before any sign flip.
    pub fn trig_form(&self) -> [f64; 4] {
        let (ca, tt, tau) = (1.0 / self.alpha.tan(), self.theta.tan(), self.tau);
        [ca / tau + tt, -1.0 + ca * tt / tau, 1.0 / tau - ca * tt, tt / tau + ca]
    }

    /// The 2×k (k = 2) matrix of rows in the (w_inv, w_spu) basis.
    pub fn rows(&self) -> [[f64; 2]; 2] {
        [[self.c1, self.c3], [self.c2, self.c4]]
    }
}

/// Rotation-reflection [[cos t, sin t], [sin t, −cos t]].
fn reflect(t: f64) -> Matrix {
    let (s, c) = t.sin_cos();
    Matrix::from_rows(&[vec![c, s], vec![s, -c]])
}

/// Top eigenpair angle of a symmetric 2×2, first component made ≥ 0.
fn eig2(a: &Matrix) -> Result<(f64, f64, f64)> {
    let e = sym_eig(a)?;
    let (mut x, mut y) = (e.vectors[(0, 0)], e.vectors[(1, 0)]);
    if x < 0.0 || (x == 0.0 && y < 0.0) {
        x = -x;
        y = -y;
    }
    Ok((e.values[0], e.values[1], y.atan2(x)))
}

/// Amplification from the 2×2 W blocks only; no d×d work, so any dsp is
/// fine. `spu_sigma_coef` selects the σsp² constant of the Σ_A block.
pub fn amplification_blocks(p: &ModelParams, spu_sigma_coef: f64) -> Result<AmplificationCoeffs> {
    if !p.w_star_is_all_ones() {
        return Err(Error::Unsupported("amplification needs w* = 1/√din".into()));
    }
    let (sa, st) = w_blocks(p, spu_sigma_coef);
    let (lambda1, lambda2, alpha) = eig2(&sa)?;
    let (lambda1_tilde, lambda2_tilde, beta) = eig2(&st)?;
    if !(lambda2 > 1e-14 * lambda1) {
        return Err(Error::Singular { index: 1, value: lambda2, floor: 1e-14 * lambda1 });
    }
    let lam_is = Matrix::diag(&[lambda1.powf(-0.5), lambda2.powf(-0.5)]);
    let lt_s = Matrix::diag(&[lambda1_tilde.max(0.0).sqrt(), lambda2_tilde.max(0.0).sqrt()]);
    let pa = reflect(alpha);
    let n = lam_is.matmul(&pa).matmul(&reflect(beta)).matmul(&lt_s);
    let (nu1, nu2, theta) = eig2(&n.matmul(&n.transpose()))?;
    let u1 = [theta.cos(), theta.sin()];
    let u2 = [theta.sin(), -theta.cos()];
    let back = lam_is.matmul(&pa);
    let row = |u: [f64; 2]| back.transpose().matvec(&u);
    let (mut r1, mut r2) = (row(u1), row(u2));
    if r1[1] > 0.0 {
        r1.iter_mut().for_each(|x| *x = -*x);
    }
    if r2[0] < 0.0 {
        r2.iter_mut().for_each(|x| *x = -*x);
    }
    Ok(AmplificationCoeffs {
        c1: r1[0],
        c3: r1[1],
        c2: r2[0],
        c4: r2[1],
        alpha,
        beta,
        theta,
        tau: (lambda1 / lambda2).sqrt(),
        lambda1,
        lambda2,
        lambda1_tilde,
        lambda2_tilde,
        nu1,
        nu2,
    })
}

/// Largest d for which [`amplification`] also runs the dense closed form.
pub const CROSS_CHECK_MAX_D: usize = 500;

/// Amplification from the exact blocks, cross-checked against the two
/// W rows of the dense closed form when d ≤ [`CROSS_CHECK_MAX_D`].
pub fn amplification(p: &ModelParams) -> Result<AmplificationCoeffs> {
    let c = amplification_blocks(p, SPU_SIGMA_COEF)?;
    if p.d() <= CROSS_CHECK_MAX_D {
        let spec = bt_spectrum(&augmentation_moments(p), p)?;
        let w_rows = w_rows(&spec, p)?;
        let want = c.rows();
        for (j, (got, want)) in w_rows.iter().zip(want).enumerate() {
            let err = (got[0] - want[0]).abs().max((got[1] - want[1]).abs());
            let scale = want[0].abs().max(want[1].abs()).max(1.0);
            if err > 1e-6 * scale {
                return Err(Error::CrossCheck(format!(
                    "row {} of the closed form is ({:.12}, {:.12}), the 2x2 reduction gives ({:.12}, {:.12})",
                    j + 1,
                    got[0],
                    got[1],
                    want[0],
                    want[1]
                )));
            }
        }
    }
    Ok(c)
}

/// (a_inv, a_spu) of the two closed-form rows that live in W, by
/// decreasing whitened eigenvalue.
pub fn w_rows(spec: &BtSpectrum, p: &ModelParams) -> Result<[[f64; 2]; 2]> {
    let mut out = Vec::with_capacity(2);
    for i in 0..spec.rows.rows() {
        let dec = decompose(spec.rows.row(i), p)?;
        let n2: f64 = spec.rows.row(i).iter().map(|x| x * x).sum();
        if dec.a_inv.powi(2) + dec.a_spu.powi(2) > 0.5 * n2 {
            out.push([dec.a_inv, dec.a_spu]);
        }
    }
    if out.len() != 2 {
        return Err(Error::CrossCheck(format!("found {} rows inside W, expected 2", out.len())));
    }
    Ok([out[0], out[1]])
}

/// Limits along γ = K1/√z, σsp = K2√z, dsp = z as z → ∞.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymptoticLimits {
    pub tau_tan_theta: f64,
    pub cot_alpha: f64,
    pub z_cot_alpha: f64,
    pub z_over_tau_sq: f64,
}

impl AsymptoticLimits {
    /// c1/c3 has the same limit as τ·tanθ.
    pub fn c1_over_c3(&self) -> f64 {
        self.tau_tan_theta
    }
}

/// Limits for the exact Σ_A block.
pub fn asymptotic_limits(k1: f64, k2: f64, din: usize, sigma_in: f64) -> AsymptoticLimits {
    asymptotic_limits_with(k1, k2, din, sigma_in, SPU_SIGMA_COEF)
}

/// Limits for a Σ_A block whose w_spu entry carries `q·σsp²` (times 4).
/// At q = 2/3 this is [`asymptotic_limits`]; τ·tanθ scales with
/// (q − ½)/(2/3 − ½).
pub fn asymptotic_limits_with(k1: f64, k2: f64, din: usize, sigma_in: f64, q: f64) -> AsymptoticLimits {
    let s2 = sigma_in * sigma_in;
    let shrink = 1.0 - 1.0 / din as f64;
    let l = 1.0 + k2 * k2;
    AsymptoticLimits {
        tau_tan_theta: k1 * k2 * k2 / (l * 2.0 * s2 * shrink) * (q - 0.5) * 6.0,
        cot_alpha: 0.0,
        z_cot_alpha: k1 / (1.0 + 2.0 * q * k2 * k2),
        z_over_tau_sq: (2.0 * s2 / 3.0) * shrink / (1.0 + 2.0 * q * k2 * k2),
    }
}

/// Instance on the slice γ = K1/√z, σsp = K2√z, dsp = z (z rounded to an
/// integer dsp).
pub fn asymptotic_slice(base: &ModelParams, k1: f64, k2: f64, z: f64) -> ModelParams {
    let mut p = base.clone();
    p.d_sp = z.round() as usize;
    let z = p.d_sp as f64;
    p.gamma = k1 / z.sqrt();
    p.sigma_sp = k2 * z.sqrt();
    p
}

/// L√dsp/γ with L = 1 + K2².
pub fn c2_over_c4_limit(p: &ModelParams, k2: f64) -> f64 {
    (1.0 + k2 * k2) * (p.d_sp as f64).sqrt() / p.gamma
}
