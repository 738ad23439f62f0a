//! Linear heads: closed-form ERM and probe solutions, a gradient-descent
//! probe on the exponential loss, and target accuracy (erfc closed form and
//! Monte Carlo).

use rayon::prelude::*;

use crate::contrastive::{AmplificationCoeffs, FeatureMap, FeatureSource};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, sym_eig};
use crate::model::{sample_point, Domain, ModelParams};
use crate::rng::{Stream, StreamId};
use crate::specialfns::{erfc_raw, sgn};
use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadSpace {
    Input(usize),
    Feature(usize),
}

/// Unit-norm linear head with its target signal μ and noise scale σ:
/// on target data y·hᵀz ∼ μ + N(0, σ²).
#[derive(Debug, Clone, PartialEq)]
pub struct HeadState {
    pub space: HeadSpace,
    pub h: Vec<f64>,
    pub mu: f64,
    pub sigma: f64,
}

/// (μ, σ) of the input-space direction v on target data.
pub fn direction_stats(v: &[f64], p: &ModelParams) -> (f64, f64) {
    let (vin, vsp) = v.split_at(p.d_in);
    let along = dot(vin, &p.w_star);
    let perp2 = (dot(vin, vin) - along * along).max(0.0);
    let s2 = p.sigma_in * p.sigma_in * perp2 + p.sigma_sp * p.sigma_sp * dot(vsp, vsp);
    (p.gamma * along, s2.sqrt())
}

/// Φᵀh, or h itself when there is no feature map.
pub fn input_direction(h: &[f64], featmap: Option<&FeatureMap>) -> Vec<f64> {
    match featmap {
        Some(f) => f.phi.tmatvec(h),
        None => h.to_vec(),
    }
}

impl HeadState {
    /// Normalise `h` and attach its target statistics.
    pub fn new(h: Vec<f64>, featmap: Option<&FeatureMap>, p: &ModelParams) -> Result<Self> {
        let n = norm(&h);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::UndefinedClassifier);
        }
        let h: Vec<f64> = h.iter().map(|x| x / n).collect();
        let (mu, sigma) = direction_stats(&input_direction(&h, featmap), p);
        let space = match featmap {
            Some(f) => HeadSpace::Feature(f.k()),
            None => HeadSpace::Input(h.len()),
        };
        Ok(Self { space, h, mu, sigma })
    }

    pub fn accuracy(&self) -> f64 {
        accuracy_from_stats(self.mu, self.sigma)
    }
}

/// P(μ + z > 0), z ∼ N(0, σ²); at σ = 0 a zero margin counts as a coin flip.
pub fn accuracy_from_stats(mu: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return match mu.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => 1.0,
            Some(std::cmp::Ordering::Equal) => 0.5,
            _ => 0.0,
        };
    }
    0.5 * erfc_raw(-mu / (std::f64::consts::SQRT_2 * sigma))
}

/// Accuracy of l1·w_inv + l2·w_spu on target.
pub fn accuracy_closed_form(l1: f64, l2: f64, p: &ModelParams) -> Result<f64> {
    if l1 == 0.0 && l2 == 0.0 {
        return Err(Error::UndefinedClassifier);
    }
    Ok(accuracy_from_stats(l1 * p.gamma, l2.abs() * p.sigma_sp))
}

/// Fisher direction (γ·w_inv + √dsp·w_spu)/√(γ² + dsp).
pub fn erm_closed_form(p: &ModelParams) -> HeadState {
    let sd = (p.d_sp as f64).sqrt();
    let h: Vec<f64> = p.w_inv().iter().zip(p.w_spu()).map(|(a, b)| p.gamma * a + sd * b).collect();
    HeadState::new(h, None, p).expect("gamma or d_sp is positive")
}

/// Max-margin head over the two amplified features, h ∝ (c1γ + c3√dsp,
/// c2γ + c4√dsp).
pub fn cl_probe_closed_form(c: &AmplificationCoeffs, p: &ModelParams) -> Result<HeadState> {
    let sd = (p.d_sp as f64).sqrt();
    let h = [c.c1 * p.gamma + c.c3 * sd, c.c2 * p.gamma + c.c4 * sd];
    let n = norm(&h);
    if !(n > 0.0) {
        return Err(Error::UndefinedClassifier);
    }
    let h = vec![h[0] / n, h[1] / n];
    let mu = p.gamma * (c.c1 * h[0] + c.c2 * h[1]);
    let sigma = (p.sigma_sp * (c.c3 * h[0] + c.c4 * h[1])).abs();
    Ok(HeadState { space: HeadSpace::Feature(2), h, mu, sigma })
}

/// Singular values of P⊥Φ_inᵀ below this fraction of ‖Φ‖_F count as zero
/// for closed-form maps (round-off only).
pub const NULL_TOL_CLOSED: f64 = 1e-10;
/// The same for gradient-trained maps, whose rows carry residual w*⊥
/// components at the level the trainer stopped at.
pub const NULL_TOL_TRAINED: f64 = 1e-4;

/// Population max-margin head on source data over any feature map.
///
/// Source features are Gaussian only through the invariant block's w*⊥
/// noise, so a head separates the source population exactly when Φᵀh has
/// no such component; among those heads the margin is hᵀΦμ₊ with μ₊ the
/// y = +1 source mean. This is also the direction gradient descent on the
/// population exponential loss converges to.
pub fn probe_max_margin(featmap: &FeatureMap, p: &ModelParams) -> Result<HeadState> {
    let tol = match featmap.source {
        FeatureSource::ClosedForm => NULL_TOL_CLOSED,
        FeatureSource::GradientTrained => NULL_TOL_TRAINED,
    };
    probe_max_margin_tol(featmap, p, tol)
}

/// [`probe_max_margin`] with an explicit relative null-space tolerance.
pub fn probe_max_margin_tol(featmap: &FeatureMap, p: &ModelParams, rel_tol: f64) -> Result<HeadState> {
    let k = featmap.k();
    let b = featmap.apply(&p.source_mean());
    // a = P⊥ Φ_inᵀ, din×k
    let a = Matrix::from_fn(p.d_in, k, |i, j| {
        let row = featmap.phi.row(j);
        let along = dot(&row[..p.d_in], &p.w_star);
        row[i] - along * p.w_star[i]
    });
    let e = sym_eig(&a.transpose().matmul(&a))?;
    let tol = (rel_tol * featmap.phi.frobenius()).powi(2);
    let mut h = b.clone();
    for (l, &lam) in e.values.iter().enumerate() {
        if lam > tol {
            let u = e.vectors.col(l);
            let c = dot(&u, &b);
            h.iter_mut().zip(&u).for_each(|(x, ui)| *x -= c * ui);
        }
    }
    if norm(&h) <= 1e-12 * norm(&b).max(f64::MIN_POSITIVE) {
        return Err(Error::Domain("no feature direction separates the source population".into()));
    }
    HeadState::new(h, Some(featmap), p)
}

/// Result of [`probe_gd`].
#[derive(Debug, Clone)]
pub struct ProbeOutcome {
    /// Unit direction.
    pub h: Vec<f64>,
    pub steps: usize,
    pub converged: bool,
    /// Exponential loss at every reporting point (every 100 steps).
    pub losses: Vec<f64>,
}

fn exp_loss_grad(h: &[f64], z: &Matrix, ys: &[f64]) -> (f64, Vec<f64>) {
    let n = ys.len();
    let m: Vec<f64> = (0..n).map(|i| -ys[i] * dot(h, z.row(i))).collect();
    let top = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = m.iter().map(|x| (x - top).exp()).collect();
    let s: f64 = w.iter().sum();
    let scale = top.exp() / n as f64;
    let mut g = vec![0.0; h.len()];
    for i in 0..n {
        let c = -w[i] * ys[i] * scale;
        g.iter_mut().zip(z.row(i)).for_each(|(gj, zj)| *gj += c * zj);
    }
    // loss in log-sum-exp form
    let loss = (top + s.ln() - (n as f64).ln()).exp();
    (loss, g)
}

/// Full-batch gradient descent on (1/n)Σ exp(−yᵢ hᵀzᵢ) from h = 0. Only the
/// direction is returned; it is checked every 100 steps and the run stops
/// once it moves less than 1e-8.
pub fn probe_gd(features: &Matrix, ys: &[f64], steps: usize, lr: f64) -> Result<ProbeOutcome> {
    let (n, k) = (features.rows(), features.cols());
    if n == 0 || ys.len() != n {
        return Err(Error::Dimension { expected: n.max(1), got: ys.len() });
    }
    let mut h = vec![0.0; k];
    let mut last_dir: Option<Vec<f64>> = None;
    let mut losses = Vec::new();
    let mut step = 0;
    let mut converged = false;
    while step < steps {
        let (loss, g) = exp_loss_grad(&h, features, ys);
        if !loss.is_finite() {
            return Err(Error::NonFinite { iter: step, dump: format!("loss = {loss}, h = {h:?}") });
        }
        if step % 100 == 0 {
            losses.push(loss);
            let nh = norm(&h);
            if nh > 0.0 {
                let dir: Vec<f64> = h.iter().map(|x| x / nh).collect();
                if let Some(prev) = &last_dir {
                    let moved = norm(&dir.iter().zip(prev).map(|(a, b)| a - b).collect::<Vec<_>>());
                    if moved < 1e-8 {
                        converged = true;
                        break;
                    }
                }
                last_dir = Some(dir);
            }
        }
        h.iter_mut().zip(&g).for_each(|(x, gi)| *x -= lr * gi);
        step += 1;
    }
    let nh = norm(&h);
    if !(nh > 0.0) {
        return Err(Error::UndefinedClassifier);
    }
    let h = h.iter().map(|x| x / nh).collect();
    Ok(ProbeOutcome { h, steps: step, converged, losses })
}

const MC_SHARD: usize = 1 << 16;

/// Fraction of `n` target draws with sgn(hᵀΦx) = y. Sharded over child
/// streams of (seed, id), so the value does not depend on thread count.
pub fn accuracy_mc(head: &HeadState, featmap: Option<&FeatureMap>, p: &ModelParams, n: usize, seed: u64, id: StreamId) -> f64 {
    let v = input_direction(&head.h, featmap);
    let shards = n.div_ceil(MC_SHARD);
    let hits: usize = (0..shards)
        .into_par_iter()
        .map(|s| {
            let mut rng = Stream::child(seed, id, s as u64);
            let m = MC_SHARD.min(n - s * MC_SHARD);
            let mut x = vec![0.0; p.d()];
            let mut hits = 0;
            for _ in 0..m {
                let y = sample_point(p, Domain::Target, &mut rng, &mut x);
                if sgn(dot(&v, &x)) == y {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    hits as f64 / n as f64
}

/// B = 4·max(σin, σsp, 1)·(√dim + √log(2n/δ)) + γ.
fn margin_radius(n: usize, delta: f64, p: &ModelParams, dim: usize) -> f64 {
    let s = p.sigma_in.max(p.sigma_sp).max(1.0);
    4.0 * s * ((dim as f64).sqrt() + (2.0 * n as f64 / delta).ln().sqrt()) + p.gamma
}

/// Margin generalisation bound in input space (dimension din + dsp).
pub fn ssl_margin_bound(n: usize, xi: f64, delta: f64, p: &ModelParams, emp_margin_err: f64) -> Result<f64> {
    ssl_margin_bound_dim(n, xi, delta, p, emp_margin_err, p.d())
}

/// The same bound with `dim` in place of din + dsp (k for CL features).
pub fn ssl_margin_bound_dim(n: usize, xi: f64, delta: f64, p: &ModelParams, emp_margin_err: f64, dim: usize) -> Result<f64> {
    if n == 0 || !(xi > 0.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain("need n >= 1, xi > 0 and delta in (0, 1)".into()));
    }
    let b = margin_radius(n, delta, p, dim);
    if xi > 4.0 * b {
        return Err(Error::Domain(format!("xi = {xi} exceeds 4B = {}", 4.0 * b)));
    }
    let nf = n as f64;
    let loglog = (4.0 * b / xi).log2().ln().max(0.0);
    Ok(emp_margin_err + 4.0 * (b / xi) / nf.sqrt() + ((2.0 / delta).ln() / nf).sqrt() + (loglog / nf).sqrt())
}
