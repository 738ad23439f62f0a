//! Self-training of a linear head on its own target pseudolabels with
//! per-step renormalisation: from scratch in input space, over the two
//! amplified contrastive features (STOC), over any feature map, and on a
//! finite unlabeled pool.
//!
//! Every population update is h ← (h − η∇g)/‖·‖ with g(μ, σ) the expected
//! exponential loss of the pseudolabelled head.

use rayon::prelude::*;

use crate::classify::{accuracy_from_stats, cl_probe_closed_form, direction_stats, erm_closed_form, input_direction};
use crate::contrastive::{AmplificationCoeffs, FeatureMap};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::model::{decompose, sample_point, Domain, ModelParams};
use crate::rng::{Stream, StreamId};
use crate::specialfns::{sgn, st_loss_grad};

pub const DEFAULT_ETA: f64 = 0.05;
pub const DEFAULT_MAX_ITERS: usize = 200_000;
pub const TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub t: usize,
    pub h: Vec<f64>,
    pub mu: f64,
    /// |σ_t|.
    pub sigma: f64,
    pub a_inv: f64,
    pub a_spu: f64,
    pub acc: f64,
    /// Stopping statistic at this iterate.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SelfTrainTrace {
    pub iters: Vec<TracePoint>,
    pub converged: bool,
    pub converge_iter: Option<usize>,
    /// Number of iterates at which the signed σ_t changed sign.
    pub sigma_sign_changes: usize,
    /// Set when the run stopped early for a reason other than convergence.
    pub diagnostic: Option<String>,
}

impl SelfTrainTrace {
    pub fn last(&self) -> &TracePoint {
        self.iters.last().expect("trace has the initial point")
    }

    pub fn final_acc(&self) -> f64 {
        self.last().acc
    }

    /// CSV with columns t, h1..hk, mu, sigma, a_inv, a_spu, acc.
    pub fn to_csv(&self) -> String {
        let k = self.iters.first().map_or(0, |p| p.h.len());
        let mut s = String::from("t");
        for j in 1..=k {
            s.push_str(&format!(",h{j}"));
        }
        s.push_str(",mu,sigma,a_inv,a_spu,acc\n");
        for p in &self.iters {
            s.push_str(&p.t.to_string());
            for x in &p.h {
                s.push_str(&format!(",{x:.10e}"));
            }
            s.push_str(&format!(
                ",{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}\n",
                p.mu, p.sigma, p.a_inv, p.a_spu, p.acc
            ));
        }
        s
    }
}

fn normalize(h: &mut [f64]) -> f64 {
    let n = norm(h);
    h.iter_mut().for_each(|x| *x /= n);
    n
}

fn check_finite(t: usize, h: &[f64], mu: f64, sigma: f64) -> Result<()> {
    if h.iter().all(|x| x.is_finite()) && mu.is_finite() && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { iter: t, dump: format!("h = {h:?}, mu = {mu}, sigma = {sigma}") })
    }
}

/// From-scratch ST on the (a_inv, a_spu) coordinates of the ERM head.
///
/// μ = γ·a_inv, σ = σsp·|a_spu|; a_inv moves by −(η/2)α₁γ and a_spu is
/// scaled by 1 − (η/2)α₂σsp². Stops when ‖h_{t+1} − h_t‖ < 1e-10. A
/// non-positive μ ends the run with a diagnostic.
pub fn st_scratch_run(p: &ModelParams, eta: f64, max_iters: usize) -> Result<SelfTrainTrace> {
    p.validate()?;
    if !(eta > 0.0) {
        return Err(Error::Domain("eta must be positive".into()));
    }
    let erm = erm_closed_form(p);
    let d0 = decompose(&erm.h, p)?;
    let mut h = vec![d0.a_inv, d0.a_spu];
    let point = |t: usize, h: &[f64], residual: f64| {
        let (mu, sigma) = (p.gamma * h[0], (p.sigma_sp * h[1]).abs());
        TracePoint { t, h: h.to_vec(), mu, sigma, a_inv: h[0], a_spu: h[1], acc: accuracy_from_stats(mu, sigma), residual }
    };
    let mut tr = SelfTrainTrace { iters: vec![point(0, &h, f64::NAN)], ..Default::default() };
    for t in 1..=max_iters {
        let mu = p.gamma * h[0];
        if !(mu > 0.0) {
            tr.diagnostic = Some(format!("mu_t = {mu:e} <= 0 at t = {}; trace truncated", t - 1));
            break;
        }
        let sigma = p.sigma_sp * h[1].abs();
        let lg = st_loss_grad(mu, sigma);
        let mut next = [
            h[0] - 0.5 * eta * lg.alpha1 * p.gamma,
            h[1] * (1.0 - 0.5 * eta * lg.alpha2 * p.sigma_sp * p.sigma_sp),
        ];
        normalize(&mut next);
        check_finite(t, &next, mu, sigma)?;
        let step = ((next[0] - h[0]).powi(2) + (next[1] - h[1]).powi(2)).sqrt();
        if next[1].signum() != h[1].signum() {
            tr.sigma_sign_changes += 1;
        }
        h = next.to_vec();
        tr.iters.push(point(t, &h, step));
        if step < TOL {
            tr.converged = true;
            tr.converge_iter = Some(t);
            break;
        }
    }
    Ok(tr)
}

/// Scaled update direction for STOC: δ = (c1γα₁ + σc3σspα₂, c2γα₁ +
/// σc4σspα₂) with signed σ; δ/2 is the gradient of g(μ(h), σ(h)).
pub fn stoc_delta(c: &AmplificationCoeffs, p: &ModelParams, h: [f64; 2]) -> [f64; 2] {
    let mu = p.gamma * (c.c1 * h[0] + c.c2 * h[1]);
    let sigma = p.sigma_sp * (c.c3 * h[0] + c.c4 * h[1]);
    let lg = st_loss_grad(mu, sigma);
    let s = sigma * p.sigma_sp * lg.alpha2;
    [c.c1 * p.gamma * lg.alpha1 + c.c3 * s, c.c2 * p.gamma * lg.alpha1 + c.c4 * s]
}

/// |h1δ2 − h2δ1|; zero exactly when h ∥ δ.
pub fn stoc_convergence_residual(h: [f64; 2], delta: [f64; 2]) -> f64 {
    (h[0] * delta[1] - h[1] * delta[0]).abs()
}

/// ST over the two amplified features, from the closed-form probe.
/// Stops when the residual |h1δ2 − h2δ1| drops below 1e-10.
pub fn stoc_run(c: &AmplificationCoeffs, p: &ModelParams, eta: f64, max_iters: usize) -> Result<SelfTrainTrace> {
    if !(eta > 0.0) {
        return Err(Error::Domain("eta must be positive".into()));
    }
    let init = cl_probe_closed_form(c, p)?;
    let mut h = [init.h[0], init.h[1]];
    let point = |t: usize, h: [f64; 2], residual: f64| {
        let mu = p.gamma * (c.c1 * h[0] + c.c2 * h[1]);
        let sigma = (p.sigma_sp * (c.c3 * h[0] + c.c4 * h[1])).abs();
        TracePoint {
            t,
            h: h.to_vec(),
            mu,
            sigma,
            a_inv: c.c1 * h[0] + c.c2 * h[1],
            a_spu: c.c3 * h[0] + c.c4 * h[1],
            acc: accuracy_from_stats(mu, sigma),
            residual,
        }
    };
    let signed_sigma = |h: [f64; 2]| c.c3 * h[0] + c.c4 * h[1];
    let r0 = stoc_convergence_residual(h, stoc_delta(c, p, h));
    let mut tr = SelfTrainTrace { iters: vec![point(0, h, r0)], ..Default::default() };
    for t in 1..=max_iters {
        let delta = stoc_delta(c, p, h);
        let mut next = [h[0] - 0.5 * eta * delta[0], h[1] - 0.5 * eta * delta[1]];
        normalize(&mut next);
        let pt = point(t, next, 0.0);
        check_finite(t, &next, pt.mu, pt.sigma)?;
        if signed_sigma(next).signum() != signed_sigma(h).signum() {
            tr.sigma_sign_changes += 1;
        }
        h = next;
        let residual = stoc_convergence_residual(h, stoc_delta(c, p, h));
        tr.iters.push(TracePoint { residual, ..pt });
        if residual < TOL {
            tr.converged = true;
            tr.converge_iter = Some(t);
            break;
        }
    }
    Ok(tr)
}

/// ∇_h g(μ(h), σ(h)) for a head over `featmap` (or an input-space head).
pub fn population_grad(h: &[f64], featmap: Option<&FeatureMap>, p: &ModelParams) -> (f64, f64, Vec<f64>) {
    let v = input_direction(h, featmap);
    let (mu, sigma) = direction_stats(&v, p);
    let lg = st_loss_grad(mu, sigma);
    // dg/dv = g_μ·γ·w_inv + (g_σ/σ)·(σin² P⊥v_in ⊕ σsp² v_sp), g_σ/σ = α₂/2
    let (vin, vsp) = v.split_at(p.d_in);
    let along = dot(vin, &p.w_star);
    let s2in = p.sigma_in * p.sigma_in;
    let s2sp = p.sigma_sp * p.sigma_sp;
    let half_a2 = 0.5 * lg.alpha2;
    let mut gv = Vec::with_capacity(v.len());
    for (x, w) in vin.iter().zip(&p.w_star) {
        gv.push(lg.dmu * p.gamma * w + half_a2 * s2in * (x - along * w));
    }
    for x in vsp {
        gv.push(half_a2 * s2sp * x);
    }
    let g = match featmap {
        Some(f) => f.phi.matvec(&gv),
        None => gv,
    };
    (mu, sigma, g)
}

fn feature_point(t: usize, h: &[f64], featmap: Option<&FeatureMap>, p: &ModelParams, residual: f64) -> TracePoint {
    let v = input_direction(h, featmap);
    let (mu, sigma) = direction_stats(&v, p);
    let dec = decompose(&v, p).expect("direction has length d");
    TracePoint {
        t,
        h: h.to_vec(),
        mu,
        sigma,
        a_inv: dec.a_inv,
        a_spu: dec.a_spu,
        acc: accuracy_from_stats(mu, sigma),
        residual,
    }
}

/// Population ST of a head over any feature map (input space when
/// `featmap` is `None`), from `init`. Stops when ‖h_{t+1} − h_t‖ < 1e-10.
pub fn st_features_run(featmap: Option<&FeatureMap>, p: &ModelParams, init: &[f64], eta: f64, max_iters: usize) -> Result<SelfTrainTrace> {
    if !(eta > 0.0) {
        return Err(Error::Domain("eta must be positive".into()));
    }
    let mut h = init.to_vec();
    if !(normalize(&mut h) > 0.0) {
        return Err(Error::UndefinedClassifier);
    }
    let mut tr = SelfTrainTrace { iters: vec![feature_point(0, &h, featmap, p, f64::NAN)], ..Default::default() };
    for t in 1..=max_iters {
        let (mu, sigma, g) = population_grad(&h, featmap, p);
        let mut next: Vec<f64> = h.iter().zip(&g).map(|(x, gi)| x - eta * gi).collect();
        normalize(&mut next);
        check_finite(t, &next, mu, sigma)?;
        let step = norm(&next.iter().zip(&h).map(|(a, b)| a - b).collect::<Vec<_>>());
        h = next;
        tr.iters.push(feature_point(t, &h, featmap, p, step));
        if step < TOL {
            tr.converged = true;
            tr.converge_iter = Some(t);
            break;
        }
    }
    Ok(tr)
}

/// Success and failure predicates for ST and STOC on one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    /// γ < 1/(2σsp) and σsp ≥ 1.
    pub st_fails_informal: bool,
    /// γ ≤ 1/(2√σsp) and σsp ≥ 1.
    pub st_fails_formal: bool,
    /// γ ≥ σsp.
    pub st_succeeds: bool,
    /// K1 = γ√dsp, K2 = σsp/√dsp place the instance on the asymptotic slice.
    pub k1: f64,
    pub k2: f64,
    /// dsp ≤ K1²K2^{2/3}.
    pub stoc_condition: bool,
    /// dsp ≤ K1²K2^{2/3}·(din/(2Lσin²(din − 1)))^{2/3}.
    pub stoc_condition_remark: bool,
    /// μ₀ ≥ σsp(−c4)/(γc2), μ₀ ≥ σsp(−c4 − c3)/(γ(c2 + c1)).
    pub stoc_mu_conditions: Option<[bool; 2]>,
    /// γ²/σsp ≥ max((−c3 − c4)/((c2 + c1)|c1|), c4/(c1c2)).
    pub stoc_formal_condition: Option<bool>,
    pub warnings: Vec<String>,
}

pub fn condition_report(p: &ModelParams, c: Option<&AmplificationCoeffs>) -> ConditionReport {
    let (g, ssp) = (p.gamma, p.sigma_sp);
    let (din, dsp) = (p.d_in as f64, p.d_sp as f64);
    let k2 = ssp / dsp.sqrt();
    let k1 = g * dsp.sqrt();
    let l = 1.0 + k2 * k2;
    let base = k1 * k1 * k2.powf(2.0 / 3.0);
    let extra = (din / (2.0 * l * p.sigma_in * p.sigma_in * (din - 1.0))).powf(2.0 / 3.0);
    let mut rep = ConditionReport {
        st_fails_informal: g < 1.0 / (2.0 * ssp) && ssp >= 1.0,
        st_fails_formal: g <= 1.0 / (2.0 * ssp.sqrt()) && ssp >= 1.0,
        st_succeeds: g >= ssp,
        k1,
        k2,
        stoc_condition: dsp <= base,
        stoc_condition_remark: dsp <= base * extra,
        stoc_mu_conditions: None,
        stoc_formal_condition: None,
        warnings: Vec::new(),
    };
    if let Some(c) = c {
        if c.c4.abs() <= c.c3.abs() {
            rep.warnings.push(format!("|c4| = {:.6} does not exceed |c3| = {:.6}", c.c4.abs(), c.c3.abs()));
        }
        if !(c.c2 > 0.0 && c.c1 < 0.0 && c.c3 < 0.0 && c.c4 < 0.0) {
            rep.warnings.push("coefficients outside the c2 > 0 > c1, c3, c4 sign regime".into());
        }
        if let Ok(h0) = cl_probe_closed_form(c, p) {
            let mu0 = h0.mu;
            rep.stoc_mu_conditions = Some([
                mu0 >= ssp * (-c.c4) / (g * c.c2),
                mu0 >= ssp * (-c.c4 - c.c3) / (g * (c.c2 + c.c1)),
            ]);
        }
        let lhs = g * g / ssp;
        let a = (-c.c3 - c.c4) / ((c.c2 + c.c1) * c.c1.abs());
        let b = c.c4 / (c.c1 * c.c2);
        rep.stoc_formal_condition = Some(lhs >= a.max(b));
    }
    rep
}

/// Empirical counterpart of the population runs: the expectation is
/// replaced by an average over a fixed pool of `n_unlabeled` target draws,
/// pseudolabels are refreshed every epoch. Starts from the ERM head in
/// input space, or from the max-margin probe over `featmap`.
pub fn st_empirical_run(
    p: &ModelParams,
    featmap: Option<&FeatureMap>,
    init: &[f64],
    n_unlabeled: usize,
    eta: f64,
    epochs: usize,
    seed: u64,
    id: StreamId,
) -> Result<SelfTrainTrace> {
    if n_unlabeled == 0 {
        return Err(Error::Domain("empty unlabeled pool".into()));
    }
    let k = featmap.map_or(p.d(), FeatureMap::k);
    if init.len() != k {
        return Err(Error::Dimension { expected: k, got: init.len() });
    }
    let pool = feature_pool(p, featmap, n_unlabeled, seed, id);
    let mut h = init.to_vec();
    normalize(&mut h);
    let mut tr = SelfTrainTrace { iters: vec![feature_point(0, &h, featmap, p, f64::NAN)], ..Default::default() };
    const CHUNK: usize = 1 << 14;
    for t in 1..=epochs {
        let g = pool
            .par_chunks(CHUNK * k)
            .map(|chunk| {
                let mut g = vec![0.0; k];
                for z in chunk.chunks_exact(k) {
                    let s: f64 = h.iter().zip(z).map(|(a, &b)| a * b as f64).sum();
                    let w = -sgn(s) * (-s.abs()).exp();
                    g.iter_mut().zip(z).for_each(|(gj, &zj)| *gj += w * zj as f64);
                }
                g
            })
            .reduce(|| vec![0.0; k], |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            });
        let inv_n = 1.0 / n_unlabeled as f64;
        let mut next: Vec<f64> = h.iter().zip(&g).map(|(x, gi)| x - eta * gi * inv_n).collect();
        normalize(&mut next);
        let step = norm(&next.iter().zip(&h).map(|(a, b)| a - b).collect::<Vec<_>>());
        h = next;
        tr.iters.push(feature_point(t, &h, featmap, p, step));
        if step < TOL {
            tr.converged = true;
            tr.converge_iter = Some(t);
            break;
        }
    }
    Ok(tr)
}

/// Target draws mapped through Φ (or kept raw), stored as `f32` row-major.
fn feature_pool(p: &ModelParams, featmap: Option<&FeatureMap>, n: usize, seed: u64, id: StreamId) -> Vec<f32> {
    const SHARD: usize = 1 << 16;
    let k = featmap.map_or(p.d(), FeatureMap::k);
    let shards = n.div_ceil(SHARD);
    let parts: Vec<Vec<f32>> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let mut rng = Stream::child(seed, id, s as u64);
            let m = SHARD.min(n - s * SHARD);
            let mut x = vec![0.0; p.d()];
            let mut out = Vec::with_capacity(m * k);
            for _ in 0..m {
                sample_point(p, Domain::Target, &mut rng, &mut x);
                match featmap {
                    Some(f) => out.extend(f.apply(&x).into_iter().map(|v| v as f32)),
                    None => out.extend(x.iter().map(|&v| v as f32)),
                }
            }
            out
        })
        .collect();
    parts.concat()
}
