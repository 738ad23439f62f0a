//! Experiment orchestration: the four-method UDA comparison, the SSL
//! comparison, the γ/σsp phase sweep and the k/κ ablations.
//!
//! Closed-form accuracies are the primary numbers. Monte Carlo columns are
//! filled when [`RunOpts::mc_n`] is set. Every cell draws from its own
//! stream keyed by (root seed, experiment, cell), so results do not depend
//! on scheduling.

use std::fmt;

use rayon::prelude::*;

use crate::augment::{augmentation_moments, augmentation_moments_on};
use crate::classify::{accuracy_mc, cl_probe_closed_form, erm_closed_form, probe_gd, probe_max_margin, HeadState};
use crate::contrastive::{amplification, bt_gradient_train_tol, bt_spectrum, FeatureMap, DEFAULT_STEPS};
use crate::error::{Error, Result};
use crate::linalg::sym_eig;
use crate::model::{sample_labeled, Domain, ModelParams};
use crate::rng::{Stream, StreamId};
use crate::selftrain::{st_empirical_run, st_features_run, st_scratch_run, stoc_run, SelfTrainTrace, DEFAULT_ETA, DEFAULT_MAX_ITERS};
use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Erm,
    St,
    Cl,
    Stoc,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Erm, Method::St, Method::Cl, Method::Stoc];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Erm => "ERM",
            Method::St => "ST",
            Method::Cl => "CL",
            Method::Stoc => "STOC",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setting {
    Uda,
    Ssl,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::Uda => "UDA",
            Setting::Ssl => "SSL",
        })
    }
}

/// Experiment tags used in stream ids.
pub mod exp {
    pub const UDA: u64 = 1;
    pub const SSL: u64 = 2;
    pub const PHASE: u64 = 3;
    pub const ABLATE_K: u64 = 4;
    pub const ABLATE_KAPPA: u64 = 5;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub method: Method,
    pub setting: Setting,
    pub params: ModelParams,
    /// Closed-form target accuracy.
    pub target_acc: f64,
    pub acc_mc: Option<f64>,
    pub kappa: Option<f64>,
    /// Free-form per-row notes (iterations, losses, diagnostics).
    pub extra: String,
    pub trace_ref: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOpts {
    pub eta: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Monte Carlo sample size for the optional `acc_mc` column.
    pub mc_n: Option<usize>,
}

impl Default for RunOpts {
    fn default() -> Self {
        Self { eta: DEFAULT_ETA, max_iters: DEFAULT_MAX_ITERS, seed: 0, mc_n: None }
    }
}

struct Row<'a> {
    method: Method,
    setting: Setting,
    p: &'a ModelParams,
    acc: f64,
    head: HeadState,
    featmap: Option<&'a FeatureMap>,
    kappa: Option<f64>,
    extra: String,
}

fn finish(r: Row<'_>, opts: &RunOpts, id: StreamId) -> ExperimentResult {
    let acc_mc = opts.mc_n.map(|n| accuracy_mc(&r.head, r.featmap, r.p, n, opts.seed, id));
    ExperimentResult {
        method: r.method,
        setting: r.setting,
        params: r.p.clone(),
        target_acc: r.acc,
        acc_mc,
        kappa: r.kappa,
        extra: r.extra,
        trace_ref: None,
    }
}

fn w_head(a_inv: f64, a_spu: f64, p: &ModelParams) -> Result<HeadState> {
    let v: Vec<f64> = p.w_inv().iter().zip(p.w_spu()).map(|(a, b)| a_inv * a + a_spu * b).collect();
    HeadState::new(v, None, p)
}

fn trace_note(tr: &SelfTrainTrace) -> String {
    let mut s = match tr.converge_iter {
        Some(t) => format!("converged at t={t}"),
        None => format!("stopped at t={}", tr.last().t),
    };
    if tr.sigma_sign_changes > 0 {
        s.push_str(&format!("; sigma sign changes={}", tr.sigma_sign_changes));
    }
    if let Some(d) = &tr.diagnostic {
        s.push_str("; ");
        s.push_str(d);
    }
    s
}

/// ERM, ST, CL and STOC on one instance.
pub fn uda_compare(p: &ModelParams) -> Result<[ExperimentResult; 4]> {
    uda_compare_with(p, &RunOpts::default(), 0)
}

/// [`uda_compare`] with explicit options; `cell` keys the MC streams.
pub fn uda_compare_with(p: &ModelParams, opts: &RunOpts, cell: u64) -> Result<[ExperimentResult; 4]> {
    p.validate()?;
    let id = |m: Method| StreamId::new(exp::UDA, cell, m as u64);
    let erm = erm_closed_form(p);
    let st = st_scratch_run(p, opts.eta, opts.max_iters)?;
    let c = amplification(p)?;
    let cl = cl_probe_closed_form(&c, p)?;
    let stoc = stoc_run(&c, p, opts.eta, opts.max_iters)?;
    let (sl, tl) = (st.last(), stoc.last());
    let rows = [
        Row { method: Method::Erm, setting: Setting::Uda, p, acc: erm.accuracy(), head: erm, featmap: None, kappa: None, extra: String::new() },
        Row {
            method: Method::St,
            setting: Setting::Uda,
            p,
            acc: sl.acc,
            head: w_head(sl.a_inv, sl.a_spu, p)?,
            featmap: None,
            kappa: None,
            extra: trace_note(&st),
        },
        Row {
            method: Method::Cl,
            setting: Setting::Uda,
            p,
            acc: cl.accuracy(),
            head: w_head(c.c1 * cl.h[0] + c.c2 * cl.h[1], c.c3 * cl.h[0] + c.c4 * cl.h[1], p)?,
            featmap: None,
            kappa: None,
            extra: format!("c=({:.6},{:.6},{:.6},{:.6})", c.c1, c.c2, c.c3, c.c4),
        },
        Row {
            method: Method::Stoc,
            setting: Setting::Uda,
            p,
            acc: tl.acc,
            head: w_head(tl.a_inv, tl.a_spu, p)?,
            featmap: None,
            kappa: None,
            extra: trace_note(&stoc),
        },
    ];
    Ok(rows.map(|r| {
        let m = r.method;
        finish(r, opts, id(m))
    }))
}

/// CL and STOC with labeled and unlabeled data from the target alone.
///
/// Features are the top `p.k` whitened directions of the target-only
/// augmentation moments. CL is a gradient-descent probe on `n_labeled`
/// target draws; STOC self-trains that probe over the same features, on the
/// population when `n_unlabeled` is `None` and on a fixed pool otherwise.
pub fn ssl_compare(p: &ModelParams, n_labeled: usize, n_unlabeled: Option<usize>, opts: &RunOpts) -> Result<[ExperimentResult; 2]> {
    p.validate()?;
    if n_labeled < 2 {
        return Err(Error::Domain("need at least two labeled points".into()));
    }
    let spec = bt_spectrum(&augmentation_moments_on(p, Domain::Target), p)?;
    let featmap = spec.top(p.k);
    let mut rng = Stream::new(opts.seed, StreamId::new(exp::SSL, 0, 0));
    let mut resamples = 0;
    let batch = loop {
        let b = sample_labeled(p, Domain::Target, n_labeled, &mut rng);
        let pos = b.ys.iter().filter(|&&y| y > 0.0).count();
        if pos > 0 && pos < n_labeled {
            break b;
        }
        resamples += 1;
        if resamples > 1000 {
            return Err(Error::Domain("could not draw both classes".into()));
        }
    };
    let z = Matrix::from_fn(n_labeled, featmap.k(), |i, j| crate::linalg::dot(featmap.phi.row(j), batch.xs.row(i)));
    let probe = probe_gd(&z, &batch.ys, 100_000, 0.1)?;
    let cl = HeadState::new(probe.h.clone(), Some(&featmap), p)?;
    let tr = match n_unlabeled {
        None => st_features_run(Some(&featmap), p, &probe.h, opts.eta, opts.max_iters)?,
        Some(n) => st_empirical_run(p, Some(&featmap), &probe.h, n, opts.eta, opts.max_iters, opts.seed, StreamId::new(exp::SSL, 0, 1))?,
    };
    let stoc = HeadState::new(tr.last().h.clone(), Some(&featmap), p)?;
    let mut note = format!("probe steps={} converged={}", probe.steps, probe.converged);
    if resamples > 0 {
        note.push_str(&format!("; single-class labeled draw resampled {resamples}x"));
    }
    let rows = [
        Row { method: Method::Cl, setting: Setting::Ssl, p, acc: cl.accuracy(), head: cl, featmap: Some(&featmap), kappa: None, extra: note },
        Row { method: Method::Stoc, setting: Setting::Ssl, p, acc: stoc.accuracy(), head: stoc, featmap: Some(&featmap), kappa: None, extra: trace_note(&tr) },
    ];
    Ok(rows.map(|r| {
        let m = r.method;
        finish(r, opts, StreamId::new(exp::SSL, 1, m as u64))
    }))
}

/// One cell of a sweep. A failed cell carries its error instead of rows.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub key: f64,
    pub params: ModelParams,
    pub results: std::result::Result<Vec<ExperimentResult>, String>,
}

impl SweepRow {
    pub fn acc(&self, m: Method) -> Option<f64> {
        self.results.as_ref().ok()?.iter().find(|r| r.method == m).map(|r| r.target_acc)
    }
}

fn sort_rows(mut rows: Vec<SweepRow>) -> Vec<SweepRow> {
    rows.sort_by(|a, b| a.key.total_cmp(&b.key));
    rows
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect(),
    }
}

/// γ/σsp grid realised at fixed σsp from `base` (γ = r·σsp).
pub fn ratio_grid(ratios: &[f64], base: &ModelParams) -> Vec<(f64, f64)> {
    ratios.iter().map(|r| (r * base.sigma_sp, base.sigma_sp)).collect()
}

/// [`uda_compare_with`] on every (γ, σsp) cell, keyed by γ/σsp.
pub fn phase_sweep(grid: &[(f64, f64)], base: &ModelParams, opts: &RunOpts) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::Domain("empty grid".into()));
    }
    let rows = grid
        .par_iter()
        .enumerate()
        .map(|(i, &(gamma, sigma_sp))| {
            let mut p = base.clone();
            p.gamma = gamma;
            p.sigma_sp = sigma_sp;
            let results = uda_compare_with(&p, opts, i as u64).map(|r| r.to_vec()).map_err(|e| e.to_string());
            SweepRow { key: gamma / sigma_sp, params: p, results }
        })
        .collect();
    Ok(sort_rows(rows))
}

/// Index of the single crossing of a sorted accuracy column: every entry
/// before it is below `lo` and every entry from it on is above `hi`.
pub fn single_crossing(accs: &[f64], lo: f64, hi: f64) -> Option<usize> {
    let i = accs.iter().position(|&a| a > hi)?;
    (accs[..i].iter().all(|&a| a < lo) && accs[i..].iter().all(|&a| a > hi)).then_some(i)
}

/// Smallest key whose accuracy for `m` exceeds `hi`.
pub fn threshold_key(rows: &[SweepRow], m: Method, hi: f64) -> Option<f64> {
    rows.iter().find(|r| r.acc(m).is_some_and(|a| a > hi)).map(|r| r.key)
}

/// CL and STOC over the top-k closed-form features for each k, keyed by k.
pub fn ablation_k(base: &ModelParams, ks: &[usize], opts: &RunOpts) -> Result<Vec<SweepRow>> {
    base.validate()?;
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > base.d()) {
        return Err(Error::Domain(format!("k = {k} outside [1, {}]", base.d())));
    }
    let spec = bt_spectrum(&augmentation_moments(base), base)?;
    let rows = ks
        .par_iter()
        .map(|&k| {
            let p = base.clone().with_k(k);
            let results = features_pair(&p, &spec.top(k), None, opts, StreamId::new(exp::ABLATE_K, k as u64, 0), String::new())
                .map(|r| r.to_vec())
                .map_err(|e| e.to_string());
            SweepRow { key: k as f64, params: p, results }
        })
        .collect();
    Ok(sort_rows(rows))
}

fn features_pair(p: &ModelParams, f: &FeatureMap, kappa: Option<f64>, opts: &RunOpts, id: StreamId, note: String) -> Result<[ExperimentResult; 2]> {
    let cl = probe_max_margin(f, p)?;
    let tr = st_features_run(Some(f), p, &cl.h, opts.eta, opts.max_iters)?;
    let stoc = HeadState::new(tr.last().h.clone(), Some(f), p)?;
    let rows = [
        Row { method: Method::Cl, setting: Setting::Uda, p, acc: cl.accuracy(), head: cl, featmap: Some(f), kappa, extra: note.clone() },
        Row { method: Method::Stoc, setting: Setting::Uda, p, acc: stoc.accuracy(), head: stoc, featmap: Some(f), kappa, extra: trace_note(&tr) },
    ];
    Ok(rows.map(|r| {
        let m = r.method;
        finish(r, opts, StreamId::new(id.experiment, id.cell, m as u64))
    }))
}

/// Options for the gradient-trained feature maps of [`ablation_kappa`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainerOpts {
    pub k: usize,
    /// Step budget; training stops earlier once ‖∇L‖_F ≤ `grad_tol`.
    pub steps: usize,
    pub grad_tol: f64,
    /// Requested step, lowered per κ to [`stable_lr`]; `None` runs at it.
    pub lr: Option<f64>,
}

impl Default for TrainerOpts {
    fn default() -> Self {
        Self { k: 10, steps: 10 * DEFAULT_STEPS, grad_tol: 1e-8, lr: None }
    }
}

/// Step size below the curvature limit of the κ-penalised loss near the
/// whitened set, 1/(8κ‖Σ_A‖ + 4‖Σ_A − Σ̃‖), capped at `lr`.
pub fn stable_lr(p: &ModelParams, kappa: f64, lr: f64) -> Result<f64> {
    let m = augmentation_moments(p);
    let na = sym_eig(&m.sigma_a)?.values[0];
    let nd = sym_eig(&(&m.sigma_a - &m.sigma_tilde))?.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(lr.min(1.0 / (8.0 * kappa * na + 4.0 * nd)))
}

/// Feature maps with Frobenius norm at most this times √k count as collapsed.
pub const COLLAPSE_NORM: f64 = 1e-3;

/// Gradient-trained features per κ, probed and self-trained, keyed by κ.
/// A collapsed map gets the chance-level head (accuracy 0.5).
pub fn ablation_kappa(base: &ModelParams, kappas: &[f64], trainer: &TrainerOpts, opts: &RunOpts) -> Result<Vec<SweepRow>> {
    base.validate()?;
    if kappas.iter().any(|&k| !(k > 0.0)) {
        return Err(Error::Domain("kappa must be positive".into()));
    }
    let p = base.clone().with_k(trainer.k);
    let rows = kappas
        .par_iter()
        .enumerate()
        .map(|(i, &kappa)| {
            let results = kappa_cell(&p, kappa, trainer, opts, i as u64).map_err(|e| e.to_string());
            SweepRow { key: kappa, params: p.clone(), results }
        })
        .collect();
    Ok(sort_rows(rows))
}

fn kappa_cell(p: &ModelParams, kappa: f64, trainer: &TrainerOpts, opts: &RunOpts, cell: u64) -> Result<Vec<ExperimentResult>> {
    let lr = stable_lr(p, kappa, trainer.lr.unwrap_or(f64::INFINITY))?;
    let mut rng = Stream::new(opts.seed, StreamId::new(exp::ABLATE_KAPPA, cell, 0));
    let out = bt_gradient_train_tol(p, kappa, trainer.steps, lr, trainer.grad_tol, &mut rng)?;
    let note = format!("lr={lr:.4e}; steps={}; final_loss={:.10e}; grad_norm={:.4e}", out.losses.len() - 1, out.final_loss, out.grad_norm);
    let id = StreamId::new(exp::ABLATE_KAPPA, cell, 1);
    if out.map.phi.frobenius() <= COLLAPSE_NORM * (p.k as f64).sqrt() {
        let row = |method| ExperimentResult {
            method,
            setting: Setting::Uda,
            params: p.clone(),
            target_acc: 0.5,
            acc_mc: opts.mc_n.map(|_| 0.5),
            kappa: Some(kappa),
            extra: format!("{note}; collapsed features"),
            trace_ref: None,
        };
        return Ok(vec![row(Method::Cl), row(Method::Stoc)]);
    }
    Ok(features_pair(p, &out.map, Some(kappa), opts, id, note)?.to_vec())
}
