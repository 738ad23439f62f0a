//! Fast self-check suite behind `stoclab verify`.

use stoclab::analytics::{phase_sweep, ratio_grid, log_grid, single_crossing, ssl_compare, threshold_key, uda_compare, Method, RunOpts};
use stoclab::augment::{augmentation_moments, SPU_SIGMA_COEF};
use stoclab::classify::erm_closed_form;
use stoclab::contrastive::{
    amplification, amplification_blocks, asymptotic_limits, asymptotic_slice, bt_closed_form, bt_gradient_train, bt_subspace_bound,
    c2_over_c4_limit,
};
use stoclab::linalg::norm;
use stoclab::model::{decompose, ModelParams};
use stoclab::rng::Stream;
use stoclab::selftrain::{condition_report, st_scratch_run, stoc_delta, stoc_run, DEFAULT_ETA, DEFAULT_MAX_ITERS};
use stoclab::specialfns::{erfc, erfcx, mills, st_loss, st_loss_grad};
use stoclab::Matrix;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> stoclab::Result<(bool, String)>) -> Check {
    match f() {
        Ok((pass, detail)) => Check { name, pass, detail },
        Err(e) => Check { name, pass: false, detail: format!("error: {e}") },
    }
}

pub fn run_all(seed: u64) -> Vec<Check> {
    let p = ModelParams::baseline();
    vec![
        check("erm_closed_form", || {
            let acc = erm_closed_form(&p).accuracy();
            let want = 0.5 * erfc(-(p.gamma * p.gamma) / ((2.0 * p.d_sp as f64).sqrt() * p.sigma_sp))?;
            Ok(((acc - want).abs() < 1e-12, format!("acc={acc:.12} formula={want:.12}")))
        }),
        check("st_failure_regime", || {
            let tr = st_scratch_run(&p, DEFAULT_ETA, DEFAULT_MAX_ITERS)?;
            let l = tr.last();
            Ok(((l.acc - 0.5).abs() <= 0.02 && l.a_spu >= 0.99, format!("acc={:.6} a_spu={:.6}", l.acc, l.a_spu)))
        }),
        check("st_success_regime", || {
            let q = ModelParams::new(2.0, p.sigma_in, 1.0, 5, 20);
            let l = st_scratch_run(&q, DEFAULT_ETA, DEFAULT_MAX_ITERS)?.last().clone();
            Ok((l.acc >= 0.999 && l.a_inv >= 0.999, format!("acc={:.6} a_inv={:.6}", l.acc, l.a_inv)))
        }),
        check("stoc_recovery", || {
            let c = amplification(&p)?;
            let tr = stoc_run(&c, &p, DEFAULT_ETA, DEFAULT_MAX_ITERS)?;
            let floor = 0.5 * erfc(-(10f64.sqrt()))? - 1e-3;
            Ok((tr.final_acc() >= floor, format!("acc={:.9} floor={floor:.6}", tr.final_acc())))
        }),
        check("bt_structure", || {
            let q = p.clone().with_k(10);
            let f = bt_closed_form(&q)?;
            let m = augmentation_moments(&q);
            let g = f.phi.matmul(&m.sigma_a).matmul(&f.phi.transpose());
            let white = (&g - &Matrix::identity(10)).max_abs();
            let mut orth: f64 = 0.0;
            for j in 2..10 {
                let d = decompose(f.phi.row(j), &q)?;
                orth = orth.max(d.a_inv.abs()).max(d.a_spu.abs());
            }
            Ok((white <= 1e-8 && orth <= 1e-8, format!("whitening={white:.2e} rows>=3 in W={orth:.2e}")))
        }),
        check("amplification_limits", || {
            let z = 1e4;
            let q = asymptotic_slice(&p, 1.0, 1.0, z);
            let c = amplification_blocks(&q, SPU_SIGMA_COEF)?;
            let lim = asymptotic_limits(1.0, 1.0, q.d_in, q.sigma_in);
            let r13 = (c.c1 / c.c3) / lim.c1_over_c3();
            let r24 = (c.c2 / c.c4).abs() / c2_over_c4_limit(&q, 1.0);
            Ok(((r13 - 1.0).abs() <= 0.05 && (r24 - 1.0).abs() <= 0.05, format!("c1/c3 ratio={r13:.5} |c2/c4| ratio={r24:.5}")))
        }),
        check("bt_trainer", || {
            let q = p.clone().with_k(10);
            let lr = stoclab::analytics::stable_lr(&q, 0.5, 1.0)?;
            let out = bt_gradient_train(&q, 0.5, 20_000, lr, &mut Stream::from_seed(seed))?;
            let mono = out.losses.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
            let b = bt_subspace_bound(&out.map, out.final_loss, 0.5, &q)?;
            Ok((mono && b.holds, format!("monotone={mono} achieved={:.3e} bound={:.3e}", b.achieved, b.bound)))
        }),
        check("g_vs_monte_carlo", || {
            let mut rng = Stream::from_seed(seed);
            let n = 200_000;
            let mut worst: f64 = 0.0;
            for &mu in &[-2.0, -0.5, 0.5, 2.0] {
                for &s in &[0.2, 1.0, 3.0] {
                    let mc = (0..n).map(|_| (-(mu + s * rng.normal()).abs()).exp()).sum::<f64>() / n as f64;
                    worst = worst.max((mc - st_loss(mu, s)?).abs());
                }
            }
            Ok((worst <= 5e-3, format!("max |closed - mc|={worst:.2e}")))
        }),
        check("update_is_gradient", || {
            let c = amplification(&p)?;
            let mut rng = Stream::from_seed(seed);
            let mut worst: f64 = 0.0;
            for _ in 0..100 {
                let a = rng.uniform() * std::f64::consts::TAU;
                let h = [a.cos(), a.sin()];
                let g = |h: [f64; 2]| {
                    let mu = p.gamma * (c.c1 * h[0] + c.c2 * h[1]);
                    let s = p.sigma_sp * (c.c3 * h[0] + c.c4 * h[1]);
                    st_loss(mu, s.abs().max(1e-300)).unwrap_or(f64::NAN)
                };
                let e = 1e-6;
                let fd = [(g([h[0] + e, h[1]]) - g([h[0] - e, h[1]])) / (2.0 * e), (g([h[0], h[1] + e]) - g([h[0], h[1] - e])) / (2.0 * e)];
                let d = stoc_delta(&c, &p, h);
                let an = [d[0] / 2.0, d[1] / 2.0];
                let err = norm(&[fd[0] - an[0], fd[1] - an[1]]) / norm(&an).max(1e-12);
                worst = worst.max(err);
            }
            Ok((worst <= 1e-6, format!("max relative error={worst:.2e}")))
        }),
        check("mills_and_erfc", || {
            let xs: Vec<f64> = (0..1000).map(|i| -5.0 + 55.0 * i as f64 / 999.0).collect();
            let m: Vec<_> = xs.iter().map(|&x| mills(x)).collect();
            let mut bad = 0;
            for w in m.windows(2) {
                let (a, b) = (w[0], w[1]);
                bad += usize::from(!(b.r < a.r) || !(b.r1 > a.r1) || !(b.r2 < a.r2));
                if a.x >= 0.0 {
                    bad += usize::from(!(b.x * b.x * b.r1 < a.x * a.x * a.r1));
                }
            }
            for e in &m {
                bad += usize::from(!(e.r1 < 0.0 && e.r2 > 0.0 && e.r * e.r2 > e.r1 * e.r1));
            }
            // scaled by e^{x²} so the bounds stay representable past x ≈ 26.5
            let c = 2.0 / std::f64::consts::PI.sqrt();
            for i in 1..=1000 {
                let x = 40.0 * i as f64 / 1000.0;
                let v = erfcx(x);
                let lo = c / (x + (x * x + 2.0).sqrt());
                let hi = c / (x + (x * x + 4.0 / std::f64::consts::PI).sqrt());
                bad += usize::from(!(lo < v && v <= hi * (1.0 + 1e-14)));
            }
            Ok((bad == 0, format!("violations={bad} (x^2 r' checked on x >= 0)")))
        }),
        check("phase_diagram", || {
            let rows = phase_sweep(&ratio_grid(&log_grid(0.1, 4.0, 20), &p), &p, &RunOpts { seed, ..Default::default() })?;
            let col = |m| rows.iter().map(|r| r.acc(m).unwrap_or(f64::NAN)).collect::<Vec<_>>();
            let st = single_crossing(&col(Method::St), 0.6, 0.95).is_some();
            let cl = col(Method::Cl);
            let mono = cl.windows(2).all(|w| w[1] >= w[0] - 1e-12);
            let (ts, tc) = (threshold_key(&rows, Method::St, 0.95), threshold_key(&rows, Method::Stoc, 0.95));
            let sooner = matches!((tc, ts), (Some(a), Some(b)) if a < b);
            Ok((st && mono && sooner, format!("st_single_crossing={st} cl_monotone={mono} thresholds stoc={tc:?} st={ts:?}")))
        }),
        check("ssl_vs_uda", || {
            let s = ssl_compare(&p, 100, None, &RunOpts { seed, ..Default::default() })?;
            let u = uda_compare(&p)?;
            let (gs, gu) = (s[1].target_acc - s[0].target_acc, u[3].target_acc - u[2].target_acc);
            Ok((gs <= 0.01 && gu >= 0.05, format!("ssl gain={gs:.4} uda gain={gu:.4}")))
        }),
        check("trace_invariants", || {
            let mut ok = true;
            for q in [p.clone(), ModelParams::new(2.0, p.sigma_in, 1.0, 5, 20)] {
                let tr = st_scratch_run(&q, DEFAULT_ETA, DEFAULT_MAX_ITERS)?;
                ok &= tr.iters.iter().all(|t| (norm(&t.h) - 1.0).abs() <= 1e-10 && t.sigma >= 0.0);
                let r = condition_report(&q, None);
                ok &= !(r.st_succeeds && (r.st_fails_formal || r.st_fails_informal));
            }
            let c = amplification(&p)?;
            let tr = stoc_run(&c, &p, DEFAULT_ETA, DEFAULT_MAX_ITERS)?;
            ok &= tr.iters.iter().all(|t| (norm(&t.h) - 1.0).abs() <= 1e-10 && t.sigma >= 0.0);
            ok &= tr.converged && tr.last().residual <= 1e-10;
            let lg = st_loss_grad(0.3f64, 0.0);
            ok &= lg.alpha2.is_finite();
            Ok((ok, "unit norm, sigma >= 0, STOC residual, exclusive predicates".into()))
        }),
    ]
}
