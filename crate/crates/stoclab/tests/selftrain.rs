mod common;

use common::central;
use proptest::prelude::*;
use stoclab::classify::{cl_probe_closed_form, erm_closed_form, probe_max_margin};
use stoclab::contrastive::{amplification, bt_closed_form, AmplificationCoeffs};
use stoclab::linalg::{dot, norm};
use stoclab::model::{decompose, ModelParams};
use stoclab::rng::{Stream, StreamId};
use stoclab::selftrain::{
    condition_report, population_grad, st_empirical_run, st_features_run, st_scratch_run, stoc_convergence_residual, stoc_delta, stoc_run,
    SelfTrainTrace, DEFAULT_ETA, DEFAULT_MAX_ITERS,
};
use stoclab::specialfns::{erfc, st_loss};

fn g_of(mu: f64, sigma: f64) -> f64 {
    st_loss(mu, sigma.abs().max(1e-300)).unwrap()
}

fn unit_and_nonneg(tr: &SelfTrainTrace) -> bool {
    tr.iters.iter().all(|t| (norm(&t.h) - 1.0).abs() <= 1e-10 && t.sigma >= 0.0)
}

#[test]
fn scratch_fails_on_baseline() {
    let p = ModelParams::baseline();
    let tr = st_scratch_run(&p, DEFAULT_ETA, DEFAULT_MAX_ITERS).unwrap();
    let l = tr.last();
    assert!(tr.converged);
    assert!((l.acc - 0.5).abs() <= 0.02 && l.a_spu >= 0.99, "{l:?}");
    assert!(unit_and_nonneg(&tr));
    // the failure predicate holds and a_spu only grows
    assert!(condition_report(&p, None).st_fails_formal);
    assert!(tr.iters.windows(2).all(|w| w[1].a_spu >= w[0].a_spu - 1e-15));
}

#[test]
fn scratch_succeeds_with_large_margin() {
    let p = ModelParams::new(2.0, 0.05f64.sqrt(), 1.0, 5, 20);
    let tr = st_scratch_run(&p, DEFAULT_ETA, DEFAULT_MAX_ITERS).unwrap();
    let l = tr.last();
    assert!(l.acc >= 0.999 && l.a_inv >= 0.999, "{l:?}");
    assert!(condition_report(&p, None).st_succeeds);
    assert!(tr.iters.windows(2).all(|w| w[1].a_inv >= w[0].a_inv - 1e-15));
}

#[test]
fn scratch_step_is_a_gradient_step() {
    // one update equals normalise(a − η∇g) with ∇g by finite differences
    let p = ModelParams::baseline();
    let eta = DEFAULT_ETA;
    let tr = st_scratch_run(&p, eta, 50).unwrap();
    for w in tr.iters.windows(2) {
        let (a, b) = (w[0].a_inv, w[0].a_spu);
        let f = |x: f64, y: f64| g_of(p.gamma * x, p.sigma_sp * y);
        let gx = central(|x| f(x, b), a, 1e-6);
        let gy = central(|y| f(a, y), b, 1e-6);
        let mut next = [a - eta * gx, b - eta * gy];
        let n = norm(&next);
        next.iter_mut().for_each(|v| *v /= n);
        assert!((next[0] - w[1].a_inv).abs() <= 1e-8 && (next[1] - w[1].a_spu).abs() <= 1e-8, "t={}", w[1].t);
    }
}

#[test]
fn stoc_delta_is_twice_the_gradient() {
    let p = ModelParams::baseline();
    let c = amplification(&p).unwrap();
    let mut rng = Stream::from_seed(77);
    for _ in 0..100 {
        let a = rng.uniform() * std::f64::consts::TAU;
        let h = [a.cos(), a.sin()];
        let f = |h: [f64; 2]| g_of(p.gamma * (c.c1 * h[0] + c.c2 * h[1]), p.sigma_sp * (c.c3 * h[0] + c.c4 * h[1]));
        let fd = [central(|x| f([x, h[1]]), h[0], 1e-6), central(|y| f([h[0], y]), h[1], 1e-6)];
        let d = stoc_delta(&c, &p, h);
        let an = [d[0] / 2.0, d[1] / 2.0];
        let err = norm(&[fd[0] - an[0], fd[1] - an[1]]) / norm(&an);
        assert!(err <= 1e-6, "h={h:?} err={err}");
    }
}

#[test]
fn input_space_gradient_matches_finite_differences() {
    let p = ModelParams::baseline();
    let mut rng = Stream::from_seed(5);
    for _ in 0..20 {
        let h: Vec<f64> = (0..p.d()).map(|_| rng.normal()).collect();
        let (_, _, g) = population_grad(&h, None, &p);
        let f = |v: &[f64]| {
            let along = dot(&v[..p.d_in], &p.w_star);
            let perp2 = dot(&v[..p.d_in], &v[..p.d_in]) - along * along;
            let s2 = p.sigma_in * p.sigma_in * perp2 + p.sigma_sp * p.sigma_sp * dot(&v[p.d_in..], &v[p.d_in..]);
            g_of(p.gamma * along, s2.sqrt())
        };
        for j in 0..p.d() {
            let fd = central(
                |x| {
                    let mut v = h.clone();
                    v[j] = x;
                    f(&v)
                },
                h[j],
                1e-6,
            );
            assert!((fd - g[j]).abs() <= 1e-6 * norm(&g).max(1.0), "coordinate {j}");
        }
    }
}

#[test]
fn stoc_recovers_on_baseline() {
    let p = ModelParams::baseline();
    let c = amplification(&p).unwrap();
    let tr = stoc_run(&c, &p, DEFAULT_ETA, DEFAULT_MAX_ITERS).unwrap();
    assert!(tr.converged);
    assert!(tr.final_acc() >= 0.5 * erfc(-(10f64.sqrt())).unwrap() - 1e-3);
    assert!(tr.last().residual <= 1e-10);
    assert!(tr.iters[0].residual > 1e-3);
    assert!(unit_and_nonneg(&tr));

    // h₂ shrinks in magnitude while negative, then grows past 1/√2
    let h2: Vec<f64> = tr.iters.iter().map(|t| t.h[1]).collect();
    let flip = h2.iter().position(|&v| v > 0.0).expect("h2 turns positive");
    assert!(h2[..flip].windows(2).all(|w| w[1].abs() <= w[0].abs()));
    let top = h2[flip..].iter().position(|&v| v >= std::f64::consts::FRAC_1_SQRT_2).expect("h2 reaches 1/sqrt 2") + flip;
    assert!(h2[flip..=top].windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn residual_vanishes_at_parallel_points() {
    let d = [0.3, -1.7];
    assert_eq!(stoc_convergence_residual([2.0 * d[0], 2.0 * d[1]], d), 0.0);
}

#[test]
fn identity_coefficients_reduce_to_scratch() {
    for p in [ModelParams::baseline(), ModelParams::new(2.0, 0.3, 1.0, 5, 20), ModelParams::new(0.9, 0.1, 1.5, 4, 9)] {
        let a = st_scratch_run(&p, DEFAULT_ETA, 3000).unwrap();
        let b = stoc_run(&AmplificationCoeffs::identity(), &p, DEFAULT_ETA, 3000).unwrap();
        let n = a.iters.len().min(b.iters.len());
        for (x, y) in a.iters[..n].iter().zip(&b.iters[..n]) {
            assert!((x.a_inv - y.a_inv).abs() <= 1e-8 && (x.a_spu - y.a_spu).abs() <= 1e-8, "t={}", x.t);
        }
    }
}

#[test]
fn input_space_run_matches_scratch_and_keeps_perp_zero() {
    let p = ModelParams::baseline();
    let erm = erm_closed_form(&p);
    let full = st_features_run(None, &p, &erm.h, DEFAULT_ETA, 2000).unwrap();
    let red = st_scratch_run(&p, DEFAULT_ETA, 2000).unwrap();
    for (x, y) in full.iters.iter().zip(&red.iters) {
        assert!((x.a_inv - y.a_inv).abs() <= 1e-9 && (x.a_spu - y.a_spu).abs() <= 1e-9, "t={}", x.t);
        let hin = &x.h[..p.d_in];
        let along = dot(hin, &p.w_star);
        let perp: f64 = hin.iter().zip(&p.w_star).map(|(a, w)| (a - along * w).powi(2)).sum::<f64>().sqrt();
        assert!(perp <= 1e-12, "t={} perp={perp}", x.t);
    }
}

#[test]
fn feature_run_matches_stoc() {
    let p = ModelParams::baseline();
    let c = amplification(&p).unwrap();
    let f = bt_closed_form(&p).unwrap();
    let init = probe_max_margin(&f, &p).unwrap();
    let a = st_features_run(Some(&f), &p, &init.h, DEFAULT_ETA, 500).unwrap();
    let b = stoc_run(&c, &p, DEFAULT_ETA, 500).unwrap();
    for (x, y) in a.iters.iter().zip(&b.iters) {
        assert!((x.h[0] - y.h[0]).abs() <= 1e-6 && (x.h[1] - y.h[1]).abs() <= 1e-6, "t={}", x.t);
    }
}

#[test]
fn condition_report_examples() {
    let r = condition_report(&ModelParams::baseline(), None);
    assert!(!r.st_fails_informal && r.st_fails_formal && !r.st_succeeds);
    assert!(condition_report(&ModelParams::new(2.0, 0.2, 1.0, 5, 20), None).st_succeeds);
    let r = condition_report(&ModelParams::new(0.01, 0.2, 0.5, 5, 20), None);
    assert!(!r.st_fails_formal && !r.st_fails_informal);
    let p = ModelParams::baseline();
    let c = amplification(&p).unwrap();
    let r = condition_report(&p, Some(&c));
    assert!(r.stoc_mu_conditions.is_some() && r.stoc_formal_condition.is_some());
}

#[test]
fn empirical_scratch_tracks_population() {
    let p = ModelParams::baseline();
    let erm = erm_closed_form(&p);
    let eta = 0.5;
    let pop = st_features_run(None, &p, &erm.h, eta, 5000).unwrap();
    assert!(pop.converged);
    // compared where the population run stops: past that point the sample
    // head keeps turning inside the isotropic spurious block, a direction
    // the population loss does not see
    let epochs = pop.iters.len() - 1;
    let emp = st_empirical_run(&p, None, &erm.h, 1_000_000, eta, epochs, 3, StreamId::new(7, 0, 0)).unwrap();
    let (a, b) = (pop.last(), emp.last());
    assert!((a.a_spu - b.a_spu).abs() <= 0.05, "{} vs {}", a.a_spu, b.a_spu);
    let spu_mass = |h: &[f64]| norm(&h[p.d_in..]);
    assert!((spu_mass(&a.h) - spu_mass(&b.h)).abs() <= 0.01);
    assert!((a.acc - b.acc).abs() <= 0.01);
    assert!(unit_and_nonneg(&emp));
}

#[test]
fn empirical_stoc_tracks_population() {
    let p = ModelParams::baseline();
    let f = bt_closed_form(&p).unwrap();
    let init = probe_max_margin(&f, &p).unwrap();
    let pop = st_features_run(Some(&f), &p, &init.h, DEFAULT_ETA, DEFAULT_MAX_ITERS).unwrap();
    let emp = st_empirical_run(&p, Some(&f), &init.h, 1_000_000, DEFAULT_ETA, 5000, 3, StreamId::new(7, 1, 0)).unwrap();
    assert!((pop.final_acc() - emp.final_acc()).abs() <= 0.01, "{} vs {}", pop.final_acc(), emp.final_acc());
}

#[test]
fn small_pool_keeps_the_outcome() {
    let p = ModelParams::baseline();
    let f = bt_closed_form(&p).unwrap();
    let init = cl_probe_closed_form(&amplification(&p).unwrap(), &p).unwrap();
    let emp = st_empirical_run(&p, Some(&f), &init.h, 1_000, DEFAULT_ETA, 5000, 4, StreamId::new(7, 2, 0)).unwrap();
    assert!(emp.final_acc() > 0.95);
    let erm = erm_closed_form(&p);
    let emp = st_empirical_run(&p, None, &erm.h, 1_000, 0.5, 2000, 4, StreamId::new(7, 3, 0)).unwrap();
    let d = decompose(&stoclab::classify::input_direction(&emp.last().h, None), &p).unwrap();
    assert!(d.a_spu.abs() > d.a_inv.abs());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn predicates_are_exclusive(gamma in 0.0f64..5.0, ssp in 0.01f64..10.0) {
        let r = condition_report(&ModelParams::new(gamma, 0.2, ssp, 5, 20), None);
        prop_assert!(!(r.st_succeeds && (r.st_fails_formal || r.st_fails_informal)));
    }

    #[test]
    fn scratch_invariants(gamma in 0.05f64..3.0, sin in 0.05f64..1.0, ssp in 0.2f64..3.0, dsp in 2usize..30) {
        let p = ModelParams::new(gamma, sin, ssp, 5, dsp);
        let tr = st_scratch_run(&p, DEFAULT_ETA, 4000).unwrap();
        prop_assert!(unit_and_nonneg(&tr));
        let r = condition_report(&p, None);
        if r.st_fails_formal {
            prop_assert!(tr.iters.windows(2).all(|w| w[1].a_spu >= w[0].a_spu - 1e-15));
        }
        if r.st_succeeds {
            prop_assert!(tr.iters.windows(2).all(|w| w[1].a_inv >= w[0].a_inv - 1e-15));
        }
    }

    #[test]
    fn identity_stoc_equals_scratch(gamma in 0.1f64..3.0, ssp in 0.3f64..3.0, dsp in 2usize..30) {
        let p = ModelParams::new(gamma, 0.2, ssp, 5, dsp);
        let a = st_scratch_run(&p, DEFAULT_ETA, 1500).unwrap();
        let b = stoc_run(&AmplificationCoeffs::identity(), &p, DEFAULT_ETA, 1500).unwrap();
        for (x, y) in a.iters.iter().zip(&b.iters) {
            prop_assert!((x.a_inv - y.a_inv).abs() <= 1e-8 && (x.a_spu - y.a_spu).abs() <= 1e-8);
        }
    }

    #[test]
    fn stoc_invariants(gamma in 0.1f64..2.0, ssp in 0.5f64..3.0, dsp in 5usize..30) {
        let p = ModelParams::new(gamma, 0.2, ssp, 5, dsp);
        let c = amplification(&p).unwrap();
        let tr = stoc_run(&c, &p, DEFAULT_ETA, 3000).unwrap();
        prop_assert!(unit_and_nonneg(&tr));
    }
}
