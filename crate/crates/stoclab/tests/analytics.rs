use proptest::prelude::*;
use stoclab::analytics::{
    ablation_k, ablation_kappa, log_grid, phase_sweep, ratio_grid, single_crossing, ssl_compare, threshold_key, uda_compare,
    uda_compare_with, Method, RunOpts, SweepRow, TrainerOpts,
};
use stoclab::classify::{cl_probe_closed_form, probe_max_margin};
use stoclab::contrastive::{amplification, bt_closed_form};
use stoclab::model::ModelParams;
use stoclab::specialfns::erfc;

fn accs(rows: &[SweepRow], m: Method) -> Vec<f64> {
    rows.iter().map(|r| r.acc(m).unwrap()).collect()
}

#[test]
fn uda_ordering_on_baseline() {
    let r = uda_compare(&ModelParams::baseline()).unwrap();
    let [erm, st, cl, stoc] = r.each_ref().map(|e| e.target_acc);
    assert!((erm - 0.5223).abs() < 1e-4, "erm {erm}");
    assert!((st - 0.5).abs() < 1e-3, "st {st}");
    assert!(cl > st + 0.05 && cl > erm + 0.05, "cl {cl}");
    assert!(stoc > cl + 0.3 && stoc > 0.999, "stoc {stoc}");
    assert_eq!(r.each_ref().map(|e| e.method), Method::ALL);
}

#[test]
fn self_training_alone_succeeds_with_a_large_margin() {
    let r = uda_compare(&ModelParams::new(2.0, 0.05f64.sqrt(), 1.0, 5, 20)).unwrap();
    assert!(r[1].target_acc > 0.999, "{}", r[1].target_acc);
}

#[test]
fn small_target_noise_instance() {
    let p = ModelParams::new(0.5, 0.05f64.sqrt(), 0.1, 5, 20);
    let r = uda_compare(&p).unwrap();
    assert!(r[1].target_acc >= 0.99 && r[3].target_acc >= 0.99);
    // the source-trained heads keep their spurious weight, so σsp = 0.1 is
    // not small enough for ERM or CL
    let erm = 0.5 * erfc(-p.gamma * (0.5 / 20f64.sqrt()) / (2f64.sqrt() * p.sigma_sp)).unwrap();
    assert!((r[0].target_acc - erm).abs() < 1e-12);
    assert!(r[0].target_acc < 0.75 && r[2].target_acc < 0.75);
    let f = bt_closed_form(&p.clone().with_k(2)).unwrap();
    assert!((r[2].target_acc - probe_max_margin(&f, &p).unwrap().accuracy()).abs() < 1e-9);
}

#[test]
fn monte_carlo_column_agrees() {
    let opts = RunOpts { mc_n: Some(400_000), seed: 5, ..RunOpts::default() };
    let r = uda_compare_with(&ModelParams::baseline(), &opts, 0).unwrap();
    for e in &r {
        let mc = e.acc_mc.unwrap();
        let se = (e.target_acc * (1.0 - e.target_acc) / 4e5).sqrt().max(0.5 / 4e5f64.sqrt());
        assert!((mc - e.target_acc).abs() <= 4.0 * se, "{:?}: {mc} vs {}", e.method, e.target_acc);
    }
}

#[test]
fn ssl_self_training_adds_little() {
    let p = ModelParams::baseline().with_k(2);
    let opts = RunOpts::default();
    let [cl, stoc] = ssl_compare(&p, 100, None, &opts).unwrap();
    assert!(stoc.target_acc - cl.target_acc <= 0.01, "{} vs {}", stoc.target_acc, cl.target_acc);
    assert!(cl.target_acc > 0.95);

    let [cl, stoc] = ssl_compare(&p, 10_000, None, &opts).unwrap();
    assert!((stoc.target_acc - cl.target_acc).abs() <= 0.005);

    assert!(ssl_compare(&p, 1, None, &opts).is_err());
}

#[test]
fn ssl_with_a_finite_pool() {
    let p = ModelParams::baseline().with_k(2);
    let opts = RunOpts { max_iters: 300, ..RunOpts::default() };
    let [cl, stoc] = ssl_compare(&p, 100, Some(20_000), &opts).unwrap();
    assert!(stoc.target_acc - cl.target_acc <= 0.01);
}

#[test]
fn phase_sweep_shapes() {
    let base = ModelParams::baseline();
    let rows = phase_sweep(&ratio_grid(&log_grid(0.1, 4.0, 20), &base), &base, &RunOpts::default()).unwrap();
    assert_eq!(rows.len(), 20);
    assert!(rows.windows(2).all(|w| w[0].key < w[1].key));

    let st = accs(&rows, Method::St);
    assert!(single_crossing(&st, 0.6, 0.95).is_some(), "{st:?}");
    let cl = accs(&rows, Method::Cl);
    assert!(cl.windows(2).all(|w| w[1] >= w[0] - 1e-9), "{cl:?}");
    let t_st = threshold_key(&rows, Method::St, 0.95).unwrap();
    let t_stoc = threshold_key(&rows, Method::Stoc, 0.95).unwrap();
    assert!(t_stoc < t_st, "{t_stoc} vs {t_st}");
}

#[test]
fn single_crossing_examples() {
    assert_eq!(single_crossing(&[0.5, 0.55, 0.97, 0.99], 0.6, 0.95), Some(2));
    assert_eq!(single_crossing(&[0.5, 0.97, 0.5, 0.99], 0.6, 0.95), None);
    assert_eq!(single_crossing(&[0.5, 0.7, 0.97], 0.6, 0.95), None);
    assert_eq!(single_crossing(&[0.5, 0.5], 0.6, 0.95), None);
}

#[test]
fn ablation_over_feature_count() {
    let base = ModelParams::baseline();
    let rows = ablation_k(&base, &[1, 2, 4, 10, 24], &RunOpts::default()).unwrap();
    let c = amplification(&base).unwrap();
    let closed = cl_probe_closed_form(&c, &base).unwrap().accuracy();
    for r in &rows[1..] {
        assert!((r.acc(Method::Cl).unwrap() - closed).abs() <= 1e-6, "k={}", r.key);
        assert!(r.acc(Method::Stoc).unwrap() > 0.999, "k={}", r.key);
    }
    assert!(ablation_k(&base, &[0], &RunOpts::default()).is_err());
    assert!(ablation_k(&base, &[26], &RunOpts::default()).is_err());
}

#[test]
fn ablation_over_kappa() {
    let base = ModelParams::baseline();
    let trainer = TrainerOpts::default();
    let rows = ablation_kappa(&base, &[0.01, 0.5], &trainer, &RunOpts::default()).unwrap();
    assert_eq!(rows[0].acc(Method::Cl), Some(0.5));
    assert_eq!(rows[0].acc(Method::Stoc), Some(0.5));

    // at κ = 0.5 the trained map is the closed form with row j scaled by
    // s_j² = 1 − (1 − ν_j)/κ, clipped at zero; the probe over that map is
    // the oracle
    let kappa = 0.5;
    let p = base.clone().with_k(trainer.k);
    let mut f = bt_closed_form(&p).unwrap();
    for j in 0..p.k {
        let s2 = (1.0 - (1.0 - f.nu[j]) / kappa).max(0.0);
        f.phi.row_mut(j).iter_mut().for_each(|x| *x *= s2.sqrt());
    }
    let want = probe_max_margin(&f, &p).unwrap().accuracy();
    let got = rows[1].acc(Method::Cl).unwrap();
    assert!((got - want).abs() <= 1e-3, "{got} vs {want}");
    assert!(rows[1].acc(Method::Stoc).unwrap() > 0.999);
    assert!(ablation_kappa(&base, &[0.0], &trainer, &RunOpts::default()).is_err());
}

#[test]
fn same_seed_same_sweep() {
    let base = ModelParams::baseline();
    let opts = RunOpts { mc_n: Some(20_000), seed: 3, ..RunOpts::default() };
    let grid = ratio_grid(&log_grid(0.2, 3.0, 4), &base);
    let a = phase_sweep(&grid, &base, &opts).unwrap();
    let b = phase_sweep(&grid, &base, &opts).unwrap();
    let flat = |rows: &[SweepRow]| -> Vec<(u64, u64)> {
        rows.iter()
            .flat_map(|r| r.results.as_ref().unwrap().iter().map(|e| (e.target_acc.to_bits(), e.acc_mc.unwrap().to_bits())))
            .collect()
    };
    assert_eq!(flat(&a), flat(&b));

    // thread count does not change the numbers
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let c = pool.install(|| phase_sweep(&grid, &base, &opts).unwrap());
    assert_eq!(flat(&a), flat(&c));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn stoc_not_worse_than_cl(r in 0.3f64..4.0, ssp in 0.5f64..2.0, sin in 0.1f64..0.5, dsp in 5usize..30) {
        let p = ModelParams::new(r * ssp, sin, ssp, 5, dsp);
        let res = uda_compare(&p).unwrap();
        prop_assert!(res[3].target_acc >= res[2].target_acc - 0.01, "cl {} stoc {}", res[2].target_acc, res[3].target_acc);
    }
}
