//! Execute one configured experiment and write its artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};
use stoclab::analytics::{
    ablation_k, ablation_kappa, phase_sweep, ratio_grid, ssl_compare, uda_compare_with, ExperimentResult, Method, RunOpts, SweepRow,
    TrainerOpts,
};
use stoclab::augment::SPU_SIGMA_COEF;

use crate::config::{Experiment, RunConfig};
use crate::output::{g10, write_results};
use crate::svg::{Chart, Series};
use crate::verify;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Model(#[from] stoclab::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// What a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub files: Vec<PathBuf>,
    pub rows: usize,
    pub failed_cells: usize,
    /// Failed checks of `verify`.
    pub failed_checks: usize,
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T, RunError> {
    r.map_err(|source| RunError::Io { path: path.to_path_buf(), source })
}

fn opts(cfg: &RunConfig) -> RunOpts {
    RunOpts { eta: cfg.eta, max_iters: cfg.max_iters, seed: cfg.seed, mc_n: cfg.mc.then_some(cfg.mc_n) }
}

fn flatten(rows: &[SweepRow]) -> (Vec<ExperimentResult>, Vec<(String, String)>) {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for r in rows {
        match &r.results {
            Ok(v) => ok.extend(v.iter().cloned()),
            Err(e) => failed.push((g10(r.key), e.clone())),
        }
    }
    (ok, failed)
}

fn sweep_chart(rows: &[SweepRow], methods: &[Method], title: &str, x_label: &str, log_x: bool) -> Chart {
    let series = methods
        .iter()
        .map(|&m| Series { name: m.to_string(), points: rows.iter().filter_map(|r| r.acc(m).map(|a| (r.key, a))).collect() })
        .collect();
    Chart { title: title.into(), x_label: x_label.into(), y_label: "target accuracy".into(), log_x, y_range: Some((0.0, 1.0)), series }
}

fn params_json(cfg: &RunConfig) -> Value {
    json!({
        "gamma": cfg.gamma,
        "sigma_in": cfg.sigma_in,
        "sigma_sp": cfg.sigma_sp,
        "d_in": cfg.d_in,
        "d_sp": cfg.d_sp,
        "k": cfg.k,
        "w_star": "all-ones / sqrt(d_in)",
    })
}

pub fn execute(cfg: &RunConfig) -> Result<Summary, RunError> {
    io(&cfg.out, fs::create_dir_all(&cfg.out))?;
    let p = cfg.params();
    let o = opts(cfg);
    let mut meta = json!({
        "experiment": cfg.experiment.name(),
        "seed": cfg.seed,
        "params": params_json(cfg),
        "eta": cfg.eta,
        "max_iters": cfg.max_iters,
        "mc": cfg.mc,
        "mc_n": cfg.mc.then_some(cfg.mc_n),
        "spu_sigma_coef": SPU_SIGMA_COEF,
        "versions": { "stoclab": stoclab_version(), "stoclab-cli": env!("CARGO_PKG_VERSION") },
        "jobs": rayon::current_num_threads(),
    });
    let mut files = Vec::new();
    let mut chart = None;
    let (rows, failures): (Vec<ExperimentResult>, Vec<(String, String)>) = match cfg.experiment {
        Experiment::Uda => (uda_compare_with(&p, &o, 0)?.to_vec(), Vec::new()),
        Experiment::Ssl => {
            meta["n_labeled"] = json!(cfg.n_labeled);
            meta["n_unlabeled"] = cfg.n_unlabeled.map_or(json!("population"), |n| json!(n));
            (ssl_compare(&p, cfg.n_labeled, cfg.n_unlabeled, &o)?.to_vec(), Vec::new())
        }
        Experiment::Phase => {
            let g = &cfg.gamma_over_sigmasp;
            meta["grid"] = json!({ "gamma_over_sigmasp": g.spec, "values": g.values, "realised_as": "gamma = ratio * sigma_sp" });
            let sweep = phase_sweep(&ratio_grid(&g.values, &p), &p, &o)?;
            chart = Some(sweep_chart(&sweep, &Method::ALL, "Target accuracy against gamma / sigma_sp", "gamma / sigma_sp", g.log));
            flatten(&sweep)
        }
        Experiment::AblateK => {
            meta["ks"] = json!(cfg.ks);
            let sweep = ablation_k(&p, &cfg.ks, &o)?;
            chart = Some(sweep_chart(&sweep, &[Method::Cl, Method::Stoc], "Feature dimension ablation", "k", false));
            flatten(&sweep)
        }
        Experiment::AblateKappa => {
            meta["kappas"] = json!(cfg.kappas);
            meta["trainer"] = json!({ "k": cfg.k, "steps": cfg.steps, "grad_tol": cfg.grad_tol, "lr": cfg.lr.map_or(json!("auto"), |v| json!(v)) });
            let t = TrainerOpts { k: cfg.k, steps: cfg.steps, grad_tol: cfg.grad_tol, lr: cfg.lr };
            let sweep = ablation_kappa(&p, &cfg.kappas, &t, &o)?;
            chart = Some(sweep_chart(&sweep, &[Method::Cl, Method::Stoc], "Regulariser strength ablation", "kappa", true));
            flatten(&sweep)
        }
        Experiment::Verify => {
            let checks = verify::run_all(cfg.seed);
            let path = cfg.out.join("verify.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["check", "status", "detail"])?;
            let mut failed = 0;
            for c in &checks {
                let status = if c.pass { "PASS" } else { "FAIL" };
                failed += usize::from(!c.pass);
                println!("{status} {} {}", c.name, c.detail);
                w.write_record([c.name, status, c.detail.as_str()])?;
            }
            w.flush().map_err(|source| RunError::Io { path: path.clone(), source })?;
            files.push(path);
            meta["checks"] = json!(checks.len());
            meta["failed_checks"] = json!(failed);
            files.push(write_meta(&cfg.out, &meta)?);
            return Ok(Summary { files, rows: checks.len(), failed_cells: 0, failed_checks: failed });
        }
    };

    let path = cfg.out.join("results.csv");
    let f = io(&path, fs::File::create(&path))?;
    write_results(std::io::BufWriter::new(f), cfg.experiment.name(), &rows, &failures)?;
    files.push(path);
    meta["rows"] = json!(rows.len());
    meta["failed_cells"] = json!(failures.len());
    files.push(write_meta(&cfg.out, &meta)?);
    if let (true, Some(chart)) = (cfg.svg, chart) {
        let path = cfg.out.join("figure.svg");
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        io(&path, fs::write(&path, chart.render(&format!("stoclab {} generated at unix time {secs}", env!("CARGO_PKG_VERSION")))))?;
        files.push(path);
    }
    Ok(Summary { files, rows: rows.len(), failed_cells: failures.len(), failed_checks: 0 })
}

fn write_meta(dir: &Path, meta: &Value) -> Result<PathBuf, RunError> {
    let path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(meta).expect("json values serialise");
    io(&path, fs::write(&path, text + "\n"))?;
    Ok(path)
}

fn stoclab_version() -> &'static str {
    stoclab::VERSION
}
