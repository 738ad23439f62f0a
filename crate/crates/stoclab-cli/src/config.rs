//! Run configuration: a flat `key = value` file overlaid by command-line
//! flags. Keys are snake_case in files and kebab-case as flags.

use std::fmt;
use std::path::PathBuf;

use stoclab::analytics::log_grid;
use stoclab::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Uda,
    Ssl,
    Phase,
    AblateK,
    AblateKappa,
    Verify,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Uda => "uda",
            Experiment::Ssl => "ssl",
            Experiment::Phase => "phase",
            Experiment::AblateK => "ablate-k",
            Experiment::AblateKappa => "ablate-kappa",
            Experiment::Verify => "verify",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line_no}: unknown key in `{line}`")]
    UnknownKey { line_no: usize, line: String },
    #[error("line {line_no}: expected `key = value`, got `{line}`")]
    Syntax { line_no: usize, line: String },
    #[error("unknown key `{0}`")]
    UnknownFlag(String),
    #[error("invalid value for `{key}`: `{value}` ({reason})")]
    Invalid { key: String, value: String, reason: String },
}

/// Grid of γ/σsp ratios with the text it was parsed from.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub spec: String,
    pub values: Vec<f64>,
    pub log: bool,
}

impl Grid {
    /// `lo:hi:n` (linear), `lo:hi:nlog` (log-spaced) or a comma list.
    pub fn parse(spec: &str) -> Result<Self, String> {
        let spec = spec.trim();
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() == 3 {
            let lo: f64 = parts[0].trim().parse().map_err(|_| "bad lower end".to_string())?;
            let hi: f64 = parts[1].trim().parse().map_err(|_| "bad upper end".to_string())?;
            let (n, log) = match parts[2].trim().strip_suffix("log") {
                Some(n) => (n, true),
                None => (parts[2].trim(), false),
            };
            let n: usize = n.parse().map_err(|_| "bad point count".to_string())?;
            if n == 0 || !(lo.is_finite() && hi.is_finite()) || hi < lo {
                return Err("need n >= 1 and finite lo <= hi".into());
            }
            if log && !(lo > 0.0) {
                return Err("log grid needs lo > 0".into());
            }
            let values = if log {
                log_grid(lo, hi, n)
            } else if n == 1 {
                vec![lo]
            } else {
                (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
            };
            return Ok(Self { spec: spec.to_string(), values, log });
        }
        let values = parse_list::<f64>(spec)?;
        Ok(Self { spec: spec.to_string(), values, log: false })
    }
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String> {
    let v: Result<Vec<T>, _> = s.split(',').map(|x| x.trim().parse::<T>()).collect();
    match v {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err("expected a comma-separated list".into()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub gamma: f64,
    /// Standard deviation of the invariant noise.
    pub sigma_in: f64,
    /// Standard deviation of the spurious block on target.
    pub sigma_sp: f64,
    pub d_in: usize,
    pub d_sp: usize,
    pub k: usize,
    pub seed: u64,
    pub eta: f64,
    pub max_iters: usize,
    pub mc: bool,
    pub mc_n: usize,
    pub out: PathBuf,
    pub jobs: Option<usize>,
    pub svg: bool,
    pub gamma_over_sigmasp: Grid,
    pub ks: Vec<usize>,
    pub kappas: Vec<f64>,
    pub n_labeled: usize,
    /// `None` runs self-training on the population.
    pub n_unlabeled: Option<usize>,
    pub steps: usize,
    /// `None` trains at the stability limit.
    pub lr: Option<f64>,
    pub grad_tol: f64,
}

pub const OUT_ENV: &str = "STOCLAB_OUT";

/// Every recognised key, in the order they are listed by `--help`.
pub const KEYS: &[&str] = &[
    "gamma",
    "sigma_in",
    "sigma_sp",
    "d_in",
    "d_sp",
    "k",
    "seed",
    "eta",
    "max_iters",
    "mc",
    "mc_n",
    "out",
    "jobs",
    "svg",
    "gamma_over_sigmasp",
    "ks",
    "kappas",
    "n_labeled",
    "n_unlabeled",
    "steps",
    "lr",
    "grad_tol",
];

impl RunConfig {
    /// Baseline-instance defaults.
    pub fn new(experiment: Experiment) -> Self {
        let p = ModelParams::baseline();
        Self {
            experiment,
            gamma: p.gamma,
            sigma_in: p.sigma_in,
            sigma_sp: p.sigma_sp,
            d_in: p.d_in,
            d_sp: p.d_sp,
            k: if experiment == Experiment::AblateKappa { 10 } else { p.k },
            seed: 0,
            eta: stoclab::selftrain::DEFAULT_ETA,
            max_iters: stoclab::selftrain::DEFAULT_MAX_ITERS,
            mc: false,
            mc_n: 1_000_000,
            out: std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out")),
            jobs: None,
            svg: true,
            gamma_over_sigmasp: Grid::parse("0.1:4:20log").expect("default grid parses"),
            ks: vec![1, 2, 3, 5, 10, 15, 20, 25],
            kappas: vec![0.01, 0.03, 0.1, 0.3, 0.5, 1.0, 3.0, 10.0, 100.0],
            n_labeled: 100,
            n_unlabeled: None,
            steps: 200_000,
            lr: None,
            grad_tol: 1e-8,
        }
    }

    /// Set one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = key.trim().replace('-', "_");
        let v = value.trim();
        let bad = |reason: &str| ConfigError::Invalid { key: key.clone(), value: v.to_string(), reason: reason.to_string() };
        fn num<T: std::str::FromStr>(v: &str) -> Result<T, ()> {
            v.parse::<T>().map_err(|_| ())
        }
        let pos_f = |v: &str| num::<f64>(v).ok().filter(|x| *x > 0.0 && x.is_finite());
        let nonneg_f = |v: &str| num::<f64>(v).ok().filter(|x| *x >= 0.0 && x.is_finite());
        let pos_u = |v: &str| num::<usize>(v).ok().filter(|&x| x > 0);
        let boolean = |v: &str| match v {
            "true" | "1" | "yes" | "on" => Some(true),
            "false" | "0" | "no" | "off" => Some(false),
            _ => None,
        };
        match key.as_str() {
            "gamma" => self.gamma = nonneg_f(v).ok_or_else(|| bad("expected a finite number >= 0"))?,
            "sigma_in" => self.sigma_in = nonneg_f(v).ok_or_else(|| bad("expected a finite number >= 0"))?,
            "sigma_sp" => self.sigma_sp = nonneg_f(v).ok_or_else(|| bad("expected a finite number >= 0"))?,
            "d_in" => self.d_in = pos_u(v).ok_or_else(|| bad("expected a positive integer"))?,
            "d_sp" => self.d_sp = pos_u(v).ok_or_else(|| bad("expected a positive integer"))?,
            "k" => self.k = pos_u(v).ok_or_else(|| bad("expected a positive integer"))?,
            "seed" => self.seed = num(v).map_err(|_| bad("expected an unsigned integer"))?,
            "eta" => self.eta = pos_f(v).ok_or_else(|| bad("expected a positive number"))?,
            "max_iters" => self.max_iters = pos_u(v).ok_or_else(|| bad("expected a positive integer"))?,
            "mc" => self.mc = boolean(v).ok_or_else(|| bad("expected true or false"))?,
            "mc_n" => self.mc_n = pos_u(v).ok_or_else(|| bad("expected a positive integer"))?,
            "out" => {
                if v.is_empty() {
                    return Err(bad("empty path"));
                }
                self.out = PathBuf::from(v)
            }
            "jobs" => self.jobs = Some(pos_u(v).ok_or_else(|| bad("expected a positive integer"))?),
            "svg" => self.svg = boolean(v).ok_or_else(|| bad("expected true or false"))?,
            "gamma_over_sigmasp" => self.gamma_over_sigmasp = Grid::parse(v).map_err(|e| bad(&e))?,
            "ks" => {
                let ks = parse_list::<usize>(v).map_err(|e| bad(&e))?;
                if ks.contains(&0) {
                    return Err(bad("k must be positive"));
                }
                self.ks = ks;
            }
            "kappas" => {
                let ks = parse_list::<f64>(v).map_err(|e| bad(&e))?;
                if ks.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
                    return Err(bad("kappa must be positive"));
                }
                self.kappas = ks;
            }
            "n_labeled" => self.n_labeled = num::<usize>(v).ok().filter(|&n| n >= 2).ok_or_else(|| bad("expected an integer >= 2"))?,
            "n_unlabeled" => {
                self.n_unlabeled = match v {
                    "population" | "inf" => None,
                    _ => Some(num::<usize>(v).ok().filter(|&n| n >= 1000).ok_or_else(|| bad("expected `population` or an integer >= 1000"))?),
                }
            }
            "steps" => self.steps = pos_u(v).ok_or_else(|| bad("expected a positive integer"))?,
            "lr" => {
                self.lr = match v {
                    "auto" => None,
                    _ => Some(pos_f(v).ok_or_else(|| bad("expected `auto` or a positive number"))?),
                }
            }
            "grad_tol" => self.grad_tol = nonneg_f(v).ok_or_else(|| bad("expected a finite number >= 0"))?,
            _ => return Err(ConfigError::UnknownFlag(key)),
        }
        Ok(())
    }

    /// Apply a `key = value` file. Blank lines and `#` comments are skipped.
    pub fn apply_file(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line_no, line: raw.to_string() });
            };
            match self.set(k, v) {
                Err(ConfigError::UnknownFlag(_)) => return Err(ConfigError::UnknownKey { line_no, line: raw.to_string() }),
                other => other?,
            }
        }
        Ok(())
    }

    pub fn params(&self) -> ModelParams {
        ModelParams::new(self.gamma, self.sigma_in, self.sigma_sp, self.d_in, self.d_sp)
            .with_k(self.k)
            .with_seed(self.seed)
    }

    /// Cross-field checks that single keys cannot make.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = self.d_in + self.d_sp;
        let bad = |key: &str, value: String, reason: &str| ConfigError::Invalid { key: key.into(), value, reason: reason.into() };
        if self.k > d {
            return Err(bad("k", self.k.to_string(), "k exceeds d_in + d_sp"));
        }
        if let Some(&k) = self.ks.iter().find(|&&k| k > d) {
            return Err(bad("ks", k.to_string(), "k exceeds d_in + d_sp"));
        }
        if self.experiment == Experiment::Phase && !(self.sigma_sp > 0.0) {
            return Err(bad("sigma_sp", self.sigma_sp.to_string(), "the phase sweep needs sigma_sp > 0"));
        }
        self.params().validate().map_err(|e| bad("params", String::new(), &e.to_string()))
    }
}
