use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, ValueEnum};
use stoclab_cli::config::{ConfigError, Experiment, RunConfig};
use stoclab_cli::run::execute;

#[derive(Clone, Copy, ValueEnum)]
enum Cmd {
    Uda,
    Ssl,
    Phase,
    AblateK,
    AblateKappa,
    Verify,
}

impl From<Cmd> for Experiment {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Uda => Experiment::Uda,
            Cmd::Ssl => Experiment::Ssl,
            Cmd::Phase => Experiment::Phase,
            Cmd::AblateK => Experiment::AblateK,
            Cmd::AblateKappa => Experiment::AblateKappa,
            Cmd::Verify => Experiment::Verify,
        }
    }
}

/// Simulation runner for the invariant/spurious Gaussian shift model.
///
/// Settings come from the defaults, then `--config FILE` (key = value
/// lines), then flags. The output directory defaults to $STOCLAB_OUT or
/// ./out.
#[derive(Parser)]
#[command(name = "stoclab", version, allow_negative_numbers = true)]
struct Cli {
    experiment: Cmd,
    /// key = value file applied before the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    keys: Keys,
}

/// Each flag overrides the config-file key of the same name.
#[derive(Args)]
struct Keys {
    /// Invariant margin γ.
    #[arg(long)]
    gamma: Option<String>,
    /// Invariant noise standard deviation.
    #[arg(long)]
    sigma_in: Option<String>,
    /// Target spurious standard deviation.
    #[arg(long)]
    sigma_sp: Option<String>,
    #[arg(long)]
    d_in: Option<String>,
    #[arg(long)]
    d_sp: Option<String>,
    /// Feature dimension.
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Self-training step size.
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    max_iters: Option<String>,
    /// Add Monte Carlo accuracies (true/false).
    #[arg(long)]
    mc: Option<String>,
    #[arg(long)]
    mc_n: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// Worker threads (default: logical cores).
    #[arg(long)]
    jobs: Option<String>,
    /// Write figure.svg for sweeps (true/false).
    #[arg(long)]
    svg: Option<String>,
    /// Phase grid: lo:hi:n, lo:hi:nlog or a comma list.
    #[arg(long)]
    gamma_over_sigmasp: Option<String>,
    /// Comma list of k for ablate-k.
    #[arg(long)]
    ks: Option<String>,
    /// Comma list of κ for ablate-kappa.
    #[arg(long)]
    kappas: Option<String>,
    #[arg(long)]
    n_labeled: Option<String>,
    /// `population` or a pool size.
    #[arg(long)]
    n_unlabeled: Option<String>,
    /// Trainer step budget for ablate-kappa.
    #[arg(long)]
    steps: Option<String>,
    /// Trainer step size, or `auto`.
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    grad_tol: Option<String>,
}

impl Keys {
    fn pairs(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("gamma", &self.gamma),
            ("sigma_in", &self.sigma_in),
            ("sigma_sp", &self.sigma_sp),
            ("d_in", &self.d_in),
            ("d_sp", &self.d_sp),
            ("k", &self.k),
            ("seed", &self.seed),
            ("eta", &self.eta),
            ("max_iters", &self.max_iters),
            ("mc", &self.mc),
            ("mc_n", &self.mc_n),
            ("out", &self.out),
            ("jobs", &self.jobs),
            ("svg", &self.svg),
            ("gamma_over_sigmasp", &self.gamma_over_sigmasp),
            ("ks", &self.ks),
            ("kappas", &self.kappas),
            ("n_labeled", &self.n_labeled),
            ("n_unlabeled", &self.n_unlabeled),
            ("steps", &self.steps),
            ("lr", &self.lr),
            ("grad_tol", &self.grad_tol),
        ]
    }
}

fn configure(cli: &Cli) -> Result<RunConfig, String> {
    let mut cfg = RunConfig::new(cli.experiment.into());
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        cfg.apply_file(&text).map_err(|e| match e {
            ConfigError::UnknownKey { line_no, line } => format!("{}:{line_no}: unknown key: {line}", path.display()),
            e => format!("{}: {e}", path.display()),
        })?;
    }
    for (k, v) in cli.keys.pairs() {
        if let Some(v) = v {
            cfg.set(k, v).map_err(|e| e.to_string())?;
        }
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn main() -> ExitCode {
    // `stoclab run <experiment>` is accepted as a synonym
    let mut args: Vec<String> = std::env::args().collect();
    if args.get(1).is_some_and(|a| a == "run") {
        args.remove(1);
    }
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let cfg = match configure(&cli) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("stoclab: {msg}");
            return ExitCode::from(2);
        }
    };
    if let Some(n) = cfg.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("stoclab: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(&cfg) {
        Ok(s) => {
            for f in &s.files {
                println!("wrote {}", f.display());
            }
            if s.failed_cells > 0 {
                eprintln!("stoclab: {} sweep cell(s) failed; see the extra column", s.failed_cells);
            }
            if s.failed_checks > 0 {
                eprintln!("stoclab: {} check(s) failed", s.failed_checks);
                return ExitCode::from(1);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("stoclab: {e}");
            ExitCode::from(1)
        }
    }
}
