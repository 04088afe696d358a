//! Command-line experiment runner for free-knot spline training.

use clap::{Args, Parser, Subcommand};
use freeknot_cli::condition::{self, MatrixKind};
use freeknot_cli::config::{self, ConfigError, ConfigPatch, ExperimentConfig, MethodChoice};
use freeknot_cli::registry;
use freeknot_cli::runner::{self, CliError};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "freeknot",
    version,
    about = "Train shallow ReLU networks (free-knot linear splines) on 1D fitting \
             and diffusion-reaction problems with structured O(n) Newton solvers"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit a least-squares target (default: the square-root singularity)
    FitLs(RunArgs),
    /// Solve a diffusion-reaction boundary-value problem (default: the
    /// exponential-bump solution)
    SolveDr(RunArgs),
    /// Grow the network adaptively until the error estimator converges
    Adapt(RunArgs),
    /// Condition numbers of the uniform-breakpoint Gram matrices
    Condition(ConditionArgs),
    /// Solve the singular family across nu = 1e-2 .. 1e-6
    SweepNu(RunArgs),
}

/// Shared experiment flags. Every flag overrides the matching config
/// key; unset flags fall back to the config file, then to defaults.
#[derive(Args)]
struct RunArgs {
    /// Problem id: ls_sqrt, dr_exp_bump, dr_singular[:NU], or custom
    #[arg(long)]
    problem: Option<String>,
    /// Number of neurons (breakpoints) in the starting net
    #[arg(long)]
    n: Option<usize>,
    /// Iteration family: dbn, dbgn, bfgs, or adbn
    #[arg(long)]
    method: Option<String>,
    /// Iteration budget
    #[arg(long)]
    iters: Option<usize>,
    /// Boundary penalty strength
    #[arg(long)]
    gamma: Option<f64>,
    /// Relative-estimator stopping tolerance of adaptive runs
    #[arg(long)]
    eps_stop: Option<f64>,
    /// Gauss-Legendre points per subinterval
    #[arg(long)]
    quad_order: Option<usize>,
    /// Seed recorded in the summary for replays
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// key=value config file applied underneath the flags
    #[arg(long)]
    config: Option<PathBuf>,
}

impl RunArgs {
    fn to_patch(&self) -> Result<ConfigPatch, ConfigError> {
        Ok(ConfigPatch {
            problem: self.problem.clone(),
            nu: None,
            n: self.n,
            method: self.method.as_deref().map(MethodChoice::parse).transpose()?,
            max_iters: self.iters,
            gamma: self.gamma,
            eps_stop: self.eps_stop,
            quad_order: self.quad_order,
            seed: self.seed,
            out: self.out.clone(),
            custom: Default::default(),
        })
    }

    fn resolve(&self, base: ExperimentConfig) -> Result<ExperimentConfig, CliError> {
        let mut cfg = base;
        if let Some(path) = &self.config {
            cfg.apply(&config::load_config_file(path)?);
        }
        cfg.apply(&self.to_patch()?);
        cfg.finish()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct ConditionArgs {
    /// Matrix kind: mass or stiffness
    #[arg(long)]
    kind: String,
    /// Largest size of the doubling ladder 1, 2, 4, ...
    #[arg(long, default_value_t = 32)]
    n: usize,
    /// Gauss-Legendre points per subinterval
    #[arg(long, default_value_t = 5)]
    quad_order: usize,
    /// Directory for condition.csv (omit to print only)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn expect_kind(cfg: &ExperimentConfig, want_ls: bool, sub: &str) -> Result<(), CliError> {
    let entry = registry::lookup(cfg)?;
    if entry.is_least_squares() != want_ls {
        let (this, other) = if want_ls {
            ("a least-squares problem", "solve-dr")
        } else {
            ("a boundary-value problem", "fit-ls")
        };
        return Err(ConfigError::new(
            "problem",
            format!("{sub} needs {this}; `{}` is not (use {other})", cfg.problem),
        )
        .into());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<Vec<String>, CliError> {
    match cli.cmd {
        Cmd::FitLs(args) => {
            let cfg = args.resolve(ExperimentConfig::default())?;
            expect_kind(&cfg, true, "fit-ls")?;
            let out = runner::execute(&cfg)?;
            Ok(vec![runner::write_outputs(&cfg.out, "", &out)?])
        }
        Cmd::SolveDr(args) => {
            let base = ExperimentConfig {
                problem: "dr_exp_bump".to_string(),
                n: 22,
                max_iters: 500,
                ..ExperimentConfig::default()
            };
            let cfg = args.resolve(base)?;
            expect_kind(&cfg, false, "solve-dr")?;
            let out = runner::execute(&cfg)?;
            Ok(vec![runner::write_outputs(&cfg.out, "", &out)?])
        }
        Cmd::Adapt(args) => {
            if let Some(m) = args.method.as_deref() {
                if MethodChoice::parse(m)? != MethodChoice::Adbn {
                    return Err(ConfigError::new(
                        "method",
                        "the adapt subcommand always runs adbn",
                    )
                    .into());
                }
            }
            let base = ExperimentConfig {
                problem: "dr_exp_bump".to_string(),
                max_iters: 4000,
                method: MethodChoice::Adbn,
                ..ExperimentConfig::default()
            };
            let mut cfg = args.resolve(base)?;
            cfg.method = MethodChoice::Adbn;
            let out = runner::execute(&cfg)?;
            Ok(vec![runner::write_outputs(&cfg.out, "", &out)?])
        }
        Cmd::Condition(args) => {
            let kind = MatrixKind::parse(&args.kind)?;
            let rule = freeknot::QuadratureRule::gauss_legendre(args.quad_order)?;
            let rows = condition::condition_ladder(kind, args.n, &rule)?;
            let mut csv = String::from("n,kappa\n");
            for (n, kappa) in &rows {
                csv.push_str(&format!("{n},{kappa:.6e}\n"));
            }
            if let Some(dir) = &args.out {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("condition.csv"), &csv)?;
            }
            Ok(vec![format!("kind={}", kind.label()), csv.trim_end().to_string()])
        }
        Cmd::SweepNu(args) => {
            if let Some(p) = args.problem.as_deref() {
                if p != "dr_singular" && !p.starts_with("dr_singular:") {
                    return Err(ConfigError::new(
                        "problem",
                        "sweep-nu always runs the dr_singular family",
                    )
                    .into());
                }
            }
            let base = ExperimentConfig {
                problem: "dr_singular".to_string(),
                nu: Some(runner::NU_LADDER[0]),
                n: 32,
                max_iters: 200,
                ..ExperimentConfig::default()
            };
            let cfg = args.resolve(base)?;
            runner::run_sweep(&cfg)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(lines) => {
            for line in lines {
                println!("{line}");
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
