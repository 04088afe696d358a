//! Experiment orchestration: resolve the problem, run the chosen
//! iteration, and write the trace, summary, and breakpoint files.

use crate::config::{ConfigError, ExperimentConfig, MethodChoice};
use crate::registry::{self, ProblemEntry};
use freeknot::models::{h1_rel_error, l2_rel_error, IntervalMap};
use freeknot::solvers::{
    bfgs::run_bfgs_baseline, run, solve_coefficients_monotone, Method, Termination,
};
use freeknot::{
    adaptivity::run_adbn, AdaptConfig, BfgsConfig, Problem, QuadratureRule, ScalarField,
    ShallowReluNet, SolverConfig, SolverRun,
};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("solver: {0}")]
    Solver(#[from] freeknot::Error),
}

/// Everything one run produces, in solve coordinates plus the map back.
pub struct RunOutcome {
    pub run: SolverRun,
    pub problem_id: &'static str,
    pub nu: Option<f64>,
    pub n_init: usize,
    pub method: MethodChoice,
    pub seed: u64,
    /// Relative L2 error of the final net, when an exact solution exists.
    pub l2_final: Option<f64>,
    /// Affine map back to the natural interval when the problem was
    /// rewritten on (0,1); `None` when it was solved in place.
    pub map: Option<IntervalMap<f64>>,
}

impl RunOutcome {
    /// First-row relative error: the uniform-breakpoint starting state
    /// after its coefficient solve.
    pub fn e0(&self) -> Option<f64> {
        self.run.trace.records.first().and_then(|r| r.rel_err)
    }

    pub fn initial_loss(&self) -> Option<f64> {
        self.run.trace.records.first().map(|r| r.loss)
    }

    /// Breakpoints of the final net on the natural interval.
    pub fn native_breakpoints(&self) -> Vec<f64> {
        let b = self.run.net.partition().breakpoints();
        match &self.map {
            Some(map) => b.iter().map(|&t| map.from_unit(t)).collect(),
            None => b.to_vec(),
        }
    }
}

/// Convergence rate `r` with `e_n = (1/n)^r`; undefined outside
/// `0 < e_n < 1` or for single-neuron nets.
pub fn rate_report(e_n: f64, n: usize) -> Option<f64> {
    if n < 2 || !(e_n > 0.0) || e_n >= 1.0 {
        return None;
    }
    Some((1.0 / e_n).ln() / (n as f64).ln())
}

fn termination_label(t: Termination) -> &'static str {
    match t {
        Termination::MaxIters => "max-iters",
        Termination::GradTol => "grad-tol",
        Termination::Stalled => "stalled",
        Termination::StructuredFailure => "structured-failure",
        Termination::EstimatorConverged => "estimator-converged",
    }
}

/// Runs one experiment. Problems registered away from (0,1) are
/// rewritten on the unit interval first; the outcome keeps the map so
/// breakpoints can be reported in natural coordinates.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutcome, CliError> {
    let entry = registry::lookup(cfg)?;
    let rule = QuadratureRule::gauss_legendre(cfg.quad_order)?;
    let ProblemEntry {
        id,
        problem,
        u_exact,
        du_exact,
        features,
        init,
        ..
    } = entry;

    // Solve-side data: problem, interval, cut points, exact fields.
    let (prob, map, feats, u_s, du_s, x_lo, x_hi) = match problem {
        Problem::DiffusionReaction(dr) if !(dr.x_lo == 0.0 && dr.x_hi == 1.0) => {
            let (unit, map) = dr.to_unit();
            let l = map.scale();
            let u_s = u_exact.map(|u| ScalarField::new(move |t: f64| u.eval(map.from_unit(t))));
            let du_s = du_exact
                .map(|du| ScalarField::new(move |t: f64| du.eval(map.from_unit(t)) * l));
            let feats = unit.features.clone();
            (
                Problem::DiffusionReaction(unit),
                Some(map),
                feats,
                u_s,
                du_s,
                0.0,
                1.0,
            )
        }
        other => {
            let (lo, hi) = match &other {
                Problem::DiffusionReaction(dr) => (dr.x_lo, dr.x_hi),
                Problem::LeastSquares(_) => (0.0, 1.0),
            };
            (other, None, features, u_exact, du_exact, lo, hi)
        }
    };

    let mut net0 = registry::initial_net(init, cfg.n, x_lo, x_hi);
    solve_coefficients_monotone(&prob, &mut net0, &rule, None)?;

    // Fitting runs measure the relative L2 error of values (the target's
    // derivative need not be square-integrable); boundary-value runs
    // measure the energy-type relative H1 seminorm error.
    let is_ls = matches!(prob, Problem::LeastSquares(_));
    let metric: Option<Box<dyn Fn(&ShallowReluNet) -> f64>> = if is_ls {
        u_s.as_ref().map(|u| {
            let u = u.clone();
            let feats = feats.clone();
            let rule = rule.clone();
            Box::new(move |net: &ShallowReluNet| {
                l2_rel_error(net, &u, &feats, &rule)
                    .expect("registered exact solutions have nonzero norm")
            }) as _
        })
    } else {
        du_s.as_ref().map(|du| {
            let du = du.clone();
            let feats = feats.clone();
            let rule = rule.clone();
            Box::new(move |net: &ShallowReluNet| {
                h1_rel_error(net, &du, &feats, &rule)
                    .expect("registered exact derivatives have nonzero seminorm")
            }) as _
        })
    };
    let metric_ref: Option<&dyn Fn(&ShallowReluNet) -> f64> =
        metric.as_deref().map(|m| m as _);

    let run_out = match cfg.method {
        MethodChoice::Dbn | MethodChoice::Dbgn => {
            let scfg = SolverConfig {
                method: if cfg.method == MethodChoice::Dbn {
                    Method::DampedBlockNewton
                } else {
                    Method::DampedBlockGaussNewton
                },
                max_iters: cfg.max_iters,
                ..SolverConfig::default()
            };
            run(&prob, net0, &scfg, &rule, metric_ref)?
        }
        MethodChoice::Bfgs => {
            let bcfg = BfgsConfig {
                max_iters: cfg.max_iters,
                ..BfgsConfig::default()
            };
            // The baseline tracks derivative error only, so fitting runs
            // get their final L2 error filled in below instead.
            let du_track = if is_ls { None } else { du_s.as_ref() };
            run_bfgs_baseline(&prob, &net0, &bcfg, &rule, du_track)?
        }
        MethodChoice::Adbn => {
            let acfg = AdaptConfig {
                solver: SolverConfig {
                    method: Method::DampedBlockNewton,
                    max_iters: cfg.max_iters,
                    ..SolverConfig::default()
                },
                eps_stop: cfg.eps_stop,
                ..AdaptConfig::default()
            };
            run_adbn(&prob, net0, &acfg, &rule, metric_ref)?
        }
    };

    let l2_final = match &u_s {
        Some(u) => Some(l2_rel_error(&run_out.net, u, &feats, &rule)?),
        None => None,
    };
    let mut run_out = run_out;
    if run_out.final_rel_err.is_none() && is_ls {
        run_out.final_rel_err = l2_final;
    }

    Ok(RunOutcome {
        run: run_out,
        problem_id: id,
        nu: cfg.nu,
        n_init: cfg.n,
        method: cfg.method,
        seed: cfg.seed,
        l2_final,
        map,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.16e}"),
        None => "NaN".to_string(),
    }
}

/// Writes `trace.csv`, `summary.txt`, `b_final.csv`, and (for adaptive
/// runs) `refinements.csv` into `dir`, using the given file suffix.
/// Returns the summary line.
pub fn write_outputs(dir: &Path, suffix: &str, out: &RunOutcome) -> Result<String, CliError> {
    std::fs::create_dir_all(dir)?;
    let file = |stem: &str| dir.join(format!("{stem}{suffix}.csv"));

    let mut trace = std::io::BufWriter::new(std::fs::File::create(file("trace"))?);
    writeln!(trace, "iter,J,e_n,grad_norm,eta,n,wall_ms")?;
    for r in &out.run.trace.records {
        writeln!(
            trace,
            "{},{:.16e},{},{:.16e},{:.16e},{},{:.3}",
            r.iter,
            r.loss,
            fmt_opt(r.rel_err),
            r.grad_norm,
            r.eta,
            r.n,
            r.wall_ms
        )?;
    }
    trace.flush()?;

    let mut bf = std::io::BufWriter::new(std::fs::File::create(file("b_final"))?);
    for b in out.native_breakpoints() {
        writeln!(bf, "{b:.16e}")?;
    }
    bf.flush()?;

    let refinements = &out.run.trace.refinements;
    if !refinements.is_empty() {
        let mut rf = std::io::BufWriter::new(std::fs::File::create(file("refinements"))?);
        writeln!(rf, "n,e_n,xi_n,r")?;
        for rec in refinements {
            writeln!(
                rf,
                "{},{},{:.16e},{}",
                rec.n,
                fmt_opt(rec.rel_err),
                rec.xi_rel,
                fmt_opt(rec.rate)
            )?;
        }
        rf.flush()?;
    }

    let line = summary_line(out);
    std::fs::write(dir.join(format!("summary{suffix}.txt")), format!("{line}\n"))?;
    Ok(line)
}

/// One-line key=value record of the run.
pub fn summary_line(out: &RunOutcome) -> String {
    let records = &out.run.trace.records;
    let iters = records.len().saturating_sub(1);
    let n_final = out.run.net.n();
    let e_n = out.run.final_rel_err;
    let mut line = format!("problem={}", out.problem_id);
    if let Some(nu) = out.nu {
        let _ = write!(line, " nu={nu:e}");
    }
    let _ = write!(
        line,
        " method={} n_init={} n_final={} iters={} termination={}",
        out.method.label(),
        out.n_init,
        n_final,
        iters,
        termination_label(out.run.termination)
    );
    let _ = write!(line, " J={:.6e}", out.run.final_loss);
    match e_n {
        Some(e) => {
            let _ = write!(line, " e_n={e:.6e}");
            match rate_report(e, n_final) {
                Some(r) => {
                    let _ = write!(line, " r={r:.4}");
                }
                None => {
                    let _ = write!(line, " r=undefined");
                }
            }
        }
        None => {
            let _ = write!(line, " e_n=NaN r=undefined");
        }
    }
    if let Some(l2) = out.l2_final {
        let _ = write!(line, " l2={l2:.6e}");
    }
    let refinements = &out.run.trace.refinements;
    if !refinements.is_empty() {
        let ns: Vec<String> = refinements.iter().map(|r| r.n.to_string()).collect();
        let _ = write!(line, " refine_ns={}", ns.join(";"));
        let _ = write!(line, " xi_rel={:.6e}", refinements[refinements.len() - 1].xi_rel);
    }
    let _ = write!(line, " seed={}", out.seed);
    line
}

/// The perturbation ladder of the `sweep-nu` subcommand.
pub const NU_LADDER: [f64; 5] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

/// Runs the singular family across the whole `nu` ladder, one trace per
/// `nu`, plus an aggregate `sweep_nu.csv`. Returns the summary lines.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<String>, CliError> {
    std::fs::create_dir_all(&cfg.out)?;
    let mut lines = Vec::new();
    let mut agg = String::from("nu,e0,e_n,l2_rel,J,iters\n");
    for nu in NU_LADDER {
        let mut sub = cfg.clone();
        sub.problem = "dr_singular".to_string();
        sub.nu = Some(nu);
        let out = execute(&sub)?;
        let suffix = format!("_nu{nu:e}");
        lines.push(write_outputs(&cfg.out, &suffix, &out)?);
        let _ = writeln!(
            agg,
            "{nu:e},{},{},{},{:.16e},{}",
            fmt_opt(out.e0()),
            fmt_opt(out.run.final_rel_err),
            fmt_opt(out.l2_final),
            out.run.final_loss,
            out.run.trace.records.len().saturating_sub(1)
        );
    }
    std::fs::write(cfg.out.join("sweep_nu.csv"), agg)?;
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_cfg() -> ExperimentConfig {
        ExperimentConfig {
            max_iters: 5,
            n: 6,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn rate_report_matches_definition() {
        assert!((rate_report(0.1, 10).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(rate_report(1.0, 10), None);
        assert_eq!(rate_report(1.5, 10), None);
        assert_eq!(rate_report(0.5, 1), None);
        assert_eq!(rate_report(0.0, 10), None);
        let r = rate_report(8.83e-3, 194).unwrap();
        assert!((r - 0.898).abs() < 5e-4, "{r}");
        let r = rate_report(1.50e-2, 194).unwrap();
        assert!((r - 0.797).abs() < 5e-4, "{r}");
    }

    #[test]
    fn execute_fills_row_zero_and_final_fields() {
        let out = execute(&quick_cfg()).unwrap();
        assert_eq!(out.run.trace.records[0].iter, 0);
        assert!(out.e0().unwrap() > 0.0);
        assert!(out.run.final_loss <= out.initial_loss().unwrap());
        assert_eq!(out.run.net.n(), 6);
        assert!(out.map.is_none());
        assert!(out.l2_final.unwrap() > 0.0);
    }

    #[test]
    fn singular_runs_on_unit_and_reports_native_breakpoints() {
        let cfg = ExperimentConfig {
            problem: "dr_singular".to_string(),
            nu: Some(1e-2),
            n: 8,
            max_iters: 3,
            ..ExperimentConfig::default()
        };
        let out = execute(&cfg).unwrap();
        let solved = out.run.net.partition();
        assert!(solved.x_lo() == 0.0 && solved.x_hi() == 1.0);
        let native = out.native_breakpoints();
        assert!(native.iter().all(|&b| (-1.0..=1.0).contains(&b)));
        assert!(native[0] < 0.0, "right-anchored grid starts left of center");
    }

    #[test]
    fn summary_line_is_deterministic_and_keyed() {
        let out = execute(&quick_cfg()).unwrap();
        let line = summary_line(&out);
        let again = summary_line(&out);
        assert_eq!(line, again);
        for key in ["problem=", "method=", "iters=", "J=", "e_n=", "r=", "seed="] {
            assert!(line.contains(key), "missing {key} in {line}");
        }
        assert!(!line.contains('\n'));
    }

    #[test]
    fn outputs_land_in_the_directory() {
        let dir = std::env::temp_dir().join(format!("freeknot-runner-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        let out = execute(&quick_cfg()).unwrap();
        let line = write_outputs(&dir, "", &out).unwrap();
        let trace = std::fs::read_to_string(dir.join("trace.csv")).unwrap();
        assert!(trace.starts_with("iter,J,e_n,grad_norm,eta,n,wall_ms\n"));
        assert_eq!(trace.lines().count(), out.run.trace.records.len() + 1);
        let b = std::fs::read_to_string(dir.join("b_final.csv")).unwrap();
        assert_eq!(b.lines().count(), 6);
        // 17 significant digits: d.16 digits in scientific notation.
        let first = b.lines().next().unwrap();
        let mantissa = first.split('e').next().unwrap();
        assert_eq!(mantissa.trim_start_matches('-').replace('.', "").len(), 17);
        let summary = std::fs::read_to_string(dir.join("summary.txt")).unwrap();
        assert_eq!(summary.trim_end(), line);
        let _ = std::fs::remove_dir_all(&dir);
    }
}
