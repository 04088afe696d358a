//! Built-in problem registry: each entry carries the coefficients, the
//! natural interval, the exact solution and its derivatives when known,
//! and the breakpoint layout its experiments start from. Every entry
//! with an exact solution is residual-checked at lookup time.

use crate::config::{ConfigError, ExperimentConfig};
use freeknot::{DrProblem, LsProblem, Partition, Problem, ScalarField, ShallowReluNet};
use std::collections::BTreeMap;

/// Which end of the interval the uniform starting breakpoints touch.
/// Fitting runs anchor at the left end (a knot at the origin sharpens
/// the root singularity); boundary-value runs anchor at the right end
/// where the penalized boundary condition acts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitSide {
    LeftAnchored,
    RightAnchored,
}

/// What a problem id resolves to.
#[derive(Debug)]
pub struct ProblemEntry {
    pub id: &'static str,
    pub problem: Problem,
    pub x_lo: f64,
    pub x_hi: f64,
    pub u_exact: Option<ScalarField>,
    pub du_exact: Option<ScalarField>,
    pub ddu_exact: Option<ScalarField>,
    /// Sharp points of the data, used as quadrature cuts in error norms.
    pub features: Vec<f64>,
    pub init: InitSide,
}

impl ProblemEntry {
    pub fn is_least_squares(&self) -> bool {
        matches!(self.problem, Problem::LeastSquares(_))
    }
}

/// Uniform starting net: `n` zero-weight neurons with breakpoints
/// anchored at the chosen end of the interval.
pub fn initial_net(side: InitSide, n: usize, x_lo: f64, x_hi: f64) -> ShallowReluNet {
    let span = x_hi - x_lo;
    let raw: Vec<f64> = match side {
        InitSide::LeftAnchored => (0..n).map(|i| x_lo + i as f64 * span / n as f64).collect(),
        InitSide::RightAnchored => (1..=n).map(|i| x_lo + i as f64 * span / n as f64).collect(),
    };
    let part = Partition::project_ordered(&raw, x_lo, x_hi, 1e-8)
        .expect("anchored uniform grid always projects");
    ShallowReluNet::new(0.0, vec![0.0; n], part).expect("zero net on a valid partition")
}

/// Resolves a problem id to a registry entry and residual-checks it.
pub fn lookup(cfg: &ExperimentConfig) -> Result<ProblemEntry, ConfigError> {
    let entry = match cfg.problem.as_str() {
        "ls_sqrt" => ls_sqrt(),
        "dr_exp_bump" => dr_exp_bump(cfg.gamma),
        "dr_singular" => {
            let nu = cfg
                .nu
                .ok_or_else(|| ConfigError::new("nu", "the singular family needs nu"))?;
            dr_singular(nu, cfg.gamma)
        }
        "custom" => custom(&cfg.custom, cfg.gamma)?,
        other => {
            return Err(ConfigError::new(
                "problem",
                format!("`{other}` is not a registered problem"),
            ))
        }
    };
    self_test(&entry)?;
    Ok(entry)
}

/// Least-squares fit of the root singularity `u(x) = sqrt(x)` on (0,1).
pub fn ls_sqrt() -> ProblemEntry {
    let u = |x: f64| x.sqrt();
    let du = |x: f64| 0.5 / x.sqrt();
    ProblemEntry {
        id: "ls_sqrt",
        problem: Problem::LeastSquares(LsProblem::new(
            ScalarField::new(u),
            ScalarField::constant(1.0),
        )),
        x_lo: 0.0,
        x_hi: 1.0,
        u_exact: Some(ScalarField::new(u)),
        du_exact: Some(ScalarField::new(du)),
        ddu_exact: None,
        features: Vec::new(),
        init: InitSide::LeftAnchored,
    }
}

/// Reaction-diffusion problem on (0,1) with unit coefficients whose
/// solution is a narrow exponential bump `x (g(x) - g(1))` centered at
/// x = 1/3 with width 0.1.
pub fn dr_exp_bump(gamma: f64) -> ProblemEntry {
    let g = |x: f64| (-(x - 1.0 / 3.0) * (x - 1.0 / 3.0) / 0.01).exp();
    let gp = move |x: f64| g(x) * (-2.0 * (x - 1.0 / 3.0) / 0.01);
    let gpp = move |x: f64| {
        g(x) * ((2.0 * (x - 1.0 / 3.0) / 0.01) * (2.0 * (x - 1.0 / 3.0) / 0.01) - 2.0 / 0.01)
    };
    let tail = (-4.0_f64 / 0.09).exp();
    let u = move |x: f64| x * (g(x) - tail);
    let du = move |x: f64| (g(x) - tail) + x * gp(x);
    let ddu = move |x: f64| 2.0 * gp(x) + x * gpp(x);
    let beta = u(1.0);
    let prob = DrProblem::new(
        ScalarField::constant(1.0),
        ScalarField::constant(1.0),
        ScalarField::new(move |x: f64| -ddu(x) + u(x)),
        0.0,
        beta,
        gamma,
        0.0,
        1.0,
    )
    .expect("bump coefficients are valid")
    .with_features(vec![1.0 / 3.0]);
    ProblemEntry {
        id: "dr_exp_bump",
        problem: Problem::DiffusionReaction(prob),
        x_lo: 0.0,
        x_hi: 1.0,
        u_exact: Some(ScalarField::new(u)),
        du_exact: Some(ScalarField::new(du)),
        ddu_exact: Some(ScalarField::new(ddu)),
        features: vec![1.0 / 3.0],
        init: InitSide::RightAnchored,
    }
}

/// Singularly perturbed problem on (-1,1): diffusion `nu`, unit
/// reaction, and an exact solution with interior layers of width
/// `eps = sqrt(nu)` at x = -1/2 and x = 1/2. Feature points grade
/// dyadically away from the layer centers so quadrature resolves them.
pub fn dr_singular(nu: f64, gamma: f64) -> ProblemEntry {
    let eps = nu.sqrt();
    let w = move |x: f64| (x * x - 0.25) / eps;
    let edge = (0.75 / eps).tanh();
    let u = move |x: f64| w(x).tanh() - edge;
    let du = move |x: f64| {
        let s = 1.0 / w(x).cosh();
        s * s * 2.0 * x / eps
    };
    let ddu = move |x: f64| {
        let s = 1.0 / w(x).cosh();
        let s2 = s * s;
        2.0 / (eps * eps) * s2 * (eps - 4.0 * x * x * w(x).tanh())
    };
    let f = move |x: f64| {
        let s = 1.0 / w(x).cosh();
        let s2 = s * s;
        -2.0 * (eps - 4.0 * x * x * w(x).tanh()) * s2 + u(x)
    };
    let mut features = Vec::new();
    for center in [-0.5_f64, 0.5] {
        features.push(center);
        let mut off = eps;
        while off <= 0.2 {
            features.push(center - off);
            features.push(center + off);
            off *= 2.0;
        }
    }
    features.retain(|&x| x > -1.0 && x < 1.0);
    features.sort_by(|a, b| a.partial_cmp(b).expect("feature points are finite"));
    features.dedup();
    let prob = DrProblem::new(
        ScalarField::constant(nu),
        ScalarField::constant(1.0),
        ScalarField::new(f),
        0.0,
        0.0,
        gamma,
        -1.0,
        1.0,
    )
    .expect("singular coefficients are valid")
    .with_features(features.clone());
    ProblemEntry {
        id: "dr_singular",
        problem: Problem::DiffusionReaction(prob),
        x_lo: -1.0,
        x_hi: 1.0,
        u_exact: Some(ScalarField::new(u)),
        du_exact: Some(ScalarField::new(du)),
        ddu_exact: Some(ScalarField::new(ddu)),
        features,
        init: InitSide::RightAnchored,
    }
}

fn custom_num(map: &BTreeMap<String, String>, key: &str, default: f64) -> Result<f64, ConfigError> {
    match map.get(key) {
        None => Ok(default),
        Some(raw) => raw.parse().map_err(|_| {
            ConfigError::new(&format!("custom-{key}"), format!("cannot parse `{raw}`"))
        }),
    }
}

/// User-defined problem from `custom-*` config keys: constant
/// coefficients, a polynomial load, no exact solution.
///
/// Keys: `custom-task` (`ls` or `dr`, required), `custom-f-poly`
/// (comma-separated coefficients, lowest degree first, required),
/// `custom-a`, `custom-r`, `custom-x-lo`, `custom-x-hi`,
/// `custom-alpha`, `custom-beta`.
pub fn custom(map: &BTreeMap<String, String>, gamma: f64) -> Result<ProblemEntry, ConfigError> {
    let task = map
        .get("task")
        .ok_or_else(|| ConfigError::new("custom-task", "custom problems need `ls` or `dr`"))?;
    let poly_raw = map.get("f-poly").ok_or_else(|| {
        ConfigError::new("custom-f-poly", "custom problems need load coefficients")
    })?;
    let mut coeffs = Vec::new();
    for part in poly_raw.split(',') {
        let c: f64 = part.trim().parse().map_err(|_| {
            ConfigError::new("custom-f-poly", format!("cannot parse `{}`", part.trim()))
        })?;
        coeffs.push(c);
    }
    let f = move |x: f64| coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c);
    let a = custom_num(map, "a", 1.0)?;
    let r = custom_num(map, "r", 1.0)?;
    let x_lo = custom_num(map, "x-lo", 0.0)?;
    let x_hi = custom_num(map, "x-hi", 1.0)?;
    if !(x_hi > x_lo) {
        return Err(ConfigError::new(
            "custom-x-hi",
            format!("interval ({x_lo}, {x_hi}) is empty"),
        ));
    }
    let alpha = custom_num(map, "alpha", 0.0)?;
    let beta = custom_num(map, "beta", 0.0)?;
    let problem = match task.as_str() {
        "ls" => Problem::LeastSquares(LsProblem::new(
            ScalarField::new(f),
            ScalarField::constant(r),
        )),
        "dr" => {
            let prob = DrProblem::new(
                ScalarField::constant(a),
                ScalarField::constant(r),
                ScalarField::new(f),
                alpha,
                beta,
                gamma,
                x_lo,
                x_hi,
            )
            .map_err(|e| ConfigError::new("custom", e.to_string()))?;
            prob.validate()
                .map_err(|e| ConfigError::new("custom", e.to_string()))?;
            Problem::DiffusionReaction(prob)
        }
        other => {
            return Err(ConfigError::new(
                "custom-task",
                format!("expected `ls` or `dr`, got `{other}`"),
            ))
        }
    };
    let init = if matches!(problem, Problem::LeastSquares(_)) {
        InitSide::LeftAnchored
    } else {
        InitSide::RightAnchored
    };
    Ok(ProblemEntry {
        id: "custom",
        problem,
        x_lo,
        x_hi,
        u_exact: None,
        du_exact: None,
        ddu_exact: None,
        features: Vec::new(),
        init,
    })
}

/// Residual check at 100 interior points: a registered exact solution
/// must satisfy its own equation to 1e-8. For least-squares entries the
/// "equation" is that the target equals the exact solution.
pub fn self_test(entry: &ProblemEntry) -> Result<(), ConfigError> {
    let (Some(u), Some(du)) = (&entry.u_exact, &entry.du_exact) else {
        return Ok(());
    };
    let span = entry.x_hi - entry.x_lo;
    for i in 0..100 {
        let x = entry.x_lo + (i as f64 + 0.5) / 100.0 * span;
        let resid = match &entry.problem {
            Problem::LeastSquares(pr) => u.eval(x) - pr.f.eval(x),
            Problem::DiffusionReaction(pr) => {
                let ddu = entry.ddu_exact.as_ref().ok_or_else(|| {
                    ConfigError::new(
                        "problem",
                        format!("{}: exact solution lacks a second derivative", entry.id),
                    )
                })?;
                -pr.a.deriv_or_fd(x, pr.fd_step) * du.eval(x) - pr.a.eval(x) * ddu.eval(x)
                    + pr.r.eval(x) * u.eval(x)
                    - pr.f.eval(x)
            }
        };
        if !(resid.abs() <= 1e-8) {
            return Err(ConfigError::new(
                "problem",
                format!(
                    "{}: exact-solution residual {resid:.3e} at x = {x:.6} exceeds 1e-8",
                    entry.id
                ),
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_builtin_passes_its_residual_check() {
        self_test(&ls_sqrt()).unwrap();
        self_test(&dr_exp_bump(1e4)).unwrap();
        for nu in [1e-2, 1e-3, 1e-4, 1e-5, 1e-6] {
            self_test(&dr_singular(nu, 1e4)).unwrap();
        }
    }

    #[test]
    fn a_wrong_load_fails_the_residual_check() {
        let mut entry = dr_exp_bump(1e4);
        let Problem::DiffusionReaction(pr) = &mut entry.problem else {
            unreachable!()
        };
        let good = pr.f.clone();
        pr.f = ScalarField::new(move |x| good.eval(x) + 1e-6);
        assert!(self_test(&entry).is_err());
    }

    #[test]
    fn bump_boundary_data_vanish() {
        let entry = dr_exp_bump(1e4);
        let u = entry.u_exact.as_ref().unwrap();
        assert!(u.eval(0.0).abs() < 1e-300);
        assert!(u.eval(1.0).abs() < 1e-18);
    }

    #[test]
    fn singular_layers_sit_at_half() {
        let entry = dr_singular(1e-4, 1e4);
        let du = entry.du_exact.as_ref().unwrap();
        // The derivative is large inside the layer, negligible outside.
        assert!(du.eval(0.5).abs() > 10.0);
        assert!(du.eval(0.0).abs() < 1e-8);
        assert!(entry.features.contains(&0.5) && entry.features.contains(&-0.5));
    }

    #[test]
    fn anchored_inits_lay_out_as_documented() {
        let left = initial_net(InitSide::LeftAnchored, 4, 0.0, 1.0);
        let b = left.partition().breakpoints();
        assert!(b[0] <= 1e-8 && (b[1] - 0.25).abs() < 1e-12);
        let right = initial_net(InitSide::RightAnchored, 4, 0.0, 1.0);
        let b = right.partition().breakpoints();
        assert!((b[0] - 0.25).abs() < 1e-12 && b[3] >= 1.0 - 1e-7);
    }

    #[test]
    fn custom_dr_round_trips_keys() {
        let mut map = BTreeMap::new();
        map.insert("task".to_string(), "dr".to_string());
        map.insert("f-poly".to_string(), "1, 0, 2".to_string());
        map.insert("a".to_string(), "0.5".to_string());
        map.insert("x-hi".to_string(), "2".to_string());
        let entry = custom(&map, 1e4).unwrap();
        let Problem::DiffusionReaction(pr) = &entry.problem else {
            panic!("expected a boundary-value problem")
        };
        assert_eq!(pr.f.eval(2.0), 9.0);
        assert_eq!(pr.a.eval(0.3), 0.5);
        assert_eq!(entry.x_hi, 2.0);
        self_test(&entry).unwrap();
    }

    #[test]
    fn custom_without_task_names_the_field() {
        let err = custom(&BTreeMap::new(), 1e4).unwrap_err();
        assert_eq!(err.field, "custom-task");
    }
}
