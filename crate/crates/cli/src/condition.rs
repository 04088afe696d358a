//! Spectral condition numbers of the uniform-breakpoint Gram matrices.
//! The basis is far from orthogonal, so these grow fast: the mass
//! matrix like n^4 and the unit-coefficient stiffness matrix like n^2.

use crate::config::ConfigError;
use crate::runner::CliError;
use freeknot::assembly::{dense_mass, dense_stiffness};
use freeknot::dense::spd_condition_number;
use freeknot::partition::Partition;
use freeknot::QuadratureRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixKind {
    Mass,
    Stiffness,
}

impl MatrixKind {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        match s {
            "mass" => Ok(MatrixKind::Mass),
            "stiffness" => Ok(MatrixKind::Stiffness),
            other => Err(ConfigError::new(
                "kind",
                format!("unknown matrix kind `{other}`; expected mass or stiffness"),
            )),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MatrixKind::Mass => "mass",
            MatrixKind::Stiffness => "stiffness",
        }
    }
}

/// Dense assembly is the price of an eigenvalue-accurate answer, so the
/// size is capped; power iteration converges the estimate to well
/// within 5%.
pub const CONDITION_MAX_N: usize = 512;

/// 2-norm condition number of the uniform-breakpoint Gram matrix of the
/// chosen kind on (0,1), with unit coefficient.
pub fn measure_condition(
    kind: MatrixKind,
    n: usize,
    rule: &QuadratureRule,
) -> Result<f64, CliError> {
    if n == 0 {
        return Err(ConfigError::new("n", "need at least one neuron").into());
    }
    if n > CONDITION_MAX_N {
        return Err(ConfigError::new(
            "n",
            format!("condition measurement supports n <= {CONDITION_MAX_N}, got {n}"),
        )
        .into());
    }
    let p = Partition::uniform(n, 0.0, 1.0)?;
    let m = match kind {
        MatrixKind::Mass => dense_mass(|_| 1.0, &p, rule),
        MatrixKind::Stiffness => dense_stiffness(|_| 1.0, &p, rule),
    };
    Ok(spd_condition_number(&m, 1e-4)?)
}

/// Condition numbers along a doubling ladder 1, 2, 4, ... up to and
/// including `n_max`.
pub fn condition_ladder(
    kind: MatrixKind,
    n_max: usize,
    rule: &QuadratureRule,
) -> Result<Vec<(usize, f64)>, CliError> {
    let mut ns = Vec::new();
    let mut n = 1;
    while n <= n_max {
        ns.push(n);
        n *= 2;
    }
    if *ns.last().expect("ladder is nonempty") != n_max {
        ns.push(n_max);
    }
    let mut rows = Vec::with_capacity(ns.len());
    for n in ns {
        rows.push((n, measure_condition(kind, n, rule)?));
    }
    Ok(rows)
}
