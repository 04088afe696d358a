//! Damped block iterations on the breakpoints.
//!
//! Each outer iteration alternates an exact structured solve for the outer
//! coefficients with one damped (Gauss-)Newton step on the breakpoints. All
//! linear algebra inside an iteration runs through tridiagonal sweeps and
//! rank-one corrections, so the per-iteration cost is O(n).

use std::time::Instant;

use crate::error::Error;
use crate::linalg::{sherman_morrison_solve, TriDiagonal};
use crate::models::{Problem, StructuredHessian};
use crate::net::ShallowReluNet;
use crate::quadrature::QuadratureRule;
use crate::scalar::{dot, max_abs, norm2, real, Real};

pub mod bfgs;

/// Relative floor applied to near-zero coefficients inside direction solves,
/// so the diagonal scaling by the coefficients stays invertible. The stored
/// coefficients are never modified.
const WEIGHT_FLOOR_REL: f64 = 1e-12;

/// How many times the minimum-gap floor is doubled and the breakpoints
/// re-projected when a structured solve reports a singular pivot.
const STRUCTURED_RETRIES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Exact block Hessian, solved through two tridiagonal sweeps.
    DampedBlockNewton,
    /// Positive-definite Gauss-Newton surrogate for the block Hessian.
    DampedBlockGaussNewton,
}

/// Backtracking line-search parameters for the breakpoint step.
#[derive(Debug, Clone, Copy)]
pub struct DampingConfig<T> {
    pub init_step: T,
    pub shrink: T,
    pub max_backtracks: usize,
    pub armijo_c: T,
}

impl<T: Real> Default for DampingConfig<T> {
    fn default() -> Self {
        Self {
            init_step: T::one(),
            shrink: real::<T>(0.5),
            max_backtracks: 30,
            armijo_c: real::<T>(1e-4),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig<T> {
    pub method: Method,
    pub max_iters: usize,
    pub damping: DampingConfig<T>,
    /// Stop once the breakpoint gradient norm drops to this value; zero
    /// keeps iterating until `max_iters`.
    pub grad_tol: T,
    /// Overrides the partition's minimum-gap floor before iterating.
    pub min_gap: Option<T>,
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            method: Method::DampedBlockNewton,
            max_iters: 500,
            damping: DampingConfig::default(),
            grad_tol: T::zero(),
            min_gap: None,
        }
    }
}

/// One row of the iteration history. `rel_err` is present only when the
/// caller supplied an error metric.
#[derive(Debug, Clone, Copy)]
pub struct IterRecord<T> {
    pub iter: usize,
    pub loss: T,
    pub rel_err: Option<T>,
    pub grad_norm: T,
    pub eta: T,
    pub n: usize,
    pub wall_ms: f64,
}

/// One refinement event of the adaptive loop, recorded at the moment a
/// neuron count has converged, before new neurons are inserted.
#[derive(Debug, Clone, Copy)]
pub struct RefineRecord<T> {
    pub at_iter: usize,
    pub n: usize,
    pub rel_err: Option<T>,
    pub xi_rel: T,
    /// ln(1/e_n)/ln(n); absent when no error metric is installed or the
    /// metric is not in (0, 1).
    pub rate: Option<T>,
}

#[derive(Debug, Clone)]
pub struct IterTrace<T> {
    pub records: Vec<IterRecord<T>>,
    pub refinements: Vec<RefineRecord<T>>,
}

impl<T: Real> IterTrace<T> {
    pub fn new() -> Self {
        Self {
            records: Vec::new(),
            refinements: Vec::new(),
        }
    }

    /// Accepted losses must never increase across recorded iterations.
    pub fn loss_is_monotone(&self) -> bool {
        self.records
            .windows(2)
            .all(|w| w[1].loss <= w[0].loss)
    }
}

impl<T: Real> Default for IterTrace<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    MaxIters,
    GradTol,
    /// Line search could not find any loss-reducing step.
    Stalled,
    /// A structured solve stayed singular through every re-projection.
    StructuredFailure,
    /// Adaptive loop reached its relative-estimator target.
    EstimatorConverged,
}

#[derive(Debug, Clone)]
pub struct SolverRun<T> {
    pub net: ShallowReluNet<T>,
    pub trace: IterTrace<T>,
    pub termination: Termination,
    pub final_loss: T,
    pub final_rel_err: Option<T>,
}

/// Optional callback evaluating a relative error for trace rows.
pub type ErrMetric<'a, T> = &'a dyn Fn(&ShallowReluNet<T>) -> T;

fn guarded_weights<T: Real>(c: &[T]) -> Option<Vec<T>> {
    let scale = max_abs(c);
    if scale == T::zero() {
        return None;
    }
    let floor = real::<T>(WEIGHT_FLOOR_REL) * scale;
    Some(
        c.iter()
            .map(|&ci| {
                if ci.abs() >= floor {
                    ci
                } else if ci < T::zero() {
                    -floor
                } else {
                    floor
                }
            })
            .collect(),
    )
}

/// Solves `H d = grad` for the block Hessian
/// `H = D(s)D(c) + D(c)A_rD(c) + gamma d d^T` in O(n): the base matrix
/// factors through the stored tridiagonal inverse of `A_r`, and the rank-one
/// tail is removed with a Sherman-Morrison correction.
pub fn newton_direction<T: Real>(
    h: &StructuredHessian<T>,
    grad: &[T],
) -> Result<Vec<T>, Error> {
    let n = h.n();
    if grad.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: grad.len(),
        });
    }
    let Some(cg) = guarded_weights(&h.c) else {
        return Ok(vec![T::zero(); n]);
    };
    let ai = &h.ar_inv;
    let s = &h.diag_part;
    // K = I + D(c)^{-1} A_r^{-1} D(s); then H0^{-1} g = K^{-1} D(c)^{-1} A_r^{-1} D(c)^{-1} g.
    let mut diag = Vec::with_capacity(n);
    for p in 0..n {
        diag.push(T::one() + ai.diag()[p] * s[p] / cg[p]);
    }
    let m = n.saturating_sub(1);
    let mut sub = Vec::with_capacity(m);
    let mut sup = Vec::with_capacity(m);
    for p in 0..m {
        sub.push(ai.sub()[p] * s[p] / cg[p + 1]);
        sup.push(ai.sup()[p] * s[p + 1] / cg[p]);
    }
    let k = TriDiagonal::new(sub, diag, sup);
    let base = |rhs: &[T]| -> Result<Vec<T>, Error> {
        let u: Vec<T> = rhs.iter().zip(&cg).map(|(&g, &ci)| g / ci).collect();
        let v = ai.apply(&u);
        let w: Vec<T> = v.iter().zip(&cg).map(|(&vi, &ci)| vi / ci).collect();
        k.solve(&w)
    };
    sherman_morrison_solve(base, &h.d_rank1, &h.d_rank1, h.gamma, grad)
}

/// Solves the Gauss-Newton system `(D(c)A_rD(c) + gamma d d^T) d = grad`
/// in O(n).
pub fn gn_direction<T: Real>(h: &StructuredHessian<T>, grad: &[T]) -> Result<Vec<T>, Error> {
    let n = h.n();
    if grad.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: grad.len(),
        });
    }
    let Some(cg) = guarded_weights(&h.c) else {
        return Ok(vec![T::zero(); n]);
    };
    let ai = &h.ar_inv;
    let base = |rhs: &[T]| -> Result<Vec<T>, Error> {
        let u: Vec<T> = rhs.iter().zip(&cg).map(|(&g, &ci)| g / ci).collect();
        let v = ai.apply(&u);
        Ok(v.iter().zip(&cg).map(|(&vi, &ci)| vi / ci).collect())
    };
    sherman_morrison_solve(base, &h.d_rank1, &h.d_rank1, h.gamma, grad)
}

/// Result of one backtracking line search along `-direction`.
#[derive(Debug, Clone)]
pub struct DampedStep<T> {
    pub eta: T,
    pub net: ShallowReluNet<T>,
    pub loss_after: T,
}

/// Backtracks eta over {1, 1/2, 1/4, ...} until the projected breakpoint
/// step, with the linear weights re-solved for the trial partition, both
/// satisfies the Armijo decrease test and does not increase the loss.
/// Returns eta = 0 with the unchanged state when every trial fails.
///
/// Each trial is judged after the weight re-solve because the iteration is
/// a block sweep: the loss that matters is the one the next weight solve
/// will produce. Judging at the stale weights rejects every step that must
/// cross a region where the old weights fit poorly, and the iteration then
/// stalls far from the attainable loss. The Armijo slope `g . d` is still
/// correct for the re-solved loss: the solved weights are a stationary
/// point of the loss in the weight block, so by the envelope theorem the
/// composite has the same directional derivative in the breakpoints.
///
/// The network is invariant under joint permutations of breakpoints and
/// their weights, so a trial that makes breakpoints cross is re-sorted
/// before projection rather than clamped into collapsed stacks. A trial
/// whose weight solve fails is treated as rejected and eta shrinks.
pub fn damped_update<T: Real>(
    prob: &Problem<T>,
    net: &ShallowReluNet<T>,
    grad: &[T],
    direction: &[T],
    damping: &DampingConfig<T>,
    rule: &QuadratureRule<T>,
) -> Result<DampedStep<T>, Error> {
    let loss0 = prob.loss(net, rule);
    let slope = dot(grad, direction);
    let b = net.partition().breakpoints();
    let mut eta = damping.init_step;
    let mut raw = vec![T::zero(); b.len()];
    for _ in 0..damping.max_backtracks {
        for (r, (&bi, &di)) in raw.iter_mut().zip(b.iter().zip(direction)) {
            *r = bi - eta * di;
        }
        raw.sort_by(|p, q| p.partial_cmp(q).expect("breakpoint trial must be finite"));
        let candidate = net.partition().project_step(&raw)?;
        if let Ok(c_new) = prob.solve_linear(&candidate, rule) {
            let c0 = prob.fixed_c0(&candidate);
            let trial = ShallowReluNet::new(c0, c_new, candidate)?;
            let loss = prob.loss(&trial, rule);
            if loss <= loss0 - damping.armijo_c * eta * slope && loss <= loss0 {
                return Ok(DampedStep {
                    eta,
                    net: trial,
                    loss_after: loss,
                });
            }
        }
        eta = eta * damping.shrink;
    }
    Ok(DampedStep {
        eta: T::zero(),
        net: net.clone(),
        loss_after: loss0,
    })
}

/// Solves the linear block and installs the new coefficients only when they
/// do not increase the loss; rounding near a minimizer can otherwise break
/// monotonicity. Returns the loss of whichever state was kept.
pub fn solve_coefficients_monotone<T: Real>(
    prob: &Problem<T>,
    net: &mut ShallowReluNet<T>,
    rule: &QuadratureRule<T>,
    prev_loss: Option<T>,
) -> Result<T, Error> {
    let c = prob.solve_linear(net.partition(), rule)?;
    let c0 = prob.fixed_c0(net.partition());
    match prev_loss {
        None => {
            net.set_c0(c0);
            net.set_coefficients(c)?;
            Ok(prob.loss(net, rule))
        }
        Some(old) => {
            let mut trial = net.clone();
            trial.set_c0(c0);
            trial.set_coefficients(c)?;
            let loss = prob.loss(&trial, rule);
            if loss <= old {
                *net = trial;
                Ok(loss)
            } else {
                Ok(old)
            }
        }
    }
}

/// Outcome of a single damped block iteration.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome<T> {
    pub eta: T,
    pub grad_norm: T,
    pub loss: T,
    pub used_fallback: bool,
}

/// One block iteration: breakpoint gradient, structured direction solve
/// (with Gauss-Newton fallback under the Newton method), then a damped
/// update whose accepted trial already carries re-solved weights. Errors
/// indicate a structured solve that failed under both directions.
pub fn block_step<T: Real>(
    prob: &Problem<T>,
    net: &mut ShallowReluNet<T>,
    loss: &mut T,
    method: Method,
    damping: &DampingConfig<T>,
    rule: &QuadratureRule<T>,
) -> Result<StepOutcome<T>, Error> {
    let grad = prob.grad_b(net, rule);
    let grad_norm = norm2(&grad);
    let mut used_fallback = false;
    let direction = match method {
        Method::DampedBlockNewton => {
            let newton = prob
                .hessian(net, rule)
                .and_then(|h| newton_direction(&h, &grad));
            match newton {
                Ok(d) => d,
                Err(_) => {
                    used_fallback = true;
                    let g = prob.gauss_newton(net, rule)?;
                    gn_direction(&g, &grad)?
                }
            }
        }
        Method::DampedBlockGaussNewton => {
            let g = prob.gauss_newton(net, rule)?;
            gn_direction(&g, &grad)?
        }
    };
    let mut step = damped_update(prob, net, &grad, &direction, damping, rule)?;
    if step.eta == T::zero() && method == Method::DampedBlockNewton && !used_fallback {
        // A Newton direction that admits no decrease is retried once with
        // the positive-definite surrogate before declaring a stall.
        used_fallback = true;
        let g = prob.gauss_newton(net, rule)?;
        let d = gn_direction(&g, &grad)?;
        step = damped_update(prob, net, &grad, &d, damping, rule)?;
    }
    if step.eta != T::zero() {
        *net = step.net;
        *loss = step.loss_after;
    }
    Ok(StepOutcome {
        eta: step.eta,
        grad_norm,
        loss: *loss,
        used_fallback,
    })
}

/// Re-projects the breakpoints onto progressively coarser minimum gaps until
/// the linear block solves again. Returns the new loss, or the last error
/// when every retry stayed singular.
fn recover_structured<T: Real>(
    prob: &Problem<T>,
    net: &mut ShallowReluNet<T>,
    rule: &QuadratureRule<T>,
    last: Error,
) -> Result<T, Error> {
    let mut err = last;
    let two = real::<T>(2.0);
    let mut gap = net.partition().min_gap();
    for _ in 0..STRUCTURED_RETRIES {
        gap = gap * two;
        let widened = match net.partition().with_min_gap(gap) {
            Ok(p) => p,
            Err(e) => return Err(e),
        };
        let trial = net.with_partition(widened)?;
        *net = trial;
        match solve_coefficients_monotone(prob, net, rule, None) {
            Ok(loss) => return Ok(loss),
            Err(e) => err = e,
        }
    }
    Err(err)
}

/// Runs the damped block iteration from `net0`. Row 0 of the trace holds the
/// state after the initial coefficient solve; every later row has its
/// coefficients re-solved for the recorded breakpoints, so the loss column
/// is exactly non-increasing.
pub fn run<T: Real>(
    prob: &Problem<T>,
    net0: ShallowReluNet<T>,
    cfg: &SolverConfig<T>,
    rule: &QuadratureRule<T>,
    err_metric: Option<ErrMetric<'_, T>>,
) -> Result<SolverRun<T>, Error> {
    let start = Instant::now();
    let mut net = net0;
    if let Some(gap) = cfg.min_gap {
        let p = net.partition().with_min_gap(gap)?;
        net = net.with_partition(p)?;
    }
    let mut trace = IterTrace::new();
    let measure = |net: &ShallowReluNet<T>| err_metric.map(|m| m(net));

    let mut loss = match solve_coefficients_monotone(prob, &mut net, rule, None) {
        Ok(l) => l,
        Err(e) => match recover_structured(prob, &mut net, rule, e) {
            Ok(l) => l,
            Err(_) => {
                let final_rel_err = measure(&net);
                let final_loss = prob.loss(&net, rule);
                return Ok(SolverRun {
                    net,
                    trace,
                    termination: Termination::StructuredFailure,
                    final_loss,
                    final_rel_err,
                });
            }
        },
    };

    let grad0 = prob.grad_b(&net, rule);
    let grad_norm0 = norm2(&grad0);
    trace.records.push(IterRecord {
        iter: 0,
        loss,
        rel_err: measure(&net),
        grad_norm: grad_norm0,
        eta: T::zero(),
        n: net.n(),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    });

    let mut termination = Termination::MaxIters;
    if cfg.grad_tol > T::zero() && grad_norm0 <= cfg.grad_tol {
        termination = Termination::GradTol;
    } else {
        for iter in 1..=cfg.max_iters {
            let outcome =
                match block_step(prob, &mut net, &mut loss, cfg.method, &cfg.damping, rule) {
                    Ok(o) => o,
                    Err(e) => match recover_structured(prob, &mut net, rule, e) {
                        Ok(l) => {
                            loss = l;
                            continue;
                        }
                        Err(_) => {
                            termination = Termination::StructuredFailure;
                            break;
                        }
                    },
                };
            trace.records.push(IterRecord {
                iter,
                loss,
                rel_err: measure(&net),
                grad_norm: outcome.grad_norm,
                eta: outcome.eta,
                n: net.n(),
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
            if outcome.eta == T::zero() {
                termination = Termination::Stalled;
                break;
            }
            if cfg.grad_tol > T::zero() && outcome.grad_norm <= cfg.grad_tol {
                termination = Termination::GradTol;
                break;
            }
        }
    }

    let final_rel_err = measure(&net);
    Ok(SolverRun {
        final_loss: loss,
        final_rel_err,
        net,
        trace,
        termination,
    })
}

/// Damped block Newton from `net0`.
pub fn run_dbn<T: Real>(
    prob: &Problem<T>,
    net0: ShallowReluNet<T>,
    cfg: &SolverConfig<T>,
    rule: &QuadratureRule<T>,
    err_metric: Option<ErrMetric<'_, T>>,
) -> Result<SolverRun<T>, Error> {
    let cfg = SolverConfig {
        method: Method::DampedBlockNewton,
        ..*cfg
    };
    run(prob, net0, &cfg, rule, err_metric)
}

/// Damped block Gauss-Newton from `net0`.
pub fn run_dbgn<T: Real>(
    prob: &Problem<T>,
    net0: ShallowReluNet<T>,
    cfg: &SolverConfig<T>,
    rule: &QuadratureRule<T>,
    err_metric: Option<ErrMetric<'_, T>>,
) -> Result<SolverRun<T>, Error> {
    let cfg = SolverConfig {
        method: Method::DampedBlockGaussNewton,
        ..*cfg
    };
    run(prob, net0, &cfg, rule, err_metric)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DrProblem, LsProblem};
    use crate::partition::Partition;
    use crate::quadrature::ScalarField;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rule() -> QuadratureRule<f64> {
        QuadratureRule::gauss_legendre(5).unwrap()
    }

    fn random_hessian(n: usize, rng: &mut StdRng, gamma: f64) -> StructuredHessian<f64> {
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let p = Partition::project_ordered(&b, 0.0, 1.0, 1e-3).unwrap();
        let ab =
            crate::assembly::stiffness_alphabeta(|x: f64| 1.0 + 0.5 * (3.0 * x).sin(), &p, &rule())
                .unwrap();
        let ar_inv = ab.inverse();
        let c: Vec<f64> = (0..n)
            .map(|_| {
                let v: f64 = rng.gen_range(0.2..1.5);
                if rng.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect();
        let diag_part: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d_rank1 = c.clone();
        StructuredHessian {
            diag_part,
            c,
            ar_inv,
            gamma,
            d_rank1,
        }
    }

    #[test]
    fn newton_direction_matches_dense_solve() {
        let mut rng = StdRng::seed_from_u64(7);
        for &n in &[2usize, 5, 12, 32] {
            for &gamma in &[0.0, 1e2] {
                let h = random_hessian(n, &mut rng, gamma);
                let grad: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let fast = newton_direction(&h, &grad).unwrap();
                let dense = h.to_dense().unwrap();
                let slow = dense.solve(&grad).unwrap();
                let scale = slow.iter().fold(1.0f64, |a, &v| a.max(v.abs()));
                for i in 0..n {
                    assert!(
                        (fast[i] - slow[i]).abs() <= 1e-10 * scale,
                        "n={n} gamma={gamma} i={i}: {} vs {}",
                        fast[i],
                        slow[i]
                    );
                }
            }
        }
    }

    #[test]
    fn gn_direction_matches_dense_solve() {
        // Moderate penalties keep the dense reference solve itself accurate
        // enough to serve as a 1e-10 oracle; huge gamma only degrades the
        // reference, not the structured path.
        let mut rng = StdRng::seed_from_u64(11);
        for &n in &[2usize, 6, 17, 32] {
            for &gamma in &[0.0, 10.0] {
                let mut h = random_hessian(n, &mut rng, gamma);
                h.diag_part = vec![0.0; n];
                let grad: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let fast = gn_direction(&h, &grad).unwrap();
                let dense = h.to_dense().unwrap();
                let slow = dense.solve(&grad).unwrap();
                let scale = slow.iter().fold(1.0f64, |a, &v| a.max(v.abs()));
                for i in 0..n {
                    assert!(
                        (fast[i] - slow[i]).abs() <= 1e-10 * scale,
                        "n={n} gamma={gamma} i={i}"
                    );
                }
            }
        }
    }

    #[test]
    fn newton_direction_survives_zero_coefficient() {
        let mut rng = StdRng::seed_from_u64(13);
        let mut h = random_hessian(8, &mut rng, 0.0);
        h.c[3] = 0.0;
        h.d_rank1 = h.c.clone();
        let grad: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d = newton_direction(&h, &grad).unwrap();
        assert!(d.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn newton_direction_zero_coefficients_gives_zero_step() {
        let mut rng = StdRng::seed_from_u64(17);
        let mut h = random_hessian(5, &mut rng, 0.0);
        h.c = vec![0.0; 5];
        h.d_rank1 = h.c.clone();
        let d = newton_direction(&h, &[1.0, -2.0, 3.0, 0.5, -0.25]).unwrap();
        assert_eq!(d, vec![0.0; 5]);
    }

    #[test]
    fn gn_direction_is_descent_for_random_gradients() {
        let mut rng = StdRng::seed_from_u64(19);
        for _ in 0..100 {
            let n = rng.gen_range(2..20);
            let mut h = random_hessian(n, &mut rng, 1e2);
            h.diag_part = vec![0.0; n];
            let grad: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if norm2(&grad) == 0.0 {
                continue;
            }
            let d = gn_direction(&h, &grad).unwrap();
            // Gauss-Newton matrix is SPD, so grad^T H^{-1} grad > 0.
            assert!(dot(&grad, &d) > 0.0, "n={n}");
        }
    }

    fn sqrt_ls_problem() -> Problem<f64> {
        let f = ScalarField::new(|x: f64| x.sqrt());
        let r = ScalarField::constant(1.0);
        Problem::LeastSquares(LsProblem::new(f, r))
    }

    #[test]
    fn damped_update_accepts_full_step_near_quadratic() {
        // Far from optimal breakpoints but smooth loss: the first trials
        // must find some eta > 0.
        let prob = sqrt_ls_problem();
        let p = Partition::uniform(6, 0.0, 1.0).unwrap();
        let mut net = ShallowReluNet::zero_uniform(6, 0.0, 1.0).unwrap();
        net = net.with_partition(p).unwrap();
        let mut loss = solve_coefficients_monotone(&prob, &mut net, &rule(), None).unwrap();
        let before = loss;
        let out = block_step(
            &prob,
            &mut net,
            &mut loss,
            Method::DampedBlockNewton,
            &DampingConfig::default(),
            &rule(),
        )
        .unwrap();
        assert!(out.eta > 0.0);
        assert!(loss < before);
    }

    #[test]
    fn damped_update_rejects_ascent_direction() {
        let prob = sqrt_ls_problem();
        let mut net = ShallowReluNet::zero_uniform(5, 0.0, 1.0).unwrap();
        solve_coefficients_monotone(&prob, &mut net, &rule(), None).unwrap();
        let grad = prob.grad_b(&net, &rule());
        // Stepping along +grad (so b - eta*(-grad) moves uphill) must fail
        // the Armijo test at every eta.
        let uphill: Vec<f64> = grad.iter().map(|&g| -g).collect();
        let step = damped_update(
            &prob,
            &net,
            &grad,
            &uphill,
            &DampingConfig::default(),
            &rule(),
        )
        .unwrap();
        assert_eq!(step.eta, 0.0);
        assert_eq!(step.net.partition().breakpoints(), net.partition().breakpoints());
    }

    #[test]
    fn run_dbn_loss_is_monotone_and_decreases() {
        let prob = sqrt_ls_problem();
        let net0 = ShallowReluNet::zero_uniform(12, 0.0, 1.0).unwrap();
        let cfg = SolverConfig {
            max_iters: 60,
            ..SolverConfig::default()
        };
        let run = run_dbn(&prob, net0, &cfg, &rule(), None).unwrap();
        assert!(run.trace.loss_is_monotone());
        let first = run.trace.records.first().unwrap().loss;
        assert!(run.final_loss < 0.2 * first);
        assert_eq!(
            run.final_loss,
            run.trace.records.last().unwrap().loss
        );
    }

    #[test]
    fn run_dbgn_loss_is_monotone() {
        let prob = sqrt_ls_problem();
        let net0 = ShallowReluNet::zero_uniform(10, 0.0, 1.0).unwrap();
        let cfg = SolverConfig {
            method: Method::DampedBlockGaussNewton,
            max_iters: 40,
            ..SolverConfig::default()
        };
        let run = super::run(&prob, net0, &cfg, &rule(), None).unwrap();
        assert!(run.trace.loss_is_monotone());
        assert!(run.trace.records.len() >= 2);
    }

    #[test]
    fn run_reports_gradient_termination() {
        let prob = sqrt_ls_problem();
        let net0 = ShallowReluNet::zero_uniform(4, 0.0, 1.0).unwrap();
        let cfg = SolverConfig {
            max_iters: 5000,
            grad_tol: 1e-10,
            ..SolverConfig::default()
        };
        let run = run_dbn(&prob, net0, &cfg, &rule(), None).unwrap();
        assert!(matches!(
            run.termination,
            Termination::GradTol | Termination::Stalled
        ));
    }

    #[test]
    fn degenerate_weight_reports_structured_failure() {
        // Weight vanishing on the right half kills the tail masses, so the
        // tridiagonal middle factor is singular at every re-projection.
        let f = ScalarField::new(|x: f64| x);
        let r = ScalarField::new(|x: f64| if x < 0.4 { 0.4 - x } else { 0.0 });
        let prob = Problem::LeastSquares(LsProblem::new(f, r));
        let net0 = ShallowReluNet::zero_uniform(6, 0.0, 1.0).unwrap();
        let run = run_dbn(&prob, net0, &SolverConfig::default(), &rule(), None).unwrap();
        assert_eq!(run.termination, Termination::StructuredFailure);
    }

    #[test]
    fn err_metric_lands_in_trace() {
        let prob = sqrt_ls_problem();
        let net0 = ShallowReluNet::zero_uniform(6, 0.0, 1.0).unwrap();
        let cfg = SolverConfig {
            max_iters: 3,
            ..SolverConfig::default()
        };
        let metric = |net: &ShallowReluNet<f64>| net.n() as f64;
        let run = run_dbn(&prob, net0, &cfg, &rule(), Some(&metric)).unwrap();
        assert!(run
            .trace
            .records
            .iter()
            .all(|r| r.rel_err == Some(6.0)));
        assert_eq!(run.final_rel_err, Some(6.0));
    }

    #[test]
    fn ls_sqrt_n24_reaches_deep_loss() {
        // Left-anchored start so the first breakpoint can slide toward the
        // root singularity.
        let prob = sqrt_ls_problem();
        let n = 24;
        let raw: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let p = Partition::project_ordered(&raw, 0.0, 1.0, 1e-8).unwrap();
        let net0 = ShallowReluNet::new(0.0, vec![0.0; n], p).unwrap();
        let cfg = SolverConfig {
            max_iters: 1000,
            ..SolverConfig::default()
        };
        let run = run_dbn(&prob, net0, &cfg, &rule(), None).unwrap();
        assert!(run.trace.loss_is_monotone());
        assert!(
            run.final_loss <= 1e-6,
            "final loss {:.3e}",
            run.final_loss
        );
    }

    fn exp_bump_problem() -> (Problem<f64>, ScalarField<f64>) {
        let u = |x: f64| x * ((-(x - 1.0 / 3.0).powi(2) / 0.01).exp() - (-4.0_f64 / 0.09).exp());
        let du = |x: f64| {
            ((-(x - 1.0 / 3.0).powi(2) / 0.01).exp() - (-4.0_f64 / 0.09).exp())
                + x * (-(x - 1.0 / 3.0).powi(2) / 0.01).exp() * (-2.0 * (x - 1.0 / 3.0) / 0.01)
        };
        let ddu = |x: f64| {
            let g = |x: f64| (-(x - 1.0 / 3.0).powi(2) / 0.01).exp();
            let gp = |x: f64| g(x) * (-2.0 * (x - 1.0 / 3.0) / 0.01);
            let gpp = |x: f64| {
                g(x) * ((-2.0 * (x - 1.0 / 3.0) / 0.01).powi(2) - 2.0 / 0.01)
            };
            2.0 * gp(x) + x * gpp(x)
        };
        let f = move |x: f64| -ddu(x) + u(x);
        let a = ScalarField::constant(1.0);
        let r = ScalarField::constant(1.0);
        let ff = ScalarField::new(f);
        let dr = DrProblem::new(a, r, ff, 0.0, u(1.0), 1e4, 0.0, 1.0)
            .unwrap()
            .with_features(vec![1.0 / 3.0]);
        (Problem::DiffusionReaction(dr), ScalarField::new(du))
    }

    #[test]
    fn dr_exp_bump_error_drops_under_dbn() {
        let (prob, du) = exp_bump_problem();
        let n = 22;
        let net0 = ShallowReluNet::zero_uniform(n, 0.0, 1.0).unwrap();
        let q = rule();
        let metric = {
            let du = du.clone();
            move |net: &ShallowReluNet<f64>| {
                crate::models::h1_rel_error(net, &du, &[1.0 / 3.0], &rule()).unwrap()
            }
        };
        let cfg = SolverConfig {
            max_iters: 120,
            ..SolverConfig::default()
        };
        let run = run_dbn(&prob, net0, &cfg, &q, Some(&metric)).unwrap();
        assert!(run.trace.loss_is_monotone());
        let first = run.trace.records.first().unwrap().rel_err.unwrap();
        let last = run.final_rel_err.unwrap();
        assert!(last < 0.6 * first, "initial {first:.3} final {last:.3}");
    }
}
