//! Recovery-based local error indicators, average marking, and the adaptive
//! outer loop that grows the network where the current fit is poor.
//!
//! The indicator compares the broken flux of the piecewise-linear network
//! against its continuous nodal recovery and adds an interior-residual term.
//! Marked subintervals receive a midpoint breakpoint with weight zero, which
//! leaves the represented function unchanged, so a refinement followed by a
//! linear solve can never increase the loss.

use std::time::Instant;

use crate::error::Error;
use crate::models::Problem;
use crate::net::ShallowReluNet;
use crate::quadrature::QuadratureRule;
use crate::scalar::{norm2, real, Real};
use crate::solvers::{
    block_step, solve_coefficients_monotone, ErrMetric, IterRecord, IterTrace, RefineRecord,
    SolverConfig, SolverRun, Termination,
};

/// Which recovered quantity the interior-residual term differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndicatorForm {
    /// Differentiate the recovery of `a(x)^2 u_n'(x)`.
    SquaredDiffusionFlux,
    /// Differentiate the recovery of `a(x) u_n'(x)`.
    PlainDiffusionFlux,
}

impl Default for IndicatorForm {
    fn default() -> Self {
        IndicatorForm::SquaredDiffusionFlux
    }
}

/// Per-subinterval indicators with their aggregate and its normalization.
#[derive(Debug, Clone)]
pub struct IndicatorReport<T> {
    /// One indicator per subinterval, `xi[k] >= 0` on `[node_k, node_{k+1}]`.
    pub xi: Vec<T>,
    /// `(sum xi_K^2)^{1/2}`.
    pub xi_total: T,
    /// `xi_total` divided by the L2 norm of the recovered flux; infinite
    /// when that norm vanishes.
    pub rel_estimator: T,
}

/// Nodal values of the continuous piecewise-linear recovery of
/// `coeff(x) * u_n'(x)`: at each interior node the gap-weighted average of
/// the two adjacent broken fluxes, one-sided at the endpoints. Returns one
/// value per node of the partition.
pub fn recover_flux<T: Real>(net: &ShallowReluNet<T>, coeff: impl Fn(T) -> T) -> Vec<T> {
    let p = net.partition();
    let nodes = p.nodes();
    let gaps = p.gaps();
    let slopes = net.slopes();
    let m = gaps.len();
    let half = real::<T>(0.5);
    let q: Vec<T> = (0..m)
        .map(|k| coeff((nodes[k] + nodes[k + 1]) * half) * slopes[k])
        .collect();
    let mut g = Vec::with_capacity(m + 1);
    g.push(q[0]);
    for j in 1..m {
        g.push((gaps[j - 1] * q[j] + gaps[j] * q[j - 1]) / (gaps[j - 1] + gaps[j]));
    }
    g.push(q[m - 1]);
    g
}

/// Evaluates the local indicators
/// `xi_K^2 = ||a^{-1/2}(G(a u_n') - a u_n')||^2_K + |K|^2 ||-G'(.) + r u_n - f||^2_K`
/// on every subinterval, where `G'(.)` is the broken derivative of the
/// recovered quantity selected by `form`. For a least-squares problem there
/// is no flux: the first term recovers `u_n'` directly and the residual term
/// is `r (u_n - f)`.
pub fn local_indicators<T: Real>(
    net: &ShallowReluNet<T>,
    prob: &Problem<T>,
    rule: &QuadratureRule<T>,
    form: IndicatorForm,
) -> IndicatorReport<T> {
    let p = net.partition();
    let nodes = p.nodes();
    let gaps = p.gaps();
    let slopes = net.slopes();
    let evaluator = net.evaluator();
    let m = gaps.len();

    let (afield, rfield, ffield, cuts, is_ls) = match prob {
        Problem::LeastSquares(ls) => (None, &ls.r, &ls.f, ls.features.as_slice(), true),
        Problem::DiffusionReaction(dr) => {
            (Some(&dr.a), &dr.r, &dr.f, dr.features.as_slice(), false)
        }
    };
    let a = |x: T| match afield {
        Some(af) => af.eval(x),
        None => T::one(),
    };

    let g1 = recover_flux(net, a);
    let g2 = match form {
        IndicatorForm::SquaredDiffusionFlux => recover_flux(net, |x| {
            let v = a(x);
            v * v
        }),
        IndicatorForm::PlainDiffusionFlux => g1.clone(),
    };

    let mut xi = Vec::with_capacity(m);
    let mut total_sq = T::zero();
    let mut flux_sq = T::zero();
    for k in 0..m {
        let (lo, hi) = (nodes[k], nodes[k + 1]);
        let h = gaps[k];
        let g1_lo = g1[k];
        let g1_slope = (g1[k + 1] - g1[k]) / h;
        let lin = |x: T| g1_lo + g1_slope * (x - lo);
        let t1 = rule.integrate_with_cuts(
            |x| {
                let d = lin(x) - a(x) * slopes[k];
                d * d / a(x)
            },
            lo,
            hi,
            cuts,
            1,
        );
        let dg2 = (g2[k + 1] - g2[k]) / h;
        let t2 = rule.integrate_with_cuts(
            |x| {
                let res = if is_ls {
                    rfield.eval(x) * (evaluator.eval(x) - ffield.eval(x))
                } else {
                    rfield.eval(x) * evaluator.eval(x) - ffield.eval(x) - dg2
                };
                res * res
            },
            lo,
            hi,
            cuts,
            1,
        );
        let sq = t1 + h * h * t2;
        total_sq += sq;
        xi.push(sq.max(T::zero()).sqrt());
        flux_sq += rule.integrate(|x| lin(x) * lin(x), lo, hi);
    }
    let xi_total = total_sq.max(T::zero()).sqrt();
    let flux_norm = flux_sq.max(T::zero()).sqrt();
    let rel_estimator = if flux_norm > T::zero() {
        xi_total / flux_norm
    } else {
        T::infinity()
    };
    IndicatorReport {
        xi,
        xi_total,
        rel_estimator,
    }
}

/// Marks every subinterval whose indicator reaches the mean indicator.
/// Always returns at least one index (the largest indicator as fallback).
pub fn mark_average<T: Real>(report: &IndicatorReport<T>) -> Vec<usize> {
    let m = report.xi.len();
    if m == 0 {
        return Vec::new();
    }
    let mut sum = T::zero();
    for &v in &report.xi {
        sum += v;
    }
    let mean = sum / real::<T>(m as f64);
    let mut marked: Vec<usize> = (0..m).filter(|&k| report.xi[k] >= mean).collect();
    if marked.is_empty() {
        let mut best = 0;
        for k in 1..m {
            if report.xi[k] > report.xi[best] {
                best = k;
            }
        }
        marked.push(best);
    }
    marked
}

/// Inserts the midpoint of each marked subinterval as a new breakpoint with
/// weight zero, so the represented function is unchanged. Midpoints that
/// collide with the minimum gap are skipped. Returns the refined network
/// and how many breakpoints were actually added.
pub fn refine<T: Real>(
    net: &ShallowReluNet<T>,
    marked: &[usize],
) -> Result<(ShallowReluNet<T>, usize), Error> {
    if marked.is_empty() {
        return Err(Error::EmptyMarking);
    }
    let p = net.partition();
    let half = real::<T>(0.5);
    let mids: Vec<T> = marked
        .iter()
        .map(|&k| {
            let (lo, hi) = p.subinterval(k);
            (lo + hi) * half
        })
        .collect();
    let (refined, inserted) = p.insert_points(&mids)?;
    let mut c_new = vec![T::zero(); refined.n()];
    let mut is_new = vec![false; refined.n()];
    for &idx in &inserted {
        is_new[idx] = true;
    }
    let mut old = net.coefficients().iter();
    for (slot, &fresh) in c_new.iter_mut().zip(&is_new) {
        if !fresh {
            *slot = *old.next().expect("old coefficients exhausted");
        }
    }
    let added = inserted.len();
    Ok((ShallowReluNet::new(net.c0(), c_new, refined)?, added))
}

/// Configuration of the adaptive loop.
#[derive(Debug, Clone)]
pub struct AdaptConfig<T> {
    /// Inner damped block solver; `max_iters` is the total iteration budget
    /// across all refinement levels.
    pub solver: SolverConfig<T>,
    /// Stop once the relative estimator drops to this value.
    pub eps_stop: T,
    /// Refine when consecutive total estimators differ by less than this.
    pub stagnation_tol: T,
    /// Refine after this many iterations at one size even if the estimator
    /// difference never drops below `stagnation_tol`: the damped iteration
    /// can keep accepting microscopic steps whose estimator drift sits just
    /// above any fixed threshold indefinitely.
    pub max_level_iters: usize,
    /// No further refinement once the network has this many neurons.
    pub max_neurons: usize,
    pub form: IndicatorForm,
}

impl<T: Real> Default for AdaptConfig<T> {
    fn default() -> Self {
        Self {
            solver: SolverConfig {
                max_iters: 4000,
                ..SolverConfig::default()
            },
            eps_stop: real::<T>(0.05),
            stagnation_tol: real::<T>(1e-7),
            max_level_iters: 200,
            max_neurons: 400,
            form: IndicatorForm::default(),
        }
    }
}

/// Adaptive damped block iteration: runs the inner solver, watches the total
/// estimator, and refines whenever it stagnates between consecutive iterates.
/// Each refinement event records the converged state at the old size. Stops
/// when the relative estimator reaches `eps_stop`, when the budget is spent,
/// or when a stall can no longer be relieved by refinement.
pub fn run_adbn<T: Real>(
    prob: &Problem<T>,
    net0: ShallowReluNet<T>,
    cfg: &AdaptConfig<T>,
    rule: &QuadratureRule<T>,
    err_metric: Option<ErrMetric<'_, T>>,
) -> Result<SolverRun<T>, Error> {
    let start = Instant::now();
    let mut net = net0;
    if let Some(gap) = cfg.solver.min_gap {
        let p = net.partition().with_min_gap(gap)?;
        net = net.with_partition(p)?;
    }
    let mut trace = IterTrace::new();
    let measure = |net: &ShallowReluNet<T>| err_metric.map(|m| m(net));
    let rate_of = |rel_err: Option<T>, n: usize| -> Option<T> {
        let e = rel_err?;
        if e > T::zero() && e < T::one() && n > 1 {
            Some((T::one() / e).ln() / real::<T>(n as f64).ln())
        } else {
            None
        }
    };

    let mut loss = match solve_coefficients_monotone(prob, &mut net, rule, None) {
        Ok(l) => l,
        Err(e) => {
            let _ = e;
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
    };

    let grad0 = prob.grad_b(&net, rule);
    trace.records.push(IterRecord {
        iter: 0,
        loss,
        rel_err: measure(&net),
        grad_norm: norm2(&grad0),
        eta: T::zero(),
        n: net.n(),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    });

    let mut report = local_indicators(&net, prob, rule, cfg.form);
    let mut prev_xi: Option<T> = Some(report.xi_total);
    let mut level_iters = 0usize;
    let mut termination = Termination::MaxIters;

    if report.rel_estimator <= cfg.eps_stop {
        termination = Termination::EstimatorConverged;
    } else {
        for iter in 1..=cfg.solver.max_iters {
            let outcome = match block_step(
                prob,
                &mut net,
                &mut loss,
                cfg.solver.method,
                &cfg.solver.damping,
                rule,
            ) {
                Ok(o) => o,
                Err(_) => {
                    termination = Termination::StructuredFailure;
                    break;
                }
            };
            report = local_indicators(&net, prob, rule, cfg.form);
            trace.records.push(IterRecord {
                iter,
                loss,
                rel_err: measure(&net),
                grad_norm: outcome.grad_norm,
                eta: outcome.eta,
                n: net.n(),
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
            if report.rel_estimator <= cfg.eps_stop {
                termination = Termination::EstimatorConverged;
                break;
            }
            level_iters += 1;
            let stagnated = match prev_xi {
                Some(prev) => (report.xi_total - prev).abs() < cfg.stagnation_tol,
                None => false,
            } || level_iters >= cfg.max_level_iters;
            prev_xi = Some(report.xi_total);
            if stagnated {
                let rel_err = measure(&net);
                trace.refinements.push(RefineRecord {
                    at_iter: iter,
                    n: net.n(),
                    rel_err,
                    xi_rel: report.rel_estimator,
                    rate: rate_of(rel_err, net.n()),
                });
                if net.n() >= cfg.max_neurons {
                    termination = Termination::Stalled;
                    break;
                }
                let marked = mark_average(&report);
                let (refined, added) = refine(&net, &marked)?;
                if added == 0 {
                    termination = Termination::Stalled;
                    break;
                }
                net = refined;
                loss = solve_coefficients_monotone(prob, &mut net, rule, Some(loss))?;
                prev_xi = None;
                level_iters = 0;
            } else if outcome.eta == T::zero() {
                // A rejected step leaves the estimator frozen; the next
                // iteration's stagnation check will trigger refinement.
                continue;
            }
        }
    }

    let final_rel_err = measure(&net);
    let last_matches = trace
        .refinements
        .last()
        .map(|r| r.n == net.n() && r.rel_err == final_rel_err)
        .unwrap_or(false);
    if !last_matches {
        let last_iter = trace.records.last().map(|r| r.iter).unwrap_or(0);
        report = local_indicators(&net, prob, rule, cfg.form);
        trace.refinements.push(RefineRecord {
            at_iter: last_iter,
            n: net.n(),
            rel_err: final_rel_err,
            xi_rel: report.rel_estimator,
            rate: rate_of(final_rel_err, net.n()),
        });
    }
    Ok(SolverRun {
        final_loss: loss,
        final_rel_err,
        net,
        trace,
        termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::DrProblem;
    use crate::partition::Partition;
    use crate::quadrature::ScalarField;

    fn rule() -> QuadratureRule<f64> {
        QuadratureRule::gauss_legendre(5).unwrap()
    }

    fn bump_dr() -> Problem<f64> {
        let g = move |x: f64| (-(x - 1.0 / 3.0) * (x - 1.0 / 3.0) / 0.01).exp();
        let gp = move |x: f64| g(x) * (-2.0 * (x - 1.0 / 3.0) / 0.01);
        let gpp = move |x: f64| {
            g(x) * ((2.0 * (x - 1.0 / 3.0) / 0.01) * (2.0 * (x - 1.0 / 3.0) / 0.01) - 2.0 / 0.01)
        };
        let tail = (-4.0_f64 / 0.09).exp();
        let u = move |x: f64| x * (g(x) - tail);
        let ddu = move |x: f64| 2.0 * gp(x) + x * gpp(x);
        let beta = u(1.0);
        Problem::DiffusionReaction(
            DrProblem::new(
                ScalarField::constant(1.0),
                ScalarField::constant(1.0),
                ScalarField::new(move |x: f64| -ddu(x) + u(x)),
                0.0,
                beta,
                1e4,
                0.0,
                1.0,
            )
            .unwrap()
            .with_features(vec![1.0 / 3.0]),
        )
    }

    fn bump_h1_metric() -> impl Fn(&ShallowReluNet<f64>) -> f64 {
        let g = move |x: f64| (-(x - 1.0 / 3.0) * (x - 1.0 / 3.0) / 0.01).exp();
        let gp = move |x: f64| g(x) * (-2.0 * (x - 1.0 / 3.0) / 0.01);
        let tail = (-4.0_f64 / 0.09).exp();
        let du = ScalarField::new(move |x: f64| (g(x) - tail) + x * gp(x));
        move |net: &ShallowReluNet<f64>| {
            crate::models::h1_rel_error(net, &du, &[1.0 / 3.0], &rule()).unwrap()
        }
    }

    #[test]
    fn linear_net_constant_coefficient_recovers_exact_flux() {
        // One active slope everywhere right of a kink at the left edge
        // would not be globally linear; use zero weights so u_n is affine.
        let p = Partition::uniform(4, 0.0, 1.0).unwrap();
        let net = ShallowReluNet::new(2.0, vec![0.0; 4], p).unwrap();
        let g = recover_flux(&net, |_| 3.0);
        for v in g {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn two_interval_average_is_halfway() {
        let p: Partition<f64> = Partition::project_ordered(&[0.5], 0.0, 1.0, 1e-8).unwrap();
        // slope 0 on the left interval, 1 on the right.
        let net = ShallowReluNet::new(0.0, vec![1.0], p).unwrap();
        let g = recover_flux(&net, |_| 1.0);
        assert_eq!(g.len(), 3);
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 0.5).abs() < 1e-15);
        assert_eq!(g[2], 1.0);
    }

    #[test]
    fn representable_solution_has_zero_indicators() {
        // u_n linear with a = 1: recovery is exact and, with f = r u_n,
        // the residual vanishes, so every indicator is zero.
        let p = Partition::uniform(3, 0.0, 1.0).unwrap();
        let net = ShallowReluNet::new(1.0, vec![0.0; 3], p).unwrap();
        let prob = Problem::DiffusionReaction(
            DrProblem::new(
                ScalarField::constant(1.0),
                ScalarField::constant(1.0),
                ScalarField::constant(1.0),
                0.0,
                1.0,
                1e4,
                0.0,
                1.0,
            )
            .unwrap(),
        );
        let rep = local_indicators(&net, &prob, &rule(), IndicatorForm::SquaredDiffusionFlux);
        for &x in &rep.xi {
            assert!(x < 1e-13, "xi = {x}");
        }
    }

    #[test]
    fn xi_total_is_root_sum_of_squares() {
        let prob = bump_dr();
        let p = Partition::uniform(9, 0.0, 1.0).unwrap();
        let mut net = ShallowReluNet::new(0.0, vec![0.0; 9], p).unwrap();
        solve_coefficients_monotone(&prob, &mut net, &rule(), None).unwrap();
        let rep = local_indicators(&net, &prob, &rule(), IndicatorForm::SquaredDiffusionFlux);
        let sum: f64 = rep.xi.iter().map(|x| x * x).sum();
        assert!((rep.xi_total * rep.xi_total - sum).abs() <= 1e-12 * sum.max(1e-300));
        assert!(rep.xi.iter().all(|&x| x >= 0.0));
        assert!(rep.rel_estimator.is_finite());
    }

    #[test]
    fn heavier_load_on_one_subinterval_raises_its_indicator() {
        let p = Partition::uniform(4, 0.0, 1.0).unwrap();
        let mut net = ShallowReluNet::new(0.0, vec![0.0; 4], p).unwrap();
        let base = Problem::DiffusionReaction(
            DrProblem::new(
                ScalarField::constant(1.0),
                ScalarField::constant(1.0),
                ScalarField::new(|x: f64| (3.0 * x).sin() + 2.0),
                0.0,
                0.5,
                1e4,
                0.0,
                1.0,
            )
            .unwrap(),
        );
        solve_coefficients_monotone(&base, &mut net, &rule(), None).unwrap();
        let doubled = Problem::DiffusionReaction(
            DrProblem::new(
                ScalarField::constant(1.0),
                ScalarField::constant(1.0),
                ScalarField::new(|x: f64| {
                    let f = (3.0 * x).sin() + 2.0;
                    if (0.4..0.6).contains(&x) {
                        2.0 * f
                    } else {
                        f
                    }
                }),
                0.0,
                0.5,
                1e4,
                0.0,
                1.0,
            )
            .unwrap()
            .with_features(vec![0.4, 0.6]),
        );
        let r1 = local_indicators(&net, &base, &rule(), IndicatorForm::SquaredDiffusionFlux);
        let r2 = local_indicators(&net, &doubled, &rule(), IndicatorForm::SquaredDiffusionFlux);
        // net spans 5 subintervals; [0.4, 0.6] lies inside the middle one.
        assert!(r2.xi[2] > r1.xi[2]);
    }

    #[test]
    fn mark_average_rules() {
        let all_equal = IndicatorReport {
            xi: vec![0.3; 5],
            xi_total: 0.0,
            rel_estimator: 0.0,
        };
        assert_eq!(mark_average(&all_equal), vec![0, 1, 2, 3, 4]);
        let spike = IndicatorReport {
            xi: vec![1.0, 0.0, 0.0, 0.0],
            xi_total: 0.0,
            rel_estimator: 0.0,
        };
        assert_eq!(mark_average(&spike), vec![0]);
    }

    #[test]
    fn refine_preserves_function_and_never_raises_loss() {
        let prob = bump_dr();
        let p = Partition::uniform(6, 0.0, 1.0).unwrap();
        let mut net = ShallowReluNet::new(0.0, vec![0.0; 6], p).unwrap();
        let loss_before = solve_coefficients_monotone(&prob, &mut net, &rule(), None).unwrap();
        let rep = local_indicators(&net, &prob, &rule(), IndicatorForm::SquaredDiffusionFlux);
        let marked = mark_average(&rep);
        let (refined, added) = refine(&net, &marked).unwrap();
        assert!(added > 0);
        assert_eq!(refined.n(), net.n() + added);
        for i in 0..=50 {
            let x = i as f64 / 50.0;
            assert!(
                (refined.eval(x) - net.eval(x)).abs() <= 1e-12,
                "function changed at {x}"
            );
        }
        let mut solved = refined.clone();
        let loss_after = solve_coefficients_monotone(&prob, &mut solved, &rule(), None).unwrap();
        assert!(loss_after <= loss_before + 1e-12 * loss_before.abs().max(1.0));
    }

    #[test]
    fn adaptive_grows_and_beats_its_start() {
        let prob = bump_dr();
        let p = Partition::uniform(8, 0.0, 1.0).unwrap();
        let net0 = ShallowReluNet::new(0.0, vec![0.0; 8], p).unwrap();
        let metric = bump_h1_metric();
        let cfg = AdaptConfig {
            max_neurons: 22,
            ..AdaptConfig::default()
        };
        let out = run_adbn(&prob, net0, &cfg, &rule(), Some(&metric)).unwrap();
        assert!(out.trace.loss_is_monotone());
        assert!(out.net.n() >= 18, "grew only to {}", out.net.n());
        let final_e = out.final_rel_err.unwrap();
        assert!(final_e <= 0.10, "e_n = {final_e}");
        assert!(!out.trace.refinements.is_empty());
        let ns: Vec<usize> = out.trace.refinements.iter().map(|r| r.n).collect();
        assert!(ns.windows(2).all(|w| w[0] <= w[1]), "sizes {ns:?}");
    }
}
