//! The two model problems solved by the block iterations: weighted
//! least-squares fitting of a target function, and the penalized Ritz
//! energy of a 1D diffusion-reaction boundary value problem. Both keep
//! the output bias fixed to the left boundary value, solve the linear
//! weights exactly through the structured factorizations, and expose
//! breakpoint gradient and Hessian in structured (never dense) form.

use crate::assembly::{
    boundary_gradient_vector, rhs_dr_with_form, rhs_ls, stiffness_alphabeta, DrRhsForm,
    FactorizedOperator,
};
use crate::dense::DenseMatrix;
use crate::error::Error;
use crate::linalg::{sherman_morrison_solve, TriDiagonal};
use crate::net::ShallowReluNet;
use crate::partition::Partition;
use crate::quadrature::{QuadratureRule, ScalarField};
use crate::scalar::{norm2, real, Real};

/// Scale cap below which debug builds verify linear-solve residuals
/// against the factorized operator.
const RESIDUAL_CHECK_MAX_N: usize = 512;
// Loose enough for the conditioning of gap-floored trial partitions inside
// the line search; a solve this far off only appears when the system is
// effectively singular, and callers treat it as a rejected trial.
const RESIDUAL_CHECK_TOL: f64 = 1e-6;

/// Weighted least-squares fit of a target `f` with weight `r > 0`:
/// `J(v) = 1/2 integral r (v - f)^2`.
#[derive(Debug, Clone)]
pub struct LsProblem<T> {
    pub f: ScalarField<T>,
    pub r: ScalarField<T>,
    /// Extra quadrature split points for sharp features of `f`.
    pub features: Vec<T>,
}

impl<T: Real> LsProblem<T> {
    pub fn new(f: ScalarField<T>, r: ScalarField<T>) -> Self {
        LsProblem {
            f,
            r,
            features: Vec::new(),
        }
    }

    pub fn with_features(mut self, mut features: Vec<T>) -> Self {
        features.sort_by(|a, b| a.partial_cmp(b).expect("feature points must be finite"));
        self.features = features;
        self
    }

    /// Spot-checks that the weight is strictly positive on the interval.
    pub fn validate(&self, x_lo: T, x_hi: T) -> Result<(), Error> {
        check_positive(&self.r, x_lo, x_hi, T::zero())
    }
}

/// Penalized Ritz energy of `-(a u')' + r u = f` on `(x_lo, x_hi)` with
/// `u(x_lo) = alpha` imposed exactly through the bias and `u(x_hi) = beta`
/// imposed through the penalty `gamma/2 (u(x_hi) - beta)^2`.
#[derive(Debug, Clone)]
pub struct DrProblem<T> {
    pub a: ScalarField<T>,
    pub r: ScalarField<T>,
    pub f: ScalarField<T>,
    pub alpha: T,
    pub beta: T,
    pub gamma: T,
    pub x_lo: T,
    pub x_hi: T,
    /// Extra quadrature split points for sharp features of `f`.
    pub features: Vec<T>,
    pub rhs_form: DrRhsForm,
    /// Step for the finite-difference fallback of `a'`.
    pub fd_step: T,
}

impl<T: Real> DrProblem<T> {
    pub fn new(
        a: ScalarField<T>,
        r: ScalarField<T>,
        f: ScalarField<T>,
        alpha: T,
        beta: T,
        gamma: T,
        x_lo: T,
        x_hi: T,
    ) -> Result<Self, Error> {
        if !(gamma > T::zero()) {
            return Err(Error::NonPositivePenalty {
                gamma: gamma.to_f64().unwrap_or(f64::NAN),
            });
        }
        if !(x_hi > x_lo) {
            return Err(Error::DegenerateInterval {
                x_lo: x_lo.to_f64().unwrap_or(f64::NAN),
                x_hi: x_hi.to_f64().unwrap_or(f64::NAN),
            });
        }
        let fd_step = real::<T>(1e-6) * (x_hi - x_lo);
        Ok(DrProblem {
            a,
            r,
            f,
            alpha,
            beta,
            gamma,
            x_lo,
            x_hi,
            features: Vec::new(),
            rhs_form: DrRhsForm::EnergyConsistent,
            fd_step,
        })
    }

    pub fn with_features(mut self, mut features: Vec<T>) -> Self {
        features.sort_by(|a, b| a.partial_cmp(b).expect("feature points must be finite"));
        self.features = features;
        self
    }

    pub fn with_rhs_form(mut self, form: DrRhsForm) -> Self {
        self.rhs_form = form;
        self
    }

    /// Spot-checks `a > 0` and `r >= 0` on the interval.
    pub fn validate(&self) -> Result<(), Error> {
        check_positive(&self.a, self.x_lo, self.x_hi, T::zero())?;
        check_positive(&self.r, self.x_lo, self.x_hi, -T::epsilon())
    }

    /// Rewrites the problem on the unit interval via `x = x_lo + L t`:
    /// the diffusion coefficient picks up `1/L^2`, reaction and load are
    /// composed with the map, boundary data stay put. The exact solution
    /// of the transformed strong form is the pullback of the original.
    pub fn to_unit(&self) -> (Self, IntervalMap<T>) {
        let map = IntervalMap::new(self.x_lo, self.x_hi);
        if self.x_lo == T::zero() && self.x_hi == T::one() {
            return (self.clone(), map);
        }
        let scale = map.scale();
        let inv_l2 = T::one() / (scale * scale);
        let a_src = self.a.clone();
        let a_val = {
            let a_src = a_src.clone();
            let map = map;
            move |t| a_src.eval(map.from_unit(t)) * inv_l2
        };
        let a_field = if self.a.has_derivative() {
            let a_src = a_src.clone();
            let map = map;
            let fd_step = self.fd_step;
            ScalarField::with_derivative(a_val, move |t| {
                a_src.deriv_or_fd(map.from_unit(t), fd_step) * inv_l2 * scale
            })
        } else {
            ScalarField::new(a_val)
        };
        let r_src = self.r.clone();
        let r_field = ScalarField::new(move |t| r_src.eval(map.from_unit(t)));
        let f_src = self.f.clone();
        let f_field = ScalarField::new(move |t| f_src.eval(map.from_unit(t)));
        let features = self.features.iter().map(|&x| map.to_unit(x)).collect();
        let mapped = DrProblem {
            a: a_field,
            r: r_field,
            f: f_field,
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            x_lo: T::zero(),
            x_hi: T::one(),
            features,
            rhs_form: self.rhs_form,
            fd_step: self.fd_step / scale,
        };
        (mapped, map)
    }
}

fn check_positive<T: Real>(
    field: &ScalarField<T>,
    x_lo: T,
    x_hi: T,
    floor: T,
) -> Result<(), Error> {
    let samples = 53;
    let span = x_hi - x_lo;
    for i in 0..=samples {
        let x = x_lo + span * real::<T>(i as f64 / samples as f64);
        let v = field.eval(x);
        if !(v > floor) {
            return Err(Error::NonPositiveCoefficient {
                x: x.to_f64().unwrap_or(f64::NAN),
                value: v.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    Ok(())
}

/// Affine map between an interval and `(0, 1)`.
#[derive(Debug, Clone, Copy)]
pub struct IntervalMap<T> {
    x_lo: T,
    scale: T,
}

impl<T: Real> IntervalMap<T> {
    pub fn new(x_lo: T, x_hi: T) -> Self {
        IntervalMap {
            x_lo,
            scale: x_hi - x_lo,
        }
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    pub fn from_unit(&self, t: T) -> T {
        self.x_lo + self.scale * t
    }

    pub fn to_unit(&self, x: T) -> T {
        (x - self.x_lo) / self.scale
    }
}

/// Either model problem behind one dispatch surface for the solvers.
#[derive(Debug, Clone)]
pub enum Problem<T> {
    LeastSquares(LsProblem<T>),
    DiffusionReaction(DrProblem<T>),
}

impl<T: Real> Problem<T> {
    /// The fixed output bias: left boundary target value.
    pub fn fixed_c0(&self, p: &Partition<T>) -> T {
        match self {
            Problem::LeastSquares(pr) => pr.f.eval(p.x_lo()),
            Problem::DiffusionReaction(pr) => pr.alpha,
        }
    }

    pub fn loss(&self, net: &ShallowReluNet<T>, rule: &QuadratureRule<T>) -> T {
        match self {
            Problem::LeastSquares(pr) => ls_loss(pr, net, rule),
            Problem::DiffusionReaction(pr) => dr_energy(pr, net, rule),
        }
    }

    pub fn solve_linear(&self, p: &Partition<T>, rule: &QuadratureRule<T>) -> Result<Vec<T>, Error> {
        match self {
            Problem::LeastSquares(pr) => ls_solve_linear(pr, p, rule),
            Problem::DiffusionReaction(pr) => dr_solve_linear(pr, p, rule),
        }
    }

    pub fn grad_b(&self, net: &ShallowReluNet<T>, rule: &QuadratureRule<T>) -> Vec<T> {
        match self {
            Problem::LeastSquares(pr) => ls_grad_b(pr, net, rule),
            Problem::DiffusionReaction(pr) => dr_grad_b(pr, net, rule),
        }
    }

    pub fn hessian(
        &self,
        net: &ShallowReluNet<T>,
        rule: &QuadratureRule<T>,
    ) -> Result<StructuredHessian<T>, Error> {
        match self {
            Problem::LeastSquares(pr) => ls_hessian(pr, net, rule),
            Problem::DiffusionReaction(pr) => dr_hessian(pr, net, rule),
        }
    }

    pub fn gauss_newton(
        &self,
        net: &ShallowReluNet<T>,
        rule: &QuadratureRule<T>,
    ) -> Result<StructuredHessian<T>, Error> {
        gauss_newton_matrix(self, net, rule)
    }
}

/// Breakpoint Hessian in parts: `D(diag_part) D(c) + D(c) A_r D(c)
/// + gamma d d^T`, stored with the tridiagonal inverse of `A_r` so the
/// direction solves stay O(n).
#[derive(Debug, Clone)]
pub struct StructuredHessian<T> {
    pub diag_part: Vec<T>,
    pub c: Vec<T>,
    pub ar_inv: TriDiagonal<T>,
    pub gamma: T,
    pub d_rank1: Vec<T>,
}

impl<T: Real> StructuredHessian<T> {
    pub fn n(&self) -> usize {
        self.c.len()
    }

    /// Dense reconstruction (testing scale): inverts the stored
    /// tridiagonal to recover `A_r`.
    pub fn to_dense(&self) -> Result<DenseMatrix<T>, Error> {
        let n = self.n();
        let ar = DenseMatrix::from_tridiagonal(&self.ar_inv).inverse()?;
        let mut h = DenseMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let mut v = self.c[i] * ar.get(i, j) * self.c[j]
                    + self.gamma * self.d_rank1[i] * self.d_rank1[j];
                if i == j {
                    v += self.diag_part[i] * self.c[i];
                }
                h.set(i, j, v);
            }
        }
        Ok(h)
    }
}

/// Suffix-accumulated integrals of a subinterval-indexed integrand:
/// entry `j` is the integral of `g(k, x)` over `[b_{j+1}, x_hi]` where
/// `k` is the subinterval index of `x`.
fn tails_with<T: Real>(
    p: &Partition<T>,
    rule: &QuadratureRule<T>,
    cuts: &[T],
    g: impl Fn(usize, T) -> T,
) -> Vec<T> {
    let n = p.n();
    let mut pieces = Vec::with_capacity(n);
    for j in 0..n {
        let k = j + 1;
        let (lo, hi) = p.subinterval(k);
        pieces.push(rule.integrate_with_cuts(|x| g(k, x), lo, hi, cuts, 1));
    }
    let mut acc = T::zero();
    for v in pieces.iter_mut().rev() {
        acc += *v;
        *v = acc;
    }
    pieces
}

pub fn ls_loss<T: Real>(
    prob: &LsProblem<T>,
    net: &ShallowReluNet<T>,
    rule: &QuadratureRule<T>,
) -> T {
    let p = net.partition();
    let nodes = p.nodes();
    let vals = net.node_values();
    let slopes = net.slopes();
    let mut acc = T::zero();
    for k in 0..=p.n() {
        let (lo, hi) = p.subinterval(k);
        let (x0, v0, s) = (nodes[k], vals[k], slopes[k]);
        acc += rule.integrate_with_cuts(
            |x| {
                let d = v0 + s * (x - x0) - prob.f.eval(x);
                prob.r.eval(x) * d * d
            },
            lo,
            hi,
            &prob.features,
            1,
        );
    }
    acc * real::<T>(0.5)
}

/// Exact minimizer of the loss over the linear weights at fixed
/// breakpoints: one factorized mass solve.
pub fn ls_solve_linear<T: Real>(
    prob: &LsProblem<T>,
    p: &Partition<T>,
    rule: &QuadratureRule<T>,
) -> Result<Vec<T>, Error> {
    let op = FactorizedOperator::mass(|x| prob.r.eval(x), p, rule);
    let rhs = rhs_ls(
        |x| prob.f.eval(x),
        |x| prob.r.eval(x),
        p,
        rule,
        &prob.features,
    );
    let c = op.apply_inverse(&rhs)?;
    if p.n() <= RESIDUAL_CHECK_MAX_N {
        let back = op.apply(&c);
        let res: Vec<T> = back.iter().zip(&rhs).map(|(&a, &b)| a - b).collect();
        let rel = norm2(&res) / norm2(&rhs).max(T::one());
        if !(rel <= real::<T>(RESIDUAL_CHECK_TOL)) {
            return Err(Error::IllConditionedSolve {
                rel: rel.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    Ok(c)
}

pub fn ls_grad_b<T: Real>(
    prob: &LsProblem<T>,
    net: &ShallowReluNet<T>,
    rule: &QuadratureRule<T>,
) -> Vec<T> {
    let p = net.partition();
    let nodes = p.nodes();
    let vals = net.node_values();
    let slopes = net.slopes();
    let tails = tails_with(p, rule, &prob.features, |k, x| {
        let u = vals[k] + slopes[k] * (x - nodes[k]);
        prob.r.eval(x) * (u - prob.f.eval(x))
    });
    net.coefficients()
        .iter()
        .zip(&tails)
        .map(|(&c, &t)| -c * t)
        .collect()
}

pub fn ls_hessian<T: Real>(
    prob: &LsProblem<T>,
    net: &ShallowReluNet<T>,
    rule: &QuadratureRule<T>,
) -> Result<StructuredHessian<T>, Error> {
    let p = net.partition();
    let vals = net.node_values();
    let b = p.breakpoints();
    let w: Vec<T> = (0..p.n())
        .map(|j| prob.r.eval(b[j]) * (vals[j + 1] - prob.f.eval(b[j])))
        .collect();
    let ar_inv = stiffness_alphabeta(|x| prob.r.eval(x), p, rule)?.inverse();
    Ok(StructuredHessian {
        diag_part: w,
        c: net.coefficients().to_vec(),
        ar_inv,
        gamma: T::zero(),
        d_rank1: net.coefficients().to_vec(),
    })
}

pub fn dr_energy<T: Real>(
    prob: &DrProblem<T>,
    net: &ShallowReluNet<T>,
    rule: &QuadratureRule<T>,
) -> T {
    let p = net.partition();
    let nodes = p.nodes();
    let vals = net.node_values();
    let slopes = net.slopes();
    let half = real::<T>(0.5);
    let mut acc = T::zero();
    for k in 0..=p.n() {
        let (lo, hi) = p.subinterval(k);
        let (x0, v0, s) = (nodes[k], vals[k], slopes[k]);
        acc += half * s * s * rule.integrate(|x| prob.a.eval(x), lo, hi);
        acc += rule.integrate_with_cuts(
            |x| {
                let u = v0 + s * (x - x0);
                half * prob.r.eval(x) * u * u - prob.f.eval(x) * u
            },
            lo,
            hi,
            &prob.features,
            1,
        );
    }
    let d = net.boundary_value() - prob.beta;
    acc + half * prob.gamma * d * d
}

/// Exact minimizer of the energy over the linear weights: factorized
/// `A_a + M_r` solve with the rank-one boundary penalty folded in by the
/// Sherman-Morrison update.
pub fn dr_solve_linear<T: Real>(
    prob: &DrProblem<T>,
    p: &Partition<T>,
    rule: &QuadratureRule<T>,
) -> Result<Vec<T>, Error> {
    let op = FactorizedOperator::mass_plus_stiffness(
        |x| prob.a.eval(x),
        |x| prob.r.eval(x),
        p,
        rule,
    );
    let d = boundary_gradient_vector(p);
    let mut rhs = rhs_dr_with_form(
        |x| prob.f.eval(x),
        |x| prob.r.eval(x),
        prob.alpha,
        p,
        rule,
        &prob.features,
        prob.rhs_form,
    );
    let shift = prob.gamma * (prob.beta - prob.alpha);
    for (ri, &di) in rhs.iter_mut().zip(&d) {
        *ri += shift * di;
    }
    let c = sherman_morrison_solve(|x| op.apply_inverse(x), &d, &d, prob.gamma, &rhs)?;
    if p.n() <= RESIDUAL_CHECK_MAX_N {
        let dtc = crate::scalar::dot(&d, &c);
        let base = op.apply(&c);
        let res: Vec<T> = base
            .iter()
            .zip(d.iter().zip(&rhs))
            .map(|(&bv, (&di, &ri))| bv + prob.gamma * dtc * di - ri)
            .collect();
        let rel = norm2(&res) / norm2(&rhs).max(T::one());
        if !(rel <= real::<T>(RESIDUAL_CHECK_TOL)) {
            return Err(Error::IllConditionedSolve {
                rel: rel.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    Ok(c)
}

pub fn dr_grad_b<T: Real>(
    prob: &DrProblem<T>,
    net: &ShallowReluNet<T>,
    rule: &QuadratureRule<T>,
) -> Vec<T> {
    let p = net.partition();
    let nodes = p.nodes();
    let vals = net.node_values();
    let slopes = net.slopes();
    let b = p.breakpoints();
    let c = net.coefficients();
    let tails = tails_with(p, rule, &prob.features, |k, x| {
        let u = vals[k] + slopes[k] * (x - nodes[k]);
        prob.r.eval(x) * u - prob.f.eval(x)
    });
    let penalty = prob.gamma * (net.boundary_value() - prob.beta);
    let half = real::<T>(0.5);
    (0..p.n())
        .map(|j| {
            let mid_slope = slopes[j] + half * c[j];
            -c[j] * (prob.a.eval(b[j]) * mid_slope + tails[j] + penalty)
        })
        .collect()
}

pub fn dr_hessian<T: Real>(
    prob: &DrProblem<T>,
    net: &ShallowReluNet<T>,
    rule: &QuadratureRule<T>,
) -> Result<StructuredHessian<T>, Error> {
    let p = net.partition();
    let vals = net.node_values();
    let slopes = net.slopes();
    let b = p.breakpoints();
    let c = net.coefficients();
    let half = real::<T>(0.5);
    let g: Vec<T> = (0..p.n())
        .map(|j| {
            let mid_slope = slopes[j] + half * c[j];
            prob.r.eval(b[j]) * vals[j + 1]
                - prob.f.eval(b[j])
                - prob.a.deriv_or_fd(b[j], prob.fd_step) * mid_slope
        })
        .collect();
    let ar_inv = stiffness_alphabeta(|x| prob.r.eval(x), p, rule)?.inverse();
    Ok(StructuredHessian {
        diag_part: g,
        c: c.to_vec(),
        ar_inv,
        gamma: prob.gamma,
        d_rank1: c.to_vec(),
    })
}

/// The Hessian with its diagonal misfit part dropped: `D(c) A_r D(c)`
/// plus the rank-one penalty term for the boundary value problem.
pub fn gauss_newton_matrix<T: Real>(
    prob: &Problem<T>,
    net: &ShallowReluNet<T>,
    rule: &QuadratureRule<T>,
) -> Result<StructuredHessian<T>, Error> {
    let mut h = match prob {
        Problem::LeastSquares(pr) => ls_hessian(pr, net, rule)?,
        Problem::DiffusionReaction(pr) => dr_hessian(pr, net, rule)?,
    };
    for v in h.diag_part.iter_mut() {
        *v = T::zero();
    }
    Ok(h)
}

/// Relative error of the net's derivative against an exact derivative,
/// split at breakpoints and feature points with refined panels.
pub fn h1_rel_error<T: Real>(
    net: &ShallowReluNet<T>,
    du_exact: &ScalarField<T>,
    features: &[T],
    rule: &QuadratureRule<T>,
) -> Result<T, Error> {
    let p = net.partition();
    let slopes = net.slopes();
    let mut num = T::zero();
    let mut den = T::zero();
    for k in 0..=p.n() {
        let (lo, hi) = p.subinterval(k);
        let s = slopes[k];
        num += rule.integrate_with_cuts(
            |x| {
                let d = s - du_exact.eval(x);
                d * d
            },
            lo,
            hi,
            features,
            3,
        );
        den += rule.integrate_with_cuts(
            |x| {
                let d = du_exact.eval(x);
                d * d
            },
            lo,
            hi,
            features,
            3,
        );
    }
    if !(den > T::zero()) {
        return Err(Error::ZeroSeminorm);
    }
    Ok((num / den).sqrt())
}

/// Relative L2 error of the net's values against an exact solution.
pub fn l2_rel_error<T: Real>(
    net: &ShallowReluNet<T>,
    u_exact: &ScalarField<T>,
    features: &[T],
    rule: &QuadratureRule<T>,
) -> Result<T, Error> {
    let p = net.partition();
    let nodes = p.nodes();
    let vals = net.node_values();
    let slopes = net.slopes();
    let mut num = T::zero();
    let mut den = T::zero();
    for k in 0..=p.n() {
        let (lo, hi) = p.subinterval(k);
        let (x0, v0, s) = (nodes[k], vals[k], slopes[k]);
        num += rule.integrate_with_cuts(
            |x| {
                let d = v0 + s * (x - x0) - u_exact.eval(x);
                d * d
            },
            lo,
            hi,
            features,
            3,
        );
        den += rule.integrate_with_cuts(
            |x| {
                let d = u_exact.eval(x);
                d * d
            },
            lo,
            hi,
            features,
            3,
        );
    }
    if !(den > T::zero()) {
        return Err(Error::ZeroSeminorm);
    }
    Ok((num / den).sqrt())
}
