//! Assembly of the weighted mass and stiffness matrices in factorized
//! form. The dense matrices are never formed in the production path:
//! both operators are written as `Q^{-T} T Q^{-1}` with `T` tridiagonal
//! and `Q = G D(h)^{-1} G`, so applying the operator or its inverse costs
//! O(n). A second, purely algebraic inverse for the mass matrix is kept
//! alongside as an independent construction.

use crate::dense::DenseMatrix;
use crate::error::Error;
use crate::linalg::{
    q_apply, q_solve, qt_apply, qt_solve, AlphaBetaMatrix, TriDiagonal,
};
use crate::partition::Partition;
use crate::quadrature::{moments, QuadratureRule};
use crate::scalar::Real;

/// Which operator a [`FactorizedOperator`] represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Mass,
    Stiffness,
    MassPlusStiffness,
}

/// An operator of the form `Q^{-T} T Q^{-1}` on the span of the ReLU
/// basis, with `T` tridiagonal.
#[derive(Debug, Clone)]
pub struct FactorizedOperator<T> {
    partition: Partition<T>,
    middle: TriDiagonal<T>,
    kind: OperatorKind,
}

impl<T: Real> FactorizedOperator<T> {
    /// Weighted mass matrix `m_ij = integral of r sigma_i sigma_j`.
    pub fn mass<F: Fn(T) -> T>(r: F, p: &Partition<T>, rule: &QuadratureRule<T>) -> Self {
        FactorizedOperator {
            partition: p.clone(),
            middle: assemble_t_mass(r, p, rule),
            kind: OperatorKind::Mass,
        }
    }

    /// Weighted coefficient matrix `a_ij = integral of a H_i H_j` (the
    /// same matrix acts as the stiffness matrix of the spline basis).
    pub fn stiffness<F: Fn(T) -> T>(a: F, p: &Partition<T>, rule: &QuadratureRule<T>) -> Self {
        FactorizedOperator {
            partition: p.clone(),
            middle: assemble_t_stiff(a, p, rule),
            kind: OperatorKind::Stiffness,
        }
    }

    /// `A_a + M_r`, the linear operator of the diffusion-reaction system.
    pub fn mass_plus_stiffness<Fa: Fn(T) -> T, Fr: Fn(T) -> T>(
        a: Fa,
        r: Fr,
        p: &Partition<T>,
        rule: &QuadratureRule<T>,
    ) -> Self {
        let t = assemble_t_stiff(a, p, rule).add(&assemble_t_mass(r, p, rule));
        FactorizedOperator {
            partition: p.clone(),
            middle: t,
            kind: OperatorKind::MassPlusStiffness,
        }
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn middle(&self) -> &TriDiagonal<T> {
        &self.middle
    }

    pub fn partition(&self) -> &Partition<T> {
        &self.partition
    }

    /// Applies the operator: `Q^{-T} (T (Q^{-1} x))`.
    pub fn apply(&self, x: &[T]) -> Vec<T> {
        let y = q_solve(&self.partition, x);
        let y = self.middle.apply(&y);
        qt_solve(&self.partition, &y)
    }

    /// Applies the inverse: `Q (T^{-1} (Q^T x))`.
    pub fn apply_inverse(&self, x: &[T]) -> Result<Vec<T>, Error> {
        let y = qt_apply(&self.partition, x);
        let y = self.middle.solve(&y)?;
        Ok(q_apply(&self.partition, &y))
    }

    /// Dense realization (testing scale only).
    pub fn to_dense(&self) -> DenseMatrix<T> {
        let n = self.partition.n();
        let mut m = DenseMatrix::zeros(n);
        let mut e = vec![T::zero(); n];
        for col in 0..n {
            e[col] = T::one();
            let y = self.apply(&e);
            e[col] = T::zero();
            for row in 0..n {
                m.set(row, col, y[row]);
            }
        }
        m
    }
}

/// Tridiagonal middle factor of the weighted mass matrix.
///
/// With interval moments `s^k` of the weight and lengths `h` of the
/// subintervals following each breakpoint, the bands are
///
/// ```text
/// diag_p = s0_{p+1} - 2 s1_{p+1}/h_{p+1} + s2_p/h_p^2 + s2_{p+1}/h_{p+1}^2
/// off_p  = s1_{p+1}/h_{p+1} - s2_{p+1}/h_{p+1}^2
/// ```
///
/// with zero-based `p` and every index `n` term dropped (last row keeps
/// only its own `s2` contribution).
pub fn assemble_t_mass<T: Real, F: Fn(T) -> T>(
    r: F,
    p: &Partition<T>,
    rule: &QuadratureRule<T>,
) -> TriDiagonal<T> {
    let n = p.n();
    let h = p.inner_gaps();
    let s0 = moments(&r, p, 0, rule);
    let s1 = moments(&r, p, 1, rule);
    let s2 = moments(&r, p, 2, rule);
    let d01: Vec<T> = s1.iter().zip(h).map(|(&s, &hh)| s / hh).collect();
    let d11: Vec<T> = s2.iter().zip(h).map(|(&s, &hh)| s / (hh * hh)).collect();
    let mut diag = Vec::with_capacity(n);
    let mut off = Vec::with_capacity(n.saturating_sub(1));
    let two = T::one() + T::one();
    for p_idx in 0..n {
        let mut v = d11[p_idx];
        if p_idx + 1 < n {
            v += s0[p_idx + 1] - two * d01[p_idx + 1] + d11[p_idx + 1];
            off.push(d01[p_idx + 1] - d11[p_idx + 1]);
        }
        diag.push(v);
    }
    TriDiagonal::new(off.clone(), diag, off)
}

/// Tridiagonal middle factor of the weighted stiffness matrix:
/// `diag_p = s0_p/h_p^2 + s0_{p+1}/h_{p+1}^2`, `off_p = -s0_{p+1}/h_{p+1}^2`,
/// last row keeping only its own term.
pub fn assemble_t_stiff<T: Real, F: Fn(T) -> T>(
    a: F,
    p: &Partition<T>,
    rule: &QuadratureRule<T>,
) -> TriDiagonal<T> {
    let n = p.n();
    let h = p.inner_gaps();
    let s0 = moments(&a, p, 0, rule);
    let e: Vec<T> = s0.iter().zip(h).map(|(&s, &hh)| s / (hh * hh)).collect();
    let mut diag = Vec::with_capacity(n);
    let mut off = Vec::with_capacity(n.saturating_sub(1));
    for p_idx in 0..n {
        let mut v = e[p_idx];
        if p_idx + 1 < n {
            v += e[p_idx + 1];
            off.push(-e[p_idx + 1]);
        }
        diag.push(v);
    }
    TriDiagonal::new(off.clone(), diag, off)
}

/// The coefficient matrix `A_r` in alpha-beta form: `alpha = 1`,
/// `beta_i = integral of r over [b_i, x_hi]`.
pub fn stiffness_alphabeta<T: Real, F: Fn(T) -> T>(
    r: F,
    p: &Partition<T>,
    rule: &QuadratureRule<T>,
) -> Result<AlphaBetaMatrix<T>, Error> {
    let beta = crate::quadrature::tail_integrals(&r, p, rule);
    AlphaBetaMatrix::new(vec![T::one(); p.n()], beta)
}

/// Mass inverse assembled from the splitting `M_r = M_1 + M_2` into two
/// alpha-beta matrices, giving `M_r^{-1} = M_2^{-1} (M_2^{-1} + M_1^{-1})^{-1} M_1^{-1}`
/// with tridiagonal factors throughout.
#[derive(Debug, Clone)]
pub struct AlgebraicMassInverse<T> {
    m1_inv: TriDiagonal<T>,
    m2_inv: TriDiagonal<T>,
    middle: TriDiagonal<T>,
}

impl<T: Real> AlgebraicMassInverse<T> {
    pub fn apply_inverse(&self, x: &[T]) -> Result<Vec<T>, Error> {
        let y = self.m1_inv.apply(x);
        let y = self.middle.solve(&y)?;
        Ok(self.m2_inv.apply(&y))
    }

    pub fn m1_inv(&self) -> &TriDiagonal<T> {
        &self.m1_inv
    }

    pub fn m2_inv(&self) -> &TriDiagonal<T> {
        &self.m2_inv
    }
}

/// Builds [`AlgebraicMassInverse`] for weight `r`. Fails when either
/// summand violates the alpha-beta invertibility hypotheses, in which
/// case callers fall back to the factorized route.
pub fn assemble_mass_algebraic<T: Real, F: Fn(T) -> T>(
    r: F,
    p: &Partition<T>,
    rule: &QuadratureRule<T>,
) -> Result<AlgebraicMassInverse<T>, Error> {
    let n = p.n();
    let x_hi = p.x_hi();
    let b = p.breakpoints();
    // Tail moments of r, x r and x^2 r in one sweep each; the split
    // m1_ij = beta1_max (alpha1 = 1) and m2_ij = alpha2_min beta2_max with
    //   beta1_k = integral r (x - x_hi)(x - b_k),
    //   alpha2_k = x_hi - b_k, beta2_k = integral r (x - b_k)
    // follows from (x-b_i)(x-b_j) = (x-x_hi)(x-b_j) + (x_hi-b_i)(x-b_j).
    let t0 = crate::quadrature::tail_integrals(&r, p, rule);
    let t1 = crate::quadrature::tail_integrals(|x| x * r(x), p, rule);
    let t2 = crate::quadrature::tail_integrals(|x| x * x * r(x), p, rule);
    let mut beta1 = Vec::with_capacity(n);
    let mut alpha2 = Vec::with_capacity(n);
    let mut beta2 = Vec::with_capacity(n);
    for k in 0..n {
        let bk = b[k];
        beta1.push(t2[k] - (x_hi + bk) * t1[k] + x_hi * bk * t0[k]);
        alpha2.push(x_hi - bk);
        beta2.push(t1[k] - bk * t0[k]);
    }
    let m1 = AlphaBetaMatrix::new(vec![T::one(); n], beta1)?;
    let m2 = AlphaBetaMatrix::new(alpha2, beta2)?;
    let m1_inv = m1.inverse();
    let m2_inv = m2.inverse();
    let middle = m1_inv.add(&m2_inv);
    Ok(AlgebraicMassInverse {
        m1_inv,
        m2_inv,
        middle,
    })
}

/// Which right-hand-side convention the diffusion-reaction load uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrRhsForm {
    /// `integral (f - alpha r) psi_i`: consistent with the penalized
    /// energy for arbitrary reaction weight. The production choice.
    EnergyConsistent,
    /// `integral (f - alpha) psi_i`: coincides with the above only when
    /// `r = 1`; kept for reproduction tests.
    Literal,
}

fn tail_pair<T: Real, F: Fn(T) -> T>(
    g: F,
    p: &Partition<T>,
    rule: &QuadratureRule<T>,
    cuts: &[T],
) -> Vec<T> {
    // v_i = integral over [b_i, x_hi] of g(x) (x - b_i) dx computed as
    // A_i - b_i B_i from the two tail integrals of x g and g.
    let a = crate::quadrature::tail_integrals_with_cuts(|x| x * g(x), p, rule, cuts, 1);
    let b = crate::quadrature::tail_integrals_with_cuts(&g, p, rule, cuts, 1);
    p.breakpoints()
        .iter()
        .zip(a.iter().zip(&b))
        .map(|(&bi, (&ai, &vi))| ai - bi * vi)
        .collect()
}

/// Least-squares load vector `integral r (f - f(x_lo)) psi_i`. `cuts`
/// lists extra quadrature split points for sharp features of `f`.
pub fn rhs_ls<T: Real, Ff: Fn(T) -> T, Fr: Fn(T) -> T>(
    f: Ff,
    r: Fr,
    p: &Partition<T>,
    rule: &QuadratureRule<T>,
    cuts: &[T],
) -> Vec<T> {
    let f0 = f(p.x_lo());
    tail_pair(|x| r(x) * (f(x) - f0), p, rule, cuts)
}

/// Diffusion-reaction load vector, energy-consistent form.
pub fn rhs_dr<T: Real, Ff: Fn(T) -> T, Fr: Fn(T) -> T>(
    f: Ff,
    r: Fr,
    alpha: T,
    p: &Partition<T>,
    rule: &QuadratureRule<T>,
    cuts: &[T],
) -> Vec<T> {
    rhs_dr_with_form(f, r, alpha, p, rule, cuts, DrRhsForm::EnergyConsistent)
}

pub fn rhs_dr_with_form<T: Real, Ff: Fn(T) -> T, Fr: Fn(T) -> T>(
    f: Ff,
    r: Fr,
    alpha: T,
    p: &Partition<T>,
    rule: &QuadratureRule<T>,
    cuts: &[T],
    form: DrRhsForm,
) -> Vec<T> {
    match form {
        DrRhsForm::EnergyConsistent => tail_pair(|x| f(x) - alpha * r(x), p, rule, cuts),
        DrRhsForm::Literal => tail_pair(|x| f(x) - alpha, p, rule, cuts),
    }
}

/// The vector `d_i = x_hi - b_i = sigma_i(x_hi)`; gradient of the
/// boundary value with respect to the weights.
pub fn boundary_gradient_vector<T: Real>(p: &Partition<T>) -> Vec<T> {
    let x_hi = p.x_hi();
    p.breakpoints().iter().map(|&b| x_hi - b).collect()
}

/// Dense mass matrix by direct per-entry quadrature (testing scale).
pub fn dense_mass<T: Real, F: Fn(T) -> T>(
    r: F,
    p: &Partition<T>,
    rule: &QuadratureRule<T>,
) -> DenseMatrix<T> {
    let n = p.n();
    let b = p.breakpoints();
    let mut m = DenseMatrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            let (bi, bj) = (b[i], b[j]);
            let mut acc = T::zero();
            for k in j + 1..=n {
                let (lo, hi) = p.subinterval(k);
                acc += rule.integrate(|x| r(x) * (x - bi) * (x - bj), lo, hi);
            }
            m.set(i, j, acc);
            m.set(j, i, acc);
        }
    }
    m
}

/// Dense coefficient matrix `integral of a H_i H_j` by direct quadrature
/// (testing scale).
pub fn dense_stiffness<T: Real, F: Fn(T) -> T>(
    a: F,
    p: &Partition<T>,
    rule: &QuadratureRule<T>,
) -> DenseMatrix<T> {
    let n = p.n();
    let mut m = DenseMatrix::zeros(n);
    for j in 0..n {
        // The later breakpoint of the pair sets the integration range.
        let mut acc = T::zero();
        for k in j + 1..=n {
            let (lo, hi) = p.subinterval(k);
            acc += rule.integrate(&a, lo, hi);
        }
        for i in 0..=j {
            m.set(i, j, acc);
            m.set(j, i, acc);
        }
    }
    m
}
