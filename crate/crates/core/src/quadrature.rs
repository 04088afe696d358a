//! Gauss-Legendre quadrature, interval moments and tail integrals.
//!
//! All integrals in this crate reduce to panels on which the integrand is
//! smooth; each panel gets a single fixed-order rule. There is no adaptive
//! subdivision here: callers that know about kinks or sharp features split
//! the panels themselves.

use std::sync::Arc;

use crate::error::Error;
use crate::partition::Partition;
use crate::scalar::{real, Real};

/// Highest supported Gauss-Legendre order.
pub const MAX_ORDER: usize = 10;

/// Default order used by the solvers.
pub const DEFAULT_ORDER: usize = 5;

/// Nodes and weights on the reference interval `[-1, 1]`.
///
/// A rule of order `q` integrates polynomials of degree `2q - 1` exactly.
#[derive(Debug, Clone)]
pub struct QuadratureRule<T> {
    order: usize,
    nodes: Vec<T>,
    weights: Vec<T>,
}

impl<T: Real> QuadratureRule<T> {
    /// The Gauss-Legendre rule with `order` nodes, `1..=MAX_ORDER`.
    pub fn gauss_legendre(order: usize) -> Result<Self, Error> {
        let (nodes, weights) = gauss_legendre_table(order)?;
        Ok(QuadratureRule {
            order,
            nodes: nodes.iter().map(|&x| real(x)).collect(),
            weights: weights.iter().map(|&w| real(w)).collect(),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Integrates `g` over a single panel `[lo, hi]`; returns zero when the
    /// panel is empty or inverted.
    pub fn integrate<F: Fn(T) -> T>(&self, g: F, lo: T, hi: T) -> T {
        if !(hi > lo) {
            return T::zero();
        }
        let k = (hi - lo) * real::<T>(0.5);
        let m = (hi + lo) * real::<T>(0.5);
        let mut acc = T::zero();
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * g(m + k * x);
        }
        acc * k
    }

    /// Composite integration over `panels` equal panels.
    pub fn integrate_panels<F: Fn(T) -> T>(&self, g: F, lo: T, hi: T, panels: usize) -> T {
        if !(hi > lo) || panels == 0 {
            return T::zero();
        }
        let width = (hi - lo) / real::<T>(panels as f64);
        let mut acc = T::zero();
        for p in 0..panels {
            let a = lo + real::<T>(p as f64) * width;
            let b = if p + 1 == panels {
                hi
            } else {
                lo + real::<T>((p + 1) as f64) * width
            };
            acc += self.integrate(&g, a, b);
        }
        acc
    }

    /// Integrates `g` over `[lo, hi]`, splitting at every cut point that
    /// falls strictly inside and refining each resulting piece into
    /// `panels_per_piece` equal panels. `cuts` must be sorted ascending.
    pub fn integrate_with_cuts<F: Fn(T) -> T>(
        &self,
        g: F,
        lo: T,
        hi: T,
        cuts: &[T],
        panels_per_piece: usize,
    ) -> T {
        if !(hi > lo) {
            return T::zero();
        }
        let mut acc = T::zero();
        let mut a = lo;
        for &c in cuts {
            if c <= a {
                continue;
            }
            if c >= hi {
                break;
            }
            acc += self.integrate_panels(&g, a, c, panels_per_piece);
            a = c;
        }
        acc + self.integrate_panels(&g, a, hi, panels_per_piece)
    }
}

fn gauss_legendre_table(order: usize) -> Result<(&'static [f64], &'static [f64]), Error> {
    let pair: (&[f64], &[f64]) = match order {
        1 => (&[0.0], &[2.0]),
        2 => (
            &[-0.57735026918962576451, 0.57735026918962576451],
            &[1.0, 1.0],
        ),
        3 => (
            &[-0.77459666924148337704, 0.0, 0.77459666924148337704],
            &[
                0.55555555555555555556,
                0.88888888888888888889,
                0.55555555555555555556,
            ],
        ),
        4 => (
            &[
                -0.86113631159405257522,
                -0.33998104358485626480,
                0.33998104358485626480,
                0.86113631159405257522,
            ],
            &[
                0.34785484513745385737,
                0.65214515486254614263,
                0.65214515486254614263,
                0.34785484513745385737,
            ],
        ),
        5 => (
            &[
                -0.90617984593866399280,
                -0.53846931010568309104,
                0.0,
                0.53846931010568309104,
                0.90617984593866399280,
            ],
            &[
                0.23692688505618908751,
                0.47862867049936646804,
                0.56888888888888888889,
                0.47862867049936646804,
                0.23692688505618908751,
            ],
        ),
        6 => (
            &[
                -0.93246951420315202781,
                -0.66120938646626451366,
                -0.23861918608319690863,
                0.23861918608319690863,
                0.66120938646626451366,
                0.93246951420315202781,
            ],
            &[
                0.17132449237917034504,
                0.36076157304813860757,
                0.46791393457269104739,
                0.46791393457269104739,
                0.36076157304813860757,
                0.17132449237917034504,
            ],
        ),
        7 => (
            &[
                -0.94910791234275852453,
                -0.74153118559939443986,
                -0.40584515137739716691,
                0.0,
                0.40584515137739716691,
                0.74153118559939443986,
                0.94910791234275852453,
            ],
            &[
                0.12948496616886969327,
                0.27970539148927666790,
                0.38183005050511894495,
                0.41795918367346938776,
                0.38183005050511894495,
                0.27970539148927666790,
                0.12948496616886969327,
            ],
        ),
        8 => (
            &[
                -0.96028985649753623168,
                -0.79666647741362673959,
                -0.52553240991632898582,
                -0.18343464249564980494,
                0.18343464249564980494,
                0.52553240991632898582,
                0.79666647741362673959,
                0.96028985649753623168,
            ],
            &[
                0.10122853629037625915,
                0.22238103445337447054,
                0.31370664587788728734,
                0.36268378337836198297,
                0.36268378337836198297,
                0.31370664587788728734,
                0.22238103445337447054,
                0.10122853629037625915,
            ],
        ),
        9 => (
            &[
                -0.96816023950762608984,
                -0.83603110732663579430,
                -0.61337143270059039731,
                -0.32425342340380892904,
                0.0,
                0.32425342340380892904,
                0.61337143270059039731,
                0.83603110732663579430,
                0.96816023950762608984,
            ],
            &[
                0.081274388361574411972,
                0.18064816069485740406,
                0.26061069640293546232,
                0.31234707704000284007,
                0.33023935500125976316,
                0.31234707704000284007,
                0.26061069640293546232,
                0.18064816069485740406,
                0.081274388361574411972,
            ],
        ),
        10 => (
            &[
                -0.97390652851717172008,
                -0.86506336668898451073,
                -0.67940956829902440623,
                -0.43339539412924719080,
                -0.14887433898163121088,
                0.14887433898163121088,
                0.43339539412924719080,
                0.67940956829902440623,
                0.86506336668898451073,
                0.97390652851717172008,
            ],
            &[
                0.066671344308688137594,
                0.14945134915058059315,
                0.21908636251598204400,
                0.26926671930999635509,
                0.29552422471475287017,
                0.29552422471475287017,
                0.26926671930999635509,
                0.21908636251598204400,
                0.14945134915058059315,
                0.066671344308688137594,
            ],
        ),
        _ => {
            return Err(Error::UnsupportedQuadratureOrder {
                order,
                max: MAX_ORDER,
            })
        }
    };
    Ok(pair)
}

type FieldFn<T> = Arc<dyn Fn(T) -> T + Send + Sync>;

/// A scalar function of one variable, optionally with an analytic
/// derivative. Cloning is cheap (shared closures).
#[derive(Clone)]
pub struct ScalarField<T> {
    f: FieldFn<T>,
    df: Option<FieldFn<T>>,
}

impl<T: Real> ScalarField<T> {
    pub fn new(f: impl Fn(T) -> T + Send + Sync + 'static) -> Self {
        ScalarField {
            f: Arc::new(f),
            df: None,
        }
    }

    pub fn with_derivative(
        f: impl Fn(T) -> T + Send + Sync + 'static,
        df: impl Fn(T) -> T + Send + Sync + 'static,
    ) -> Self {
        ScalarField {
            f: Arc::new(f),
            df: Some(Arc::new(df)),
        }
    }

    pub fn constant(c: T) -> Self {
        ScalarField {
            f: Arc::new(move |_| c),
            df: Some(Arc::new(|_| T::zero())),
        }
    }

    #[inline]
    pub fn eval(&self, x: T) -> T {
        (self.f)(x)
    }

    pub fn has_derivative(&self) -> bool {
        self.df.is_some()
    }

    /// Analytic derivative when available, otherwise a central difference
    /// with the given step.
    pub fn deriv_or_fd(&self, x: T, step: T) -> T {
        match &self.df {
            Some(df) => df(x),
            None => (self.eval(x + step) - self.eval(x - step)) / (step + step),
        }
    }
}

impl<T> std::fmt::Debug for ScalarField<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScalarField")
            .field("has_derivative", &self.df.is_some())
            .finish()
    }
}

/// Interval moments `s_i^k = integral over [b_i, b_{i+1}] of
/// r(x) (x - b_i)^k dx` for `i = 1..=n`, where `b_{n+1} = x_hi`.
///
/// Entry `j` (zero-based) belongs to the subinterval starting at
/// breakpoint `j`.
pub fn moments<T: Real, F: Fn(T) -> T>(
    r: F,
    p: &Partition<T>,
    k: usize,
    rule: &QuadratureRule<T>,
) -> Vec<T> {
    let n = p.n();
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let (lo, hi) = p.subinterval(j + 1);
        let b = lo;
        out.push(rule.integrate(
            |x| {
                let d = x - b;
                let mut pow = T::one();
                for _ in 0..k {
                    pow = pow * d;
                }
                r(x) * pow
            },
            lo,
            hi,
        ));
    }
    out
}

/// Tail integrals `v_j = integral over [b_j, x_hi] of g dx` for
/// `j = 1..=n`, computed by suffix accumulation of per-subinterval pieces
/// so the whole vector costs one quadrature sweep.
pub fn tail_integrals<T: Real, F: Fn(T) -> T>(
    g: F,
    p: &Partition<T>,
    rule: &QuadratureRule<T>,
) -> Vec<T> {
    tail_integrals_with_cuts(g, p, rule, &[], 1)
}

/// [`tail_integrals`] with extra split points for integrands that have
/// sharp features away from the breakpoints. `cuts` must be sorted.
pub fn tail_integrals_with_cuts<T: Real, F: Fn(T) -> T>(
    g: F,
    p: &Partition<T>,
    rule: &QuadratureRule<T>,
    cuts: &[T],
    panels_per_piece: usize,
) -> Vec<T> {
    let n = p.n();
    let mut pieces = Vec::with_capacity(n);
    for j in 0..n {
        let (lo, hi) = p.subinterval(j + 1);
        pieces.push(rule.integrate_with_cuts(&g, lo, hi, cuts, panels_per_piece));
    }
    let mut acc = T::zero();
    for v in pieces.iter_mut().rev() {
        acc += *v;
        *v = acc;
    }
    pieces
}
