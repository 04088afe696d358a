//! Small dense matrices used as test oracles and for condition-number
//! measurement. Nothing here is meant for large `n`; the structured
//! kernels in [`crate::linalg`] are the production path.

use crate::error::Error;
use crate::linalg::TriDiagonal;
use crate::scalar::{norm2, real, Real};

/// Row-major dense square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        DenseMatrix {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, T::one());
        }
        m
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> T) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    pub fn from_tridiagonal(t: &TriDiagonal<T>) -> Self {
        let n = t.n();
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, t.diag()[i]);
            if i + 1 < n {
                m.set(i + 1, i, t.sub()[i]);
                m.set(i, i + 1, t.sup()[i]);
            }
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![T::zero(); self.n];
        for i in 0..self.n {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            y[i] = row.iter().zip(x).map(|(&a, &b)| a * b).sum();
        }
        y
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        let mut out = Self::zeros(self.n);
        for i in 0..self.n {
            for k in 0..self.n {
                let aik = self.get(i, k);
                if aik == T::zero() {
                    continue;
                }
                for j in 0..self.n {
                    let v = out.get(i, j) + aik * other.get(k, j);
                    out.set(i, j, v);
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |i, j| self.get(j, i))
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        let mut out = self.clone();
        for (a, &b) in out.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.n, other.n);
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    /// LU factorization with partial pivoting.
    pub fn lu(&self) -> Result<DenseLu<T>, Error> {
        let n = self.n;
        let mut lu = self.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = self.max_abs();
        let tol = scale * T::epsilon() * real::<T>(8.0);
        for col in 0..n {
            let mut pivot_row = col;
            let mut pivot_val = lu[col * n + col].abs();
            for row in col + 1..n {
                let v = lu[row * n + col].abs();
                if v > pivot_val {
                    pivot_val = v;
                    pivot_row = row;
                }
            }
            if pivot_val <= tol {
                return Err(Error::SingularDense { index: col });
            }
            if pivot_row != col {
                for j in 0..n {
                    lu.swap(col * n + j, pivot_row * n + j);
                }
                perm.swap(col, pivot_row);
            }
            let piv = lu[col * n + col];
            for row in col + 1..n {
                let factor = lu[row * n + col] / piv;
                lu[row * n + col] = factor;
                for j in col + 1..n {
                    let v = lu[row * n + j] - factor * lu[col * n + j];
                    lu[row * n + j] = v;
                }
            }
        }
        Ok(DenseLu { n, lu, perm })
    }

    pub fn solve(&self, rhs: &[T]) -> Result<Vec<T>, Error> {
        self.lu()?.solve(rhs)
    }

    pub fn inverse(&self) -> Result<Self, Error> {
        let lu = self.lu()?;
        let n = self.n;
        let mut out = Self::zeros(n);
        let mut e = vec![T::zero(); n];
        for col in 0..n {
            e[col] = T::one();
            let x = lu.solve(&e)?;
            e[col] = T::zero();
            for row in 0..n {
                out.set(row, col, x[row]);
            }
        }
        Ok(out)
    }
}

/// LU factors with the row permutation applied during elimination.
#[derive(Debug, Clone)]
pub struct DenseLu<T> {
    n: usize,
    lu: Vec<T>,
    perm: Vec<usize>,
}

impl<T: Real> DenseLu<T> {
    pub fn solve(&self, rhs: &[T]) -> Result<Vec<T>, Error> {
        let n = self.n;
        if rhs.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: rhs.len(),
            });
        }
        let mut x: Vec<T> = self.perm.iter().map(|&p| rhs[p]).collect();
        for i in 1..n {
            let mut acc = x[i];
            for j in 0..i {
                acc = acc - self.lu[i * n + j] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..n {
                acc = acc - self.lu[i * n + j] * x[j];
            }
            x[i] = acc / self.lu[i * n + i];
        }
        Ok(x)
    }
}

/// Spectral condition number of a symmetric positive definite matrix via
/// power iteration for the largest eigenvalue and inverse iteration for
/// the smallest. `rel_tol` bounds the relative change between sweeps at
/// convergence.
pub fn spd_condition_number<T: Real>(m: &DenseMatrix<T>, rel_tol: T) -> Result<T, Error> {
    let n = m.n();
    if n == 1 {
        return Ok(T::one());
    }
    let lu = m.lu()?;
    let lambda_max = dominant_eigenvalue(n, rel_tol, |x| m.matvec(x))?;
    let inv_lambda_min = dominant_eigenvalue(n, rel_tol, |x| {
        lu.solve(x).expect("factorized solve cannot fail")
    })?;
    Ok(lambda_max * inv_lambda_min)
}

fn dominant_eigenvalue<T: Real>(
    n: usize,
    rel_tol: T,
    apply: impl Fn(&[T]) -> Vec<T>,
) -> Result<T, Error> {
    let max_iters = 50_000;
    // Deterministic pseudo-random start with components in all directions.
    let mut x: Vec<T> = (0..n)
        .map(|i| real::<T>(1.0 + 0.6 * ((i as f64) * 1.618).sin()))
        .collect();
    let norm = norm2(&x);
    for v in x.iter_mut() {
        *v = *v / norm;
    }
    let mut lambda_prev = T::zero();
    for _ in 0..max_iters {
        let mut y = apply(&x);
        let lambda = norm2(&y);
        if lambda == T::zero() {
            return Ok(T::zero());
        }
        for v in y.iter_mut() {
            *v = *v / lambda;
        }
        let diff = (lambda - lambda_prev).abs();
        x = y;
        if diff <= rel_tol * lambda {
            return Ok(lambda);
        }
        lambda_prev = lambda;
    }
    Err(Error::PowerIterationStalled { max_iters })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_solves_hand_checked_system() {
        // [[2,1],[1,3]] x = (5, 10) has solution (1, 3).
        let mut m = DenseMatrix::<f64>::zeros(2);
        m.set(0, 0, 2.0);
        m.set(0, 1, 1.0);
        m.set(1, 0, 1.0);
        m.set(1, 1, 3.0);
        let x = m.solve(&[5.0, 10.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14);
        assert!((x[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn lu_needs_pivoting_case() {
        // Zero leading entry forces a row swap.
        let m = DenseMatrix::<f64>::from_fn(2, |i, j| if i == 0 && j == 0 {
            0.0
        } else {
            1.0
        });
        let x = m.solve(&[2.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14);
        assert!((x[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let m = DenseMatrix::from_fn(2, |_, _| 1.0);
        assert!(matches!(m.solve(&[1.0, 1.0]), Err(Error::SingularDense { .. })));
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let m = DenseMatrix::from_fn(4, |i, j| {
            if i == j {
                4.0
            } else {
                1.0 / ((i + j) as f64 + 1.0)
            }
        });
        let inv = m.inverse().unwrap();
        let prod = m.matmul(&inv);
        let eye = DenseMatrix::identity(4);
        assert!(prod.max_abs_diff(&eye) < 1e-12);
    }

    #[test]
    fn condition_of_diagonal_matrix() {
        let m = DenseMatrix::<f64>::from_fn(4, |i, j| {
            if i == j {
                [1.0, 2.0, 5.0, 10.0][i]
            } else {
                0.0
            }
        });
        let kappa = spd_condition_number(&m, 1e-10).unwrap();
        assert!((kappa - 10.0).abs() < 1e-6, "{kappa}");
    }

    #[test]
    fn condition_of_scalar_matrix_is_one() {
        let m = DenseMatrix::from_fn(1, |_, _| 42.0);
        assert_eq!(spd_condition_number(&m, 1e-8).unwrap(), 1.0);
    }
}
