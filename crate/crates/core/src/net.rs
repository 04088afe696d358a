//! The shallow ReLU network `u(x) = c0 + sum_i c_i relu(x - b_i)`,
//! stored with its breakpoints as a [`Partition`]. On the interval the
//! network is exactly the free-knot linear spline with knots at the
//! breakpoints, zero slope on the leading subinterval.

use crate::error::Error;
use crate::partition::Partition;
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct ShallowReluNet<T> {
    c0: T,
    c: Vec<T>,
    partition: Partition<T>,
}

impl<T: Real> ShallowReluNet<T> {
    pub fn new(c0: T, c: Vec<T>, partition: Partition<T>) -> Result<Self, Error> {
        if c.len() != partition.n() {
            return Err(Error::DimensionMismatch {
                expected: partition.n(),
                got: c.len(),
            });
        }
        Ok(ShallowReluNet { c0, c, partition })
    }

    /// The zero network on a uniform partition.
    pub fn zero_uniform(n: usize, x_lo: T, x_hi: T) -> Result<Self, Error> {
        let partition = Partition::uniform(n, x_lo, x_hi)?;
        Ok(ShallowReluNet {
            c0: T::zero(),
            c: vec![T::zero(); n],
            partition,
        })
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn c0(&self) -> T {
        self.c0
    }

    pub fn coefficients(&self) -> &[T] {
        &self.c
    }

    pub fn partition(&self) -> &Partition<T> {
        &self.partition
    }

    pub fn set_c0(&mut self, c0: T) {
        self.c0 = c0;
    }

    pub fn set_coefficients(&mut self, c: Vec<T>) -> Result<(), Error> {
        if c.len() != self.partition.n() {
            return Err(Error::DimensionMismatch {
                expected: self.partition.n(),
                got: c.len(),
            });
        }
        self.c = c;
        Ok(())
    }

    /// Replaces the partition, keeping coefficients (lengths must match).
    pub fn with_partition(&self, partition: Partition<T>) -> Result<Self, Error> {
        ShallowReluNet::new(self.c0, self.c.clone(), partition)
    }

    /// Pointwise value. O(n); use [`NetEvaluator`] for repeated evaluation.
    pub fn eval(&self, x: T) -> T {
        let mut acc = self.c0;
        for (&ci, &bi) in self.c.iter().zip(self.partition.breakpoints()) {
            let t = x - bi;
            if t > T::zero() {
                acc += ci * t;
            }
        }
        acc
    }

    /// Slopes on the subintervals `I_0..I_n`: prefix sums of the weights
    /// with zero in front.
    pub fn slopes(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.c.len() + 1);
        let mut acc = T::zero();
        out.push(acc);
        for &ci in &self.c {
            acc += ci;
            out.push(acc);
        }
        out
    }

    /// Values at the nodes `x_lo, b_1, .., b_n, x_hi`.
    pub fn node_values(&self) -> Vec<T> {
        let nodes = self.partition.nodes();
        let slopes = self.slopes();
        let mut out = Vec::with_capacity(nodes.len());
        let mut val = self.c0;
        out.push(val);
        for k in 0..slopes.len() {
            val += slopes[k] * (nodes[k + 1] - nodes[k]);
            out.push(val);
        }
        out
    }

    /// Value at the right endpoint in O(n) without node traversal:
    /// `c0 + sum c_i (x_hi - b_i)`.
    pub fn boundary_value(&self) -> T {
        let x_hi = self.partition.x_hi();
        let mut acc = self.c0;
        for (&ci, &bi) in self.c.iter().zip(self.partition.breakpoints()) {
            acc += ci * (x_hi - bi);
        }
        acc
    }

    /// Freezes the current state into an O(log n)-per-point evaluator.
    pub fn evaluator(&self) -> NetEvaluator<T> {
        let nodes = self.partition.nodes();
        let values = self.node_values();
        let slopes = self.slopes();
        NetEvaluator {
            nodes,
            values,
            slopes,
        }
    }
}

/// Piecewise-linear evaluator over the frozen node table. Outside the
/// interval the spline is extended with its boundary slopes (zero on the
/// left by construction).
#[derive(Debug, Clone)]
pub struct NetEvaluator<T> {
    nodes: Vec<T>,
    values: Vec<T>,
    slopes: Vec<T>,
}

impl<T: Real> NetEvaluator<T> {
    /// Index of the subinterval containing `x` (clamped to the ends).
    fn locate(&self, x: T) -> usize {
        let inner = &self.nodes[1..self.nodes.len() - 1];
        inner.partition_point(|&b| b <= x)
    }

    pub fn eval(&self, x: T) -> T {
        let k = self.locate(x);
        self.values[k] + self.slopes[k] * (x - self.nodes[k])
    }

    /// One-sided derivative (from the right at nodes).
    pub fn deriv(&self, x: T) -> T {
        self.slopes[self.locate(x)]
    }

    pub fn slopes(&self) -> &[T] {
        &self.slopes
    }

    pub fn node_values(&self) -> &[T] {
        &self.values
    }
}
