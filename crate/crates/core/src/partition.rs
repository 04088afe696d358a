//! Ordered breakpoint vectors and the projection that keeps them valid.

use crate::error::Error;
use crate::scalar::{real, Real};

/// Relative factor defining the default minimum gap: `1e-8 * (x_hi - x_lo)`.
pub const DEFAULT_MIN_GAP_REL: f64 = 1e-8;

/// Strictly increasing interior breakpoints `b_1 < ... < b_n` of an
/// interval `(x_lo, x_hi)`, together with the gap vector.
///
/// With the conventions `b_0 = x_lo` and `b_{n+1} = x_hi`, the gaps are
/// `h_k = b_{k+1} - b_k` for `k = 0..=n`, so `gaps()` has `n + 1` entries
/// and sums to the interval length. Every gap is at least `min_gap`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition<T> {
    x_lo: T,
    x_hi: T,
    b: Vec<T>,
    h: Vec<T>,
    min_gap: T,
}

impl<T: Real> Partition<T> {
    /// The default minimum gap for an interval.
    pub fn default_min_gap(x_lo: T, x_hi: T) -> T {
        real::<T>(DEFAULT_MIN_GAP_REL) * (x_hi - x_lo)
    }

    /// `n` equispaced interior breakpoints `b_i = x_lo + i * span / (n + 1)`.
    pub fn uniform(n: usize, x_lo: T, x_hi: T) -> Result<Self, Error> {
        check_interval(x_lo, x_hi)?;
        let span = x_hi - x_lo;
        let step = span / real::<T>((n + 1) as f64);
        let b: Vec<T> = (1..=n)
            .map(|i| x_lo + real::<T>(i as f64) * step)
            .collect();
        Self::from_sorted_with_gap(b, x_lo, x_hi, Self::default_min_gap(x_lo, x_hi))
    }

    /// Builds a partition from an arbitrary raw vector: stable sort, then a
    /// deterministic repair that enforces interiority and the minimum gap.
    ///
    /// Runs of exactly equal values are first spread symmetrically around
    /// their common value with spacing `min_gap`; a left-to-right pass then
    /// pushes any remaining too-close neighbours apart, and a final clamp
    /// against per-index upper bounds keeps everything below `x_hi`. Input
    /// that already satisfies all invariants is returned unchanged.
    pub fn project_ordered(raw: &[T], x_lo: T, x_hi: T, min_gap: T) -> Result<Self, Error> {
        check_interval(x_lo, x_hi)?;
        let n = raw.len();
        let span = x_hi - x_lo;
        if min_gap <= T::zero() || real::<T>((n + 1) as f64) * min_gap >= span {
            return Err(Error::InfeasibleMinGap {
                n,
                min_gap: min_gap.to_f64().unwrap_or(f64::NAN),
                span: span.to_f64().unwrap_or(f64::NAN),
            });
        }
        let mut b = raw.to_vec();
        b.sort_by(|a, c| a.partial_cmp(c).expect("breakpoint is NaN"));

        // Symmetric split of runs of exactly equal values.
        let mut i = 0;
        while i < n {
            let mut j = i + 1;
            while j < n && b[j] == b[i] {
                j += 1;
            }
            let k = j - i;
            if k > 1 {
                let centre = b[i];
                let half = real::<T>((k - 1) as f64) / real::<T>(2.0);
                for (m, slot) in b[i..j].iter_mut().enumerate() {
                    *slot = centre + (real::<T>(m as f64) - half) * min_gap;
                }
            }
            i = j;
        }

        // Left-to-right: enforce lower bounds x_lo + min_gap and neighbour gaps.
        let mut lo = x_lo + min_gap;
        for v in b.iter_mut() {
            if *v < lo {
                *v = lo;
            }
            lo = *v + min_gap;
        }
        // Clamp against upper bounds x_hi - (n - i) * min_gap; feasibility of
        // min_gap guarantees the result still satisfies every lower bound.
        for (i, v) in b.iter_mut().enumerate() {
            let hi = x_hi - real::<T>((n - i) as f64) * min_gap;
            if *v > hi {
                *v = hi;
            }
        }
        Self::from_sorted_with_gap(b, x_lo, x_hi, min_gap)
    }

    /// Wraps an already sorted, strictly interior breakpoint vector.
    ///
    /// The stored `min_gap` is the smallest gap actually present.
    pub fn from_sorted(b: Vec<T>, x_lo: T, x_hi: T) -> Result<Self, Error> {
        check_interval(x_lo, x_hi)?;
        let mut min_gap = x_hi - x_lo;
        let mut prev = x_lo;
        for (i, &v) in b.iter().enumerate() {
            if v <= prev {
                return Err(Error::UnorderedBreakpoints { index: i });
            }
            min_gap = min_gap.min(v - prev);
            prev = v;
        }
        if !b.is_empty() && *b.last().unwrap() >= x_hi {
            return Err(Error::UnorderedBreakpoints { index: b.len() - 1 });
        }
        min_gap = min_gap.min(x_hi - prev);
        Self::from_sorted_with_gap(b, x_lo, x_hi, min_gap)
    }

    fn from_sorted_with_gap(b: Vec<T>, x_lo: T, x_hi: T, min_gap: T) -> Result<Self, Error> {
        let mut h = Vec::with_capacity(b.len() + 1);
        let mut prev = x_lo;
        for &v in &b {
            h.push(v - prev);
            prev = v;
        }
        h.push(x_hi - prev);
        let p = Partition {
            x_lo,
            x_hi,
            b,
            h,
            min_gap,
        };
        p.validate()?;
        Ok(p)
    }

    /// Checks all structural invariants; used after every mutation path.
    pub fn validate(&self) -> Result<(), Error> {
        if self.min_gap <= T::zero() {
            return Err(Error::InfeasibleMinGap {
                n: self.n(),
                min_gap: self.min_gap.to_f64().unwrap_or(f64::NAN),
                span: self.span().to_f64().unwrap_or(f64::NAN),
            });
        }
        let mut prev = self.x_lo;
        for (i, &v) in self.b.iter().enumerate() {
            if !(v > prev) || !(v < self.x_hi) {
                return Err(Error::UnorderedBreakpoints { index: i });
            }
            prev = v;
        }
        // Gap arithmetic carries absolute rounding at coordinate scale,
        // so the tolerance needs an absolute term besides the relative one.
        let scale = self.x_lo.abs().max(self.x_hi.abs());
        let tol = self.min_gap * real::<T>(1e-12) + scale * T::epsilon() * real::<T>(8.0);
        for (i, &g) in self.h.iter().enumerate() {
            if g < self.min_gap - tol {
                return Err(Error::UnorderedBreakpoints {
                    index: i.min(self.n().saturating_sub(1)),
                });
            }
        }
        Ok(())
    }

    /// Number of interior breakpoints.
    pub fn n(&self) -> usize {
        self.b.len()
    }

    pub fn x_lo(&self) -> T {
        self.x_lo
    }

    pub fn x_hi(&self) -> T {
        self.x_hi
    }

    pub fn span(&self) -> T {
        self.x_hi - self.x_lo
    }

    pub fn min_gap(&self) -> T {
        self.min_gap
    }

    /// Interior breakpoints `b_1..b_n`.
    pub fn breakpoints(&self) -> &[T] {
        &self.b
    }

    /// All `n + 1` gaps `h_0..h_n`, including the two boundary gaps.
    pub fn gaps(&self) -> &[T] {
        &self.h
    }

    /// The `n` gaps `h_1..h_n` that follow each interior breakpoint; these
    /// are the subinterval lengths entering the structured factorizations.
    pub fn inner_gaps(&self) -> &[T] {
        &self.h[1..]
    }

    /// Endpoints of subinterval `k` in `0..=n`, i.e. `[b_k, b_{k+1}]` with
    /// the boundary conventions.
    pub fn subinterval(&self, k: usize) -> (T, T) {
        let lo = if k == 0 { self.x_lo } else { self.b[k - 1] };
        let hi = if k == self.b.len() {
            self.x_hi
        } else {
            self.b[k]
        };
        (lo, hi)
    }

    /// All panel boundaries `x_lo, b_1, ..., b_n, x_hi`.
    pub fn nodes(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.b.len() + 2);
        v.push(self.x_lo);
        v.extend_from_slice(&self.b);
        v.push(self.x_hi);
        v
    }

    /// Re-projects a raw candidate vector with this partition's interval
    /// and minimum gap; the step taken by the damped solvers.
    pub fn project_step(&self, raw: &[T]) -> Result<Self, Error> {
        Self::project_ordered(raw, self.x_lo, self.x_hi, self.min_gap)
    }

    /// Returns a copy with a different minimum gap, re-projecting so the
    /// invariants hold for the new gap.
    pub fn with_min_gap(&self, min_gap: T) -> Result<Self, Error> {
        Self::project_ordered(&self.b, self.x_lo, self.x_hi, min_gap)
    }

    /// Merges additional sorted-or-not points into the breakpoint vector.
    /// Returns the new partition and, for each inserted point, its index in
    /// the merged vector. Points closer than `min_gap` to an existing
    /// neighbour are skipped.
    pub fn insert_points(&self, points: &[T]) -> Result<(Self, Vec<usize>), Error> {
        let mut merged = self.b.clone();
        let mut accepted: Vec<T> = Vec::new();
        for &p in points {
            let pos = merged.partition_point(|&v| v < p);
            let left = if pos == 0 { self.x_lo } else { merged[pos - 1] };
            let right = if pos == merged.len() {
                self.x_hi
            } else {
                merged[pos]
            };
            if p - left < self.min_gap || right - p < self.min_gap {
                continue;
            }
            merged.insert(pos, p);
            accepted.push(p);
        }
        let new = Self::from_sorted_with_gap(merged, self.x_lo, self.x_hi, self.min_gap)?;
        let indices = accepted
            .iter()
            .map(|&p| new.b.partition_point(|&v| v < p))
            .collect();
        Ok((new, indices))
    }
}

fn check_interval<T: Real>(x_lo: T, x_hi: T) -> Result<(), Error> {
    if x_lo < x_hi {
        Ok(())
    } else {
        Err(Error::DegenerateInterval {
            x_lo: x_lo.to_f64().unwrap_or(f64::NAN),
            x_hi: x_hi.to_f64().unwrap_or(f64::NAN),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_three_on_unit_interval() {
        let p = Partition::<f64>::uniform(3, 0.0, 1.0).unwrap();
        assert_eq!(p.breakpoints(), &[0.25, 0.5, 0.75]);
        for &g in p.gaps() {
            assert!((g - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_gaps_sum_to_span() {
        for n in [1usize, 7, 100, 1000] {
            let p = Partition::<f64>::uniform(n, -1.0, 1.0).unwrap();
            let total: f64 = p.gaps().iter().sum();
            assert!((total - 2.0).abs() < 1e-12);
            assert_eq!(p.gaps().len(), n + 1);
            assert_eq!(p.inner_gaps().len(), n);
        }
    }

    #[test]
    fn uniform_rejects_degenerate_interval() {
        assert!(matches!(
            Partition::<f64>::uniform(3, 1.0, 1.0),
            Err(Error::DegenerateInterval { .. })
        ));
    }

    #[test]
    fn project_sorts_and_clamps() {
        let p = Partition::project_ordered(&[0.7, 0.2, 0.2000001], 0.0, 1.0, 1e-3).unwrap();
        let b = p.breakpoints();
        assert_eq!(b.len(), 3);
        assert!(b[0] < b[1] && b[1] < b[2]);
        assert!((b[1] - b[0]) >= 1e-3 - 1e-15);
    }

    #[test]
    fn project_splits_exact_tie_symmetrically() {
        let p = Partition::<f64>::project_ordered(&[0.5, 0.5], 0.0, 1.0, 0.01).unwrap();
        assert!((p.breakpoints()[0] - 0.495).abs() < 1e-15);
        assert!((p.breakpoints()[1] - 0.505).abs() < 1e-15);
    }

    #[test]
    fn project_pulls_exterior_point_inside() {
        let p = Partition::<f64>::project_ordered(&[-0.2, 0.4], 0.0, 1.0, 0.01).unwrap();
        assert!((p.breakpoints()[0] - 0.01).abs() < 1e-15);
        assert!((p.breakpoints()[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn project_is_identity_on_valid_input() {
        let raw = [0.1, 0.30000000001, 0.9];
        let p = Partition::project_ordered(&raw, 0.0, 1.0, 1e-4).unwrap();
        assert_eq!(p.breakpoints(), &raw);
    }

    #[test]
    fn project_rejects_overfull_interval() {
        let raw = vec![0.5; 30];
        assert!(matches!(
            Partition::project_ordered(&raw, 0.0, 1.0, 0.1),
            Err(Error::InfeasibleMinGap { .. })
        ));
    }

    #[test]
    fn from_sorted_rejects_disorder() {
        assert!(Partition::from_sorted(vec![0.5, 0.4], 0.0, 1.0).is_err());
        assert!(Partition::from_sorted(vec![0.0, 0.4], 0.0, 1.0).is_err());
        assert!(Partition::from_sorted(vec![0.4, 1.0], 0.0, 1.0).is_err());
    }

    #[test]
    fn subintervals_cover_interval() {
        let p = Partition::<f64>::uniform(4, 0.0, 2.0).unwrap();
        let (lo0, _) = p.subinterval(0);
        let (_, hi_last) = p.subinterval(4);
        assert_eq!(lo0, 0.0);
        assert_eq!(hi_last, 2.0);
        for k in 0..=4 {
            let (lo, hi) = p.subinterval(k);
            assert!(lo < hi);
        }
    }

    #[test]
    fn insert_points_skips_collisions() {
        let p = Partition::project_ordered(&[0.25, 0.5], 0.0, 1.0, 0.05).unwrap();
        let (q, idx) = p.insert_points(&[0.375, 0.251, 0.9]).unwrap();
        assert_eq!(q.n(), 4);
        assert_eq!(idx.len(), 2);
        assert_eq!(q.breakpoints(), &[0.25, 0.375, 0.5, 0.9]);
    }

    proptest! {
        #[test]
        fn projection_always_yields_valid_partition(
            raw in proptest::collection::vec(-2.0f64..3.0, 1..40)
        ) {
            let p = Partition::project_ordered(&raw, 0.0, 1.0, 1e-6).unwrap();
            prop_assert!(p.validate().is_ok());
            prop_assert_eq!(p.n(), raw.len());
            let total: f64 = p.gaps().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }

        #[test]
        fn projection_is_idempotent(
            raw in proptest::collection::vec(0.0f64..1.0, 1..20)
        ) {
            let p = Partition::project_ordered(&raw, 0.0, 1.0, 1e-6).unwrap();
            let q = Partition::project_ordered(p.breakpoints(), 0.0, 1.0, 1e-6).unwrap();
            prop_assert_eq!(p.breakpoints(), q.breakpoints());
        }
    }
}
