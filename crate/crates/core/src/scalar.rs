//! Floating-point scalar abstraction shared by every numeric routine.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar the laboratory is generic over (`f32` or `f64`).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` constant, saturating to infinity on overflow.
    fn c(x: f64) -> Self {
        Self::from_f64(x).unwrap_or_else(|| if x > 0.0 { Self::infinity() } else { Self::neg_infinity() })
    }

    /// Converts a count.
    fn from_usize_lossy(n: usize) -> Self {
        Self::c(n as f64)
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Tolerance for "sums to one": `1e-12` in double precision, a few ulps
    /// above machine epsilon otherwise.
    fn simplex_tol() -> Self {
        Self::c(1e-12).max(Self::epsilon() * Self::c(64.0))
    }

    /// `tol` scaled up when the scalar cannot resolve it.
    fn tol(tol: f64) -> Self {
        Self::c(tol).max(Self::epsilon() * Self::c(64.0))
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub(crate) fn norm2<T: Scalar>(v: &[T]) -> T {
    dot(v, v).sqrt()
}

/// Index of the first cumulative bucket exceeding `u`; falls back to the last
/// index with positive mass so that round-off never selects a zero entry.
pub(crate) fn sample_index<T: Scalar>(probs: &[T], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.iter().enumerate() {
        let p = p.as_f64();
        if p > 0.0 {
            last_positive = i;
            acc += p;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_index_skips_zero_mass() {
        let p = [0.0, 0.5, 0.0, 0.5];
        assert_eq!(sample_index(&p, 0.0), 1);
        assert_eq!(sample_index(&p, 0.49), 1);
        assert_eq!(sample_index(&p, 0.5), 3);
        assert_eq!(sample_index(&p, 0.999_999_999), 3);
        assert_eq!(sample_index(&[1.0f64, 0.0], 1.0), 0);
    }

    #[test]
    fn tolerances_follow_precision() {
        assert_eq!(f64::simplex_tol(), 1e-12);
        assert!(f32::simplex_tol() > 1e-6);
    }
}
