use std::cmp::Ordering;
use std::fmt::{Debug, Display};

use num_traits::{Float, NumAssign};

/// Floating-point scalar the whole crate is generic over.
///
/// `c` converts an `f64` constant into the scalar type; `as_f64` goes the
/// other way (used by serialization, which always stores f64 payloads).
/// `total_order` must be a total order consistent with `==` on finite values;
/// it drives the canonical accumulation orders that make rule summations
/// independent of rule ordering.
pub trait Scalar:
    Float + NumAssign + Debug + Display + Default + Send + Sync + 'static
{
    fn c(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn total_order(&self, other: &Self) -> Ordering;
}

impl Scalar for f64 {
    #[inline]
    fn c(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn total_order(&self, other: &Self) -> Ordering {
        self.total_cmp(other)
    }
}

impl Scalar for f32 {
    #[inline]
    fn c(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn total_order(&self, other: &Self) -> Ordering {
        self.total_cmp(other)
    }
}
