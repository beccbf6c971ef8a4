//! Scalar abstraction shared by the numerical modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point type the reconstruction code is generic over (`f32` or `f64`).
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Parametric crossings closer than this are treated as one crossing.
    const MERGE_TOL: Self;

    /// Converts an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {
    const MERGE_TOL: f32 = 1e-6;
}

impl Real for f64 {
    const MERGE_TOL: f64 = 1e-14;
}

/// Dense vector helpers used by the solvers.
pub mod vecops {
    use super::Real;

    #[inline]
    pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
        debug_assert_eq!(a.len(), b.len());
        a.iter().zip(b).map(|(&x, &y)| x * y).sum()
    }

    #[inline]
    pub fn norm<T: Real>(a: &[T]) -> T {
        dot(a, a).sqrt()
    }

    /// `y += alpha * x`
    #[inline]
    pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), y.len());
        for (yi, &xi) in y.iter_mut().zip(x) {
            *yi += alpha * xi;
        }
    }

    #[inline]
    pub fn scale<T: Real>(alpha: T, x: &mut [T]) {
        for xi in x.iter_mut() {
            *xi *= alpha;
        }
    }

    /// `a - b`
    pub fn sub<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
        a.iter().zip(b).map(|(&x, &y)| x - y).collect()
    }

    /// `‖a - b‖₂`
    pub fn dist<T: Real>(a: &[T], b: &[T]) -> T {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<T>()
            .sqrt()
    }
}
