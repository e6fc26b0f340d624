//! Scalar traits shared by the whole crate.
//!
//! Combinatorial quantities (metric values, `t` coordinates, cocycle sums)
//! only need field arithmetic and work over exact rationals. Anything that
//! takes an exponential or a logarithm needs [`Real`].

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, Num, Signed, ToPrimitive};

/// Field-like scalar: `f32`, `f64`, or an exact rational such as
/// [`num_rational::Rational64`].
pub trait Scalar: Clone + Debug + PartialOrd + Num + Signed + FromPrimitive + Send + Sync + 'static {
    fn two() -> Self {
        Self::one() + Self::one()
    }

    /// `2^{-m}` computed by repeated halving, exact for rationals.
    fn pow2_neg(m: usize) -> Self {
        let half = Self::one() / Self::two();
        let mut acc = Self::one();
        for _ in 0..m {
            acc = acc * half.clone();
        }
        acc
    }
}

impl<T> Scalar for T where T: Clone + Debug + PartialOrd + Num + Signed + FromPrimitive + Send + Sync + 'static {}

/// Floating-point scalar used by the transfer operators and the eigensolver.
pub trait Real: Scalar + Float + Copy + Sum + ToPrimitive + Display {
    /// Lossy conversion from `f64`, used for tolerances and configuration values.
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// `ln Σ exp(x_i)` with the usual max shift; `-inf` for an empty input.
pub fn log_sum_exp<S: Real>(values: impl IntoIterator<Item = S>) -> S {
    let values: Vec<S> = values.into_iter().collect();
    let max = values.iter().copied().fold(S::neg_infinity(), |a, b| if b > a { b } else { a });
    if max == S::neg_infinity() {
        return max;
    }
    let sum: S = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}
