//! Scalar abstraction for the differentiable pipeline.
//!
//! Everything numeric in the synthesis/energy path is written against [`Real`]
//! so the same code evaluates with plain floats (`f32`, `f64`) or with
//! [`crate::autodiff::Var`] when gradients are needed. Plain-float impls
//! delegate to `num_traits::Float`.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar type usable throughout the differentiable pipeline.
///
/// `from_f64`/`to_f64` bridge constants and primal values; for tape variables
/// `to_f64` reads the current primal value.
pub trait Real:
    Clone
    + Debug
    + PartialEq
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Sized
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(&self) -> f64;

    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn tanh(&self) -> Self;
    fn abs(&self) -> Self;
    fn powi(&self, n: i32) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
    fn is_finite(&self) -> bool {
        self.to_f64().is_finite()
    }
    fn max(&self, other: &Self) -> Self {
        if self.to_f64() >= other.to_f64() {
            self.clone()
        } else {
            other.clone()
        }
    }
    fn min(&self, other: &Self) -> Self {
        if self.to_f64() <= other.to_f64() {
            self.clone()
        } else {
            other.clone()
        }
    }
}

macro_rules! impl_real_for_float {
    ($t:ty) => {
        impl Real for $t {
            fn from_f64(v: f64) -> Self {
                num_traits::cast::<f64, $t>(v).expect("finite f64 converts to float scalar")
            }
            fn to_f64(&self) -> f64 {
                num_traits::cast::<$t, f64>(*self).expect("float scalar converts to f64")
            }
            fn exp(&self) -> Self {
                num_traits::Float::exp(*self)
            }
            fn ln(&self) -> Self {
                num_traits::Float::ln(*self)
            }
            fn sqrt(&self) -> Self {
                num_traits::Float::sqrt(*self)
            }
            fn tanh(&self) -> Self {
                num_traits::Float::tanh(*self)
            }
            fn abs(&self) -> Self {
                num_traits::Float::abs(*self)
            }
            fn powi(&self, n: i32) -> Self {
                num_traits::Float::powi(*self, n)
            }
        }
    };
}

impl_real_for_float!(f32);
impl_real_for_float!(f64);

// ── Small vector helpers over Real ──────────────────────────────────────

pub fn dot<S: Real>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = S::zero();
    for (x, y) in a.iter().zip(b) {
        acc = acc + x.clone() * y.clone();
    }
    acc
}

pub fn norm2<S: Real>(a: &[S]) -> S {
    dot(a, a).sqrt()
}

pub fn scale<S: Real>(a: &[S], s: &S) -> Vec<S> {
    a.iter().map(|x| x.clone() * s.clone()).collect()
}

pub fn add_vec<S: Real>(a: &[S], b: &[S]) -> Vec<S> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x.clone() + y.clone()).collect()
}

pub fn sub_vec<S: Real>(a: &[S], b: &[S]) -> Vec<S> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x.clone() - y.clone()).collect()
}

/// Lift an `f64` slice into any scalar type as constants.
pub fn lift<S: Real>(a: &[f64]) -> Vec<S> {
    a.iter().map(|&x| S::from_f64(x)).collect()
}

/// Lower a scalar slice to `f64` primal values.
pub fn lower<S: Real>(a: &[S]) -> Vec<f64> {
    a.iter().map(|x| x.to_f64()).collect()
}
