//! Scalar abstraction shared by the numeric kernels.
//!
//! Distances, probability blends, the softmax classifier and the evaluation
//! metrics are written against [`Scalar`] so they run on `f32` or `f64`.
//! Pipeline-level records (staypoints, priors, itineraries) are fixed to `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

pub trait Scalar: Float + FromPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static {
    /// Lossless-enough conversion from an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Normalizes `v` in place so it sums to one. Returns the pre-normalization sum.
///
/// A vector with zero (or non-finite) mass is left untouched.
pub fn normalize_in_place<F: Scalar>(v: &mut [F]) -> F {
    let total: F = v.iter().copied().sum();
    if total > F::zero() && total.is_finite() {
        for x in v.iter_mut() {
            *x = *x / total;
        }
    }
    total
}

/// Returns true when every entry is non-negative and the entries sum to one within `tol`.
pub fn is_distribution<F: Scalar>(v: &[F], tol: F) -> bool {
    if v.iter().any(|x| *x < F::zero() || !x.is_finite()) {
        return false;
    }
    let total: F = v.iter().copied().sum();
    (total - F::one()).abs() <= tol
}
