//! Differentiable operations. Each op computes its value eagerly and records
//! an adjoint closure on the tape.

mod conv;
mod elementwise;
mod linalg;
mod norm;
mod reduce;
mod shape;

pub use conv::{conv2d_forward, Padding};
pub(crate) use conv::reflect_index as reflect;
pub use reduce::PoolMode;
pub use shape::{permute_indices, pixel_shuffle_indices};

use crate::real::Real;

/// Constant in the tensor's scalar type.
#[inline(always)]
pub(crate) fn c<T: Real>(v: f64) -> T {
    T::from_f64(v)
}
