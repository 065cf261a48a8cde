//! Dense arrays, the reverse-mode tape and numerical verification.
//!
//! Everything is generic over [`Scalar`] so the same model code runs in
//! `f32` for training and in `f64` when checking gradients against central
//! differences.

mod array;
pub mod gradcheck;
mod graph;
pub mod ops;

pub use array::Array;
pub use gradcheck::{grad_check, grad_check_with, GradCheckReport};
pub use graph::{GradTable, Graph, Var};

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

/// Floating-point element type of an [`Array`].
pub trait Scalar: Float + Debug + Default + Send + Sync + Sum + 'static {
    fn of(x: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
