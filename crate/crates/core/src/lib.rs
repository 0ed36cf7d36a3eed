//! Finite-horizon optimal control of switched linear systems obtained from
//! Koopman liftings, solved by Gibbs sampling with parallel tempering.
//!
//! The library is organized around a [`model::KoopmanModel`]: per-action
//! lifted dynamics matrices, a terminal cost row, an initial lifted state and
//! a horizon. The main engine lives in [`sampler`] and runs Gibbs variable
//! sweeps whose conditional distributions are evaluated with forward/backward
//! vector caches, so a full sweep costs one matrix-vector pass per action
//! candidate instead of a cost evaluation from scratch per candidate.
//! [`diagnostics`] provides the desk-scale machinery to verify the sampler
//! against exact enumeration (Boltzmann distributions, transition kernels,
//! balance residuals, mixing-time bounds). [`edmd`] fits models from
//! trajectory data, and [`baselines`] implements the projected-gradient and
//! genetic comparison optimizers.
//!
//! All numerics are generic over the scalar type via [`Scalar`]; `f64` is the
//! default choice and `f32` is available where memory bandwidth matters.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

pub mod baselines;
pub mod bench;
pub mod diagnostics;
pub mod edmd;
pub mod linalg;
pub mod model;
pub mod sampler;
pub mod synth;

/// Floating-point scalar usable throughout the library: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssignOps + Sum + Send + Sync + Debug + Display + 'static
{
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + NumAssignOps
        + Sum
        + Send
        + Sync
        + Debug
        + Display
        + 'static
{
}

/// Converts an `f64` constant into the working scalar type.
#[inline]
pub(crate) fn scalar<S: Scalar>(x: f64) -> S {
    S::from_f64(x).expect("f64 constant must convert to the scalar type")
}

pub type KoopmanModel64 = model::KoopmanModel<f64>;
pub type KoopmanModel32 = model::KoopmanModel<f32>;
pub type SolveResult64 = sampler::SolveResult<f64>;
pub type SolveResult32 = sampler::SolveResult<f32>;
