//! Reverse-mode automatic differentiation over dense n-d arrays.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it in reverse from a scalar root. Trainable arrays live in a
//! [`ParamStore`] and enter a tape through [`Tape::param`]; the resulting
//! gradients feed [`Adam`].
//!
//! All numeric code is generic over [`Real`] so the same graph can be run in
//! `f32` for training and `f64` for finite-difference checks.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod params;
pub mod real;
pub mod tape;
pub mod tensor;

pub use crate::adam::{Adam, AdamConfig};
pub use crate::error::{NnError, Result};
pub use crate::layers::ConvLayer;
pub use crate::params::{ParamId, ParamStore};
pub use crate::real::Real;
pub use crate::tape::{Tape, Var};
pub use crate::tensor::Tensor;
