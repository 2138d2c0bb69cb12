//! Numeric kernels behind the differentiable operators.

pub mod conv;
pub mod correlation;
