//! Tape-based reverse-mode differentiation for dense tensors.
//!
//! Operations are methods on [`Var`]; each records a backward closure on the
//! owning [`Tape`]. Everything is generic over [`Real`] so the same kernels
//! train in `f32` and are verified in `f64`.

pub mod broadcast;
pub mod gradcheck;
pub mod ops;
pub mod real;
pub mod tape;
pub mod tensor;

pub use gradcheck::{gradcheck, GradcheckOptions, GradcheckReport};
pub use ops::conv::{conv3d_reference, Conv3dOpts};
pub use ops::elementwise::{gelu, sigmoid};
pub use ops::norm::BatchStats;
pub use ops::shape::concat;
pub use ops::spectral::Fft3;
pub use real::Real;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
