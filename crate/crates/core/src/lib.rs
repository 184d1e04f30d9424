//! Pyramidal dense attention network (PDAN) for lightweight single image
//! super-resolution, built on a small deterministic tensor engine.

pub mod arch;
pub mod autograd;
pub mod cost;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod tensor;
pub mod train;

pub use autograd::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use tensor::{ConvSpec, Scalar, Tensor};
