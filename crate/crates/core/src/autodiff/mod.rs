//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod gradcheck;
pub mod kernels;
mod tape;

pub use gradcheck::finite_difference_check;
pub use kernels::{ConvGeom, PoolGeom};
pub use tape::{Gradients, Primitive, Tape, Var};
