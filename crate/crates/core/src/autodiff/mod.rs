//! Reverse-mode differentiation and its finite-difference oracle.

pub mod gradcheck;
pub mod ops;
pub mod tape;

pub use gradcheck::{finite_diff_check, relative_error, ProbeResult};
pub use tape::{Gradients, Primitive, Tape, Var};
