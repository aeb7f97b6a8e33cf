//! Tensors, seeded randomness and the reverse-mode differentiation tape.

pub mod gradcheck;
pub mod ops;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use gradcheck::{finite_diff_check, GradCheck};
pub use rng::{counter_uniform, Rng, Stream};
pub use tape::{grad_fn, GradRule, Gradients, Tape, Var};
pub use tensor::{center_crop_starts, DType, Element, ReduceOp, Tensor};
