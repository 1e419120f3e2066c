//! Minimal reverse-mode differentiable numerics: dense f64 tensors, a
//! recording tape, finite-difference gradient checks and Adam.

mod adam;
mod functional;
pub mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use functional::{argmax, cosine_similarity, cross_entropy_from_logits, dot, l2_norm, softmax};
pub use gradcheck::{check_gradients, check_gradients_masked, GradCheckReport};
pub use params::{Bound, Param, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

