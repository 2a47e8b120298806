//! Tensor substrate: dense tensors, the differentiation tape, the optimizer
//! and learning-rate schedule, gradient checking and seeded randomness.

pub mod gradcheck;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use gradcheck::{evaluate_loss, evaluate_with_gradients, finite_difference_check, Evaluation, GradientReport};
pub use optim::{cosine_warmup_lr, LrSchedule, Parameter, SgdMomentum};
pub use tape::{Gradients, Tape, Var, LN_EPS};
pub use tensor::Tensor;
