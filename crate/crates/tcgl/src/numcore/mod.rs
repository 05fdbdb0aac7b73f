//! Dense-tensor arithmetic with reverse-mode differentiation, an SGD
//! optimizer, and a finite-difference gradient oracle.

pub mod gradcheck;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use gradcheck::grad_check;
pub use optim::{sgd_step, OptimizerState};
pub use tape::{ElemKind, Gradients, Tape, Var};
pub use tensor::Tensor;

/// Norm threshold under which l2_normalize reports a degenerate input.
pub const EPS_NORM: f64 = 1e-12;
