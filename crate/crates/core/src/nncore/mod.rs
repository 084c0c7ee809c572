//! Minimal neural-network core: tensors, dense transforms with explicit
//! reverse-mode gradients, optimizers, finite-difference checking and the
//! checkpoint container.

pub mod checkpoint;
pub mod dense;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use dense::{Activation, DenseLayer, ForwardCache, Role, TransformParams};
pub use gradcheck::{grad_check, Differentiable, GradCheckReport};
pub use optim::{OptimizerKind, OptimizerState};
pub use params::{average, ParamSet};
pub use tensor::Tensor;
