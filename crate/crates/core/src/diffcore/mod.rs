//! Small dense differentiable toolkit: tensors, layers with hand-written
//! backward passes, Adam, checkpoints and a finite-difference checker.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use layers::{Activation, Cache, Layer, LayerNorm, Linear, SelfAttention};
pub use optim::{Adam, AdamConfig};
pub use tensor::Tensor2;
