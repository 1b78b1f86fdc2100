//! Minimal differentiable compute backend: dense tensors, the operators the
//! denoiser and encoders need, reverse-mode gradients and Adam.

pub mod gradcheck;
mod kernels;
mod optim;
mod tape;
mod tensor;

pub use optim::{adam_step, AdamConfig, Bound, ParamId, ParamStore, Parameter};
pub use tape::{concat, Activation, Gradients, Tape, Var};
pub use tensor::Tensor;
