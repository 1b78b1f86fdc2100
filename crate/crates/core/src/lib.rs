mod binio;
pub mod compute;
pub mod conditions;
pub mod dataset;
pub mod denoiser;
pub mod diffusion;
pub mod encoders;
mod error;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod render;
pub mod rng;
mod scalar;
pub mod scenario;
pub mod selection;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = compute::Tensor<f32>;
pub type Tensor64 = compute::Tensor<f64>;
pub type Tape32 = compute::Tape<f32>;
pub type Tape64 = compute::Tape<f64>;
pub type ParamStore32 = compute::ParamStore<f32>;
pub type ParamStore64 = compute::ParamStore<f64>;
/// Single precision is what the command line trains and stores.
pub type Model32 = diffusion::ModelCheckpoint<f32>;
/// Double precision, used for gradient checks.
pub type Model64 = diffusion::ModelCheckpoint<f64>;
