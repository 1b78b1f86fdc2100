//! Denoising diffusion: schedule, forward process, training and sampling.

mod model;
mod sample;
mod schedule;
mod train;

pub use model::{ModelCheckpoint, ModelConfig, CHECKPOINT_MAGIC};
pub use sample::{reverse_step, sample, sample_with};
pub use schedule::{
    forward_sample, forward_step, linear_schedule, noise_loss, sigma_variant, NoiseSchedule,
    SigmaMode,
};
pub use train::{train, TrainConfig};
