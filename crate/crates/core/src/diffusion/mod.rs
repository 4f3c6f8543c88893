//! Conditional denoising-diffusion estimation of SNR maps.

mod estimator;
mod schedule;
mod training;

pub use estimator::{
    build_denoiser_input, estimate_map, estimate_maps, masked_rmse, sample_conditional,
    sample_conditional_batch, train_step, Conditioning, Denoiser, DiffusionConfig, LossWeighting,
    Parametrization, TrainingExample,
};
pub use schedule::{q_sample, time_embedding, NoiseSchedule};
pub use training::train_denoiser;
