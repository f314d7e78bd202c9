//! Variance-preserving diffusion over designs: schedule, denoisers, training
//! and samplers.

mod checkpoint;
mod denoiser;
mod mlp;
mod sampler;
mod schedule;
mod train;

pub use checkpoint::{Checkpoint, Standardizer, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use denoiser::{Conditioning, Denoiser, DiracDenoiser, FnDenoiser, StandardNormalDenoiser};
pub use mlp::{time_embedding, Mlp, MlpConfig, NetDenoiser, TIME_FEATURES};
pub use sampler::{ode_sample, ode_step, sde_sample, sde_sample_from, standard_normal, time_grid};
pub use schedule::{eps_from_score, estimate_x0, perturb, score_from_eps, NoiseSchedule, MIN_ALPHA};
pub use train::{
    draw_dsm_batch, dsm_loss, dsm_loss_and_grad, train_denoiser, DsmBatch, TrainConfig, TrainedDenoiser, TrainingSet,
};

pub(crate) use denoiser::rows;
