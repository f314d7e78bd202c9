//! Diffusion-based inverse design.
//!
//! A denoising diffusion model is trained on designs visited by ordinary
//! optimizers ([`baselines`], [`datagen`]), then sampled with energy or
//! classifier-free guidance ([`guidance`]) and particle search over its base
//! distribution ([`psample`]). Designs are scored by [`energy::EnergyModel`],
//! which rolls them out in the `fluidsim` simulator.

pub mod baselines;
pub mod datagen;
pub mod diffusion;
pub mod energy;
pub mod guidance;
pub mod harness;
pub mod psample;
pub mod seeds;

use adcore::AdError;
use fluidsim::SimError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error("time {0} outside [0, 1]")]
    TimeOutOfRange(f64),
    #[error("alpha({t}) = {alpha:e} is too small to estimate x0")]
    AlphaTooSmall { t: f64, alpha: f64 },
    #[error("non-finite sampler state at step {step}")]
    NonFiniteSample { step: usize },
    #[error("non-finite cost gradient")]
    NonFiniteGradient,
    #[error("linear-norm guidance at t = {t} scaled eps by {ratio}, above 1 + lambda = {}", 1.0 + lambda)]
    GuidanceBound { t: f64, ratio: f64, lambda: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("every particle failed to evaluate")]
    AllParticlesFailed,
    #[error("{0}")]
    Unsupported(&'static str),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("{0}")]
    Missing(String),
    #[error("evaluation accounting: {0}")]
    Accounting(String),
    #[error("plot: {0}")]
    Plot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
