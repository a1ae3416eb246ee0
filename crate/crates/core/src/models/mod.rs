//! VAE model, objectives and the gated training step.

pub mod losses;
mod partition;
pub mod train;
mod vae;

pub use partition::PartitionSpec;
pub use train::{
    compute_gradients, finetune_decoder_step, gated_train_step, train_step_with, Gating, StepNoise, StepStats,
    TrainBatch,
};
pub use vae::{
    reparameterise, reparameterise_with, standard_normal, DipCovariance, KernelKind, LatentSample, MmdKernel,
    ModelConfig, VaeModel, Variant, LOGVAR_MAX, LOGVAR_MIN,
};
