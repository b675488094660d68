//! Encoder-decoder with one reconstruction head per feature, input masking,
//! the reconstruction loss and stage-1 pre-training.

mod checkpoint;
mod forward;
mod loss;
mod mask;
mod params;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, CheckpointMeta};
pub use forward::RowView;
pub use loss::{
    forward_latent, loss_and_grad, mlm_loss, reconstruct, weighted_mlm_loss, LatentBatch, MlmLoss, Reconstruction,
    RowWeights,
};
pub use mask::{apply_mask, MaskedBatch, Rows};
pub use params::{init_model, EncoderVariant, ModelParams, Trainable, DEFAULT_LATENT_DIM};
pub use train::{pretrain_erm, ModelConfig, TrainConfig, DEFAULT_MASK_RATE};

pub(crate) use forward::Scratch;
pub(crate) use train::fit;

#[cfg(test)]
mod tests;
