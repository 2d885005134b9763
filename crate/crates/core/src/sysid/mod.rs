//! Encoder/decoder models, training losses and the joint training loop.

mod config;
mod decoder;
mod encoder;
mod losses;
mod model;
mod train;

pub use config::{config_diff, default_schedule, Ablation, LossWeights, TrainConfig};
pub use decoder::{Component, Decoder, DecoderKind, DecoderTrace, KeypointDecoder, KeypointMap, KEYPOINT_SCALE};
pub use encoder::{EncodeMode, Encoder, Encoding};
pub use losses::{image_mse, latent_sequence_loss, loss_kl};
pub use model::{Batch, LossParts, Objective, RestPair, SysModel};
pub use train::{latent_scale, strided_frames, train, Checkpoint, EpochRecord};
