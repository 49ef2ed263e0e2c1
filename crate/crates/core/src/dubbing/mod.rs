//! Audio-driven dubbing: per-channel affine warps of reference features,
//! an inpainting decoder, and the perception, GAN and lip-sync objectives.

mod adaat;
mod losses;
mod model;
mod sync;
mod train;

pub use adaat::{adaat_transform, AdaATParams, ADAAT_PARAMS};
pub use losses::{
    dubbing_total_loss, gan_losses, lip_sync_loss, lsgan_discriminator_loss, lsgan_generator_loss, perception_loss,
    DubbingLossComponents, DubbingWeights, FeatureNet, IdentityNet, PerceptionNet,
};
pub use model::{DubbingConfig, DubbingModel, DubbingPass, DISC_PREFIX, GEN_PREFIX, MODULE};
pub use sync::{
    clip_score, clip_windows, mismatched_frame, reversal_accuracy, reversed_audio, sync_accuracy, train_sync_scorer, SyncConfig, SyncScorer, SyncTrainConfig,
    NEGATIVE_MIN_GAP, SYNC_MODULE,
};
pub use train::{check_scorer, dubbing_batch, train_dubbing, DubbingTrainConfig};
