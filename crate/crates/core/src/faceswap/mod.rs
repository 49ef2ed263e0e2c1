//! Identity-injection face swapping with a two-scale adversarial critic.

mod losses;
mod model;
mod train;

pub use losses::{
    adversarial_losses, identity_loss, lsgan_discriminator_loss, lsgan_generator_loss, reconstruction_loss,
    swap_total_loss, weak_feature_matching, SwapLossComponents, SwapLossWeights,
};
pub use model::{SwapConfig, SwapModel, DISC_PREFIXES, GEN_PREFIX, ID_PREFIX, MODULE};
pub use train::{train_faceswap, FaceSet, FaceSwapTrainConfig};
