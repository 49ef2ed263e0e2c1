//! Synthetic talking-avatar stack: phoneme recognition, voice conversion,
//! face swapping, audio-driven dubbing, evaluation metrics and an end-to-end
//! generation pipeline, all trained on procedurally generated data.
//!
//! Library code is generic over [`Scalar`]; the `*32` / `*64` aliases below
//! fix the precision.

pub mod adversarial;
pub mod checkpoint;
pub mod dubbing;
pub mod error;
pub mod faceswap;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod recognizer;
pub mod syndata;
pub mod train;
pub mod voiceconv;

pub use avatarkit_tensor::{Array, Scalar};
pub use checkpoint::Checkpoint;
pub use error::{CheckpointError, Error, Result};

pub type SyntheticClip32 = syndata::SyntheticClip<f32>;
pub type SyntheticClip64 = syndata::SyntheticClip<f64>;
pub type Corpus32 = syndata::Corpus<f32>;
pub type Corpus64 = syndata::Corpus<f64>;
pub type RecognizerModel32 = recognizer::RecognizerModel<f32>;
pub type RecognizerModel64 = recognizer::RecognizerModel<f64>;
pub type SynthesizerModel32 = voiceconv::SynthesizerModel<f32>;
pub type SynthesizerModel64 = voiceconv::SynthesizerModel<f64>;
pub type SwapModel32 = faceswap::SwapModel<f32>;
pub type SwapModel64 = faceswap::SwapModel<f64>;
pub type DubbingModel32 = dubbing::DubbingModel<f32>;
pub type DubbingModel64 = dubbing::DubbingModel<f64>;
pub type SyncScorer32 = dubbing::SyncScorer<f32>;
pub type SyncScorer64 = dubbing::SyncScorer<f64>;
