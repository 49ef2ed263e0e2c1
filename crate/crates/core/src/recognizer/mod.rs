//! Hybrid CTC/attention phoneme recognizer and bottleneck-feature extractor.

mod ctc;
mod model;
mod train;

pub use ctc::{ctc_log_prob, ctc_nll, greedy_decode, min_frames};
pub use model::{normalize_utterance, HybridLossConfig, RecognizerConfig, RecognizerModel, DOWNSAMPLE, MODULE};
pub use train::{train_recognizer, RecognizerTrainConfig};
