//! Any-to-many voice conversion from bottleneck features, log-F0 transfer,
//! mixture-of-logistics attention and a toy vocoder.

mod mol;
mod prosody;
mod synth;
mod train;
mod vocoder;

pub use mol::{mol_attention, mol_attention_step, MIN_SCALE, MIXTURES};
pub use prosody::{convert_f0, interpolate_prosody, speaker_stats, voiced_moments, SpeakerProfile};
pub use synth::{speaker_embedding, SynthInput, Synthesis, SynthesizerConfig, SynthesizerModel, MODULE};
pub use train::{bnf_at_audio_rate, convert_voice, train_vc, upsample_bnf, Conversion, VcExample, VcTrainConfig};
pub use vocoder::{analyze, analyze_default, band_bin, band_frequency, toy_vocoder, HOP, SAMPLE_RATE};
