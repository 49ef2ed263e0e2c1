//! Procedural faces, voices and paired audio/video clips.

mod clip;
mod corpus;
mod phonemes;
mod template;
mod voices;

pub use clip::{audio_window, synthesize_clip, ClipOptions, ProsodyTrack, SyntheticClip};
pub use corpus::{export_corpus, make_corpus, Corpus, CorpusSpec};
pub use phonemes::{describe, is_silence, language_tags, phoneme_info, vocab_size, LanguageInventory, PhonemeInfo, BLANK_ID};
pub use template::{render_face, AvatarTemplate, PoseJitter, Region, FACE_PARAMS, MAX_ROTATION_DEG, MAX_SHIFT_PX};
pub use voices::{phoneme_pattern, pitch_bump, SpeakerBank, SpeakerVoice};

/// Width of the band-energy audio features.
pub const AUDIO_DIM: usize = 29;
