//! Text to talking-avatar video: phonemes, stub speech, voice conversion,
//! optional face swap and dubbing, written as numbered PNG frames, a raw
//! waveform and a JSON manifest.

mod batch;
mod config;
mod generate;
mod text;

pub use batch::{generate_batch, BatchOutcome, BatchSummary, RequestFile};
pub use config::{CheckpointPaths, GenerateConfig, PipelineConfig, DEFAULT_RESOLUTION};
pub use generate::{
    generate, generate_with, request_paths, run_stages, speaker_profiles, template_by_id, write_outputs, CheckpointInfo,
    GenerationRequest, Generated, Manifest, PipelineModels, RequestEcho, MANIFEST_FILE, WAVEFORM_FILE,
};
pub use text::text_to_phonemes;
