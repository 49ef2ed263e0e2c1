use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use avatarkit_tensor::{Array, Scalar};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{CheckpointPaths, PipelineConfig};
use super::text::text_to_phonemes;
use crate::checkpoint::Checkpoint;
use crate::dubbing::DubbingModel;
use crate::error::{invalid, io_err, Error, Result};
use crate::faceswap::SwapModel;
use crate::io;
use crate::recognizer::RecognizerModel;
use crate::syndata::{
    audio_window, render_face, synthesize_clip, AvatarTemplate, LanguageInventory, PoseJitter, SpeakerBank,
    SyntheticClip,
};
use crate::voiceconv::{convert_voice, speaker_stats, SpeakerProfile, SynthesizerModel, SAMPLE_RATE};

/// One avatar video to produce.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationRequest {
    pub text: String,
    pub language_tag: String,
    /// Built-in template, `t<index>`.
    pub template_id: String,
    pub target_speaker: usize,
    /// Face image whose identity replaces the template's.
    #[serde(default)]
    pub swap_source: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Per-request checkpoint overrides, by module name.
    #[serde(default)]
    pub checkpoints: BTreeMap<String, PathBuf>,
}

impl GenerationRequest {
    /// Short description used in error messages.
    pub fn echo(&self) -> String {
        format!("{{text: {:?}, language: {}, template: {}, speaker: {}}}", self.text, self.language_tag, self.template_id, self.target_speaker)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub module: String,
    pub step: u64,
    pub config_hash: String,
}

impl From<&Checkpoint> for CheckpointInfo {
    fn from(c: &Checkpoint) -> Self {
        Self { module: c.meta.module.clone(), step: c.meta.step, config_hash: c.meta.config_hash.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestEcho {
    pub text: String,
    pub language_tag: String,
    pub template_id: String,
    pub target_speaker: usize,
    pub swap_source: Option<String>,
}

/// What one generation wrote, as saved in `manifest.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub request: RequestEcho,
    pub phonemes: Vec<usize>,
    /// Global id range `[first, end)` of the request language.
    pub phoneme_range: [usize; 2],
    pub frames: usize,
    pub frame_files: Vec<String>,
    /// Converted audio feature frames driving the dubbing.
    pub audio_frames: usize,
    pub audio_per_video: usize,
    pub waveform: String,
    pub sample_rate: u32,
    pub samples: usize,
    /// `none` or `applied`.
    pub swap: String,
    /// Mouth opening of the text-to-speech stub per stub video frame.
    pub mouth_aperture: Vec<f64>,
    pub config_hash: String,
    pub checkpoints: BTreeMap<String, CheckpointInfo>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WAVEFORM_FILE: &str = "waveform.avwav";

/// Checkpoints a request needs, loaded and cross-checked.
pub struct PipelineModels<T> {
    pub recognizer: RecognizerModel<T>,
    pub synth: SynthesizerModel<T>,
    pub dubbing: DubbingModel<T>,
    pub faceswap: Option<SwapModel<T>>,
    pub info: BTreeMap<String, CheckpointInfo>,
}

impl<T: Scalar> PipelineModels<T> {
    pub fn load(paths: &CheckpointPaths, with_faceswap: bool) -> Result<Self> {
        let mut info = BTreeMap::new();
        let mut open = |name: &str| -> Result<Checkpoint> {
            let c = Checkpoint::load(paths.get(name)?)?;
            info.insert(name.to_string(), CheckpointInfo::from(&c));
            Ok(c)
        };
        let recognizer = RecognizerModel::from_checkpoint(&open("recognizer")?)?;
        let synth = SynthesizerModel::from_checkpoint(&open("voiceconv")?)?;
        let dubbing = DubbingModel::from_checkpoint(&open("dubbing")?)?;
        let faceswap = if with_faceswap { Some(SwapModel::from_checkpoint(&open("faceswap")?)?) } else { None };
        let models = Self { recognizer, synth, dubbing, faceswap, info };
        models.check()?;
        Ok(models)
    }

    /// Interface widths the stages hand to each other.
    pub fn check(&self) -> Result<()> {
        let mismatch = |field: &str, a: usize, b: usize| {
            invalid(format!("checkpoint field mismatch: {field} ({a} vs {b})"))
        };
        if self.recognizer.cfg.bottleneck != self.synth.cfg.bnf_dim {
            return Err(mismatch("recognizer.bottleneck vs voiceconv.bnf_dim", self.recognizer.cfg.bottleneck, self.synth.cfg.bnf_dim));
        }
        if self.synth.cfg.output_dim != self.dubbing.cfg.audio_dim {
            return Err(mismatch("voiceconv.output_dim vs dubbing.audio_dim", self.synth.cfg.output_dim, self.dubbing.cfg.audio_dim));
        }
        if let Some(fs) = &self.faceswap {
            if fs.cfg.resolution != self.dubbing.cfg.resolution {
                return Err(mismatch("faceswap.resolution vs dubbing.resolution", fs.cfg.resolution, self.dubbing.cfg.resolution));
            }
        }
        Ok(())
    }
}

/// Parses `t<index>` into a built-in template at `resolution`.
pub fn template_by_id(id: &str, resolution: usize) -> Result<AvatarTemplate> {
    id.strip_prefix('t')
        .and_then(|n| n.parse::<usize>().ok())
        .map(|i| AvatarTemplate::builtin(i, resolution))
        .ok_or_else(|| Error::Lookup(format!("template `{id}` is not a built-in template id (t0, t1, ...)")))
}

/// Pitch statistics of every corpus speaker, measured on stub utterances.
pub fn speaker_profiles<T: Scalar>(cfg: &PipelineConfig, bank: &SpeakerBank, num_speakers: usize) -> Result<Vec<SpeakerProfile>> {
    let inv = LanguageInventory::lookup("en")?;
    let phonemes: Vec<usize> = [0, 1, 2, 3, 4, 5, 6, 11, 0].iter().map(|&k| inv.id_of(k)).collect();
    let template = AvatarTemplate::builtin(0, 32);
    (0..bank.len())
        .map(|s| {
            let clips = (0..cfg.generate.calibration_clips)
                .map(|k| synthesize_clip::<T>(&template, &phonemes, bank, s, 0xca11 + k as u64, &cfg.corpus.clip))
                .collect::<Result<Vec<_>>>()?;
            speaker_stats(&clips.iter().collect::<Vec<_>>(), s, num_speakers)
        })
        .collect()
}

fn text_seed(base: u64, request: &GenerationRequest) -> u64 {
    let h = Sha256::new().chain_update(request.language_tag.as_bytes()).chain_update([0]).chain_update(request.text.as_bytes()).finalize();
    base ^ u64::from_le_bytes(h[..8].try_into().expect("8 bytes"))
}

/// In-memory result of the stage chain.
pub struct Generated<T> {
    pub frames: Array<T>,
    pub waveform: Vec<T>,
    pub manifest: Manifest,
}

/// Runs text -> phonemes -> stub speech -> voice conversion -> optional face
/// swap -> dubbing without touching the output directory.
pub fn run_stages<T: Scalar>(request: &GenerationRequest, cfg: &PipelineConfig, models: &PipelineModels<T>) -> Result<Generated<T>> {
    let stage = |name: &'static str| {
        let echo = request.echo();
        move |e: Error| Error::Stage { stage: name.to_string(), request: echo, source: Box::new(e) }
    };
    let res = models.dubbing.cfg.resolution;
    let r = cfg.corpus.clip.audio_per_video;

    let (inv, template) = (|| {
        let inv = LanguageInventory::lookup(&request.language_tag)?;
        let template = template_by_id(&request.template_id, res)?;
        if request.target_speaker >= cfg.corpus.speakers {
            return Err(invalid(format!("target speaker {} is not one of the {} speakers", request.target_speaker, cfg.corpus.speakers)));
        }
        if let Some(p) = &request.swap_source {
            if !p.is_file() {
                return Err(Error::Lookup(format!("swap source {} does not exist", p.display())));
            }
        }
        Ok((inv, template))
    })()
    .map_err(stage("validate"))?;

    let phonemes = text_to_phonemes(&request.text, &inv).map_err(stage("text"))?;

    let bank = SpeakerBank::new(cfg.corpus.speakers, cfg.corpus.seed);
    let clip: SyntheticClip<T> = {
        let mut seq = vec![inv.silence_id()];
        seq.extend_from_slice(&phonemes);
        seq.push(inv.silence_id());
        synthesize_clip(&template, &seq, &bank, cfg.generate.tts_speaker, text_seed(cfg.generate.seed, request), &cfg.corpus.clip)
    }
    .map_err(stage("tts"))?;

    let conversion = (|| {
        let profiles = speaker_profiles::<T>(cfg, &bank, models.synth.cfg.num_speakers)?;
        convert_voice(
            &clip.audio,
            &clip.prosody,
            &profiles[cfg.generate.tts_speaker],
            &profiles[request.target_speaker],
            &models.recognizer,
            &models.synth,
        )
    })()
    .map_err(stage("voiceconv"))?;
    let audio = conversion.synthesis.spectra;
    let n_audio = audio.shape()[0];
    let t_video = n_audio.div_ceil(r).max(1);

    // source video: the stub's posed frames, held on the last frame if the
    // converted speech runs longer
    let source: Vec<Array<T>> = (0..t_video).map(|t| clip.frame(t.min(clip.num_frames() - 1))).collect();
    let mut source = Array::concat0(&source);
    let mut reference = render_face::<T>(&template, 0.0, PoseJitter::zero()).map_err(stage("dubbing"))?;
    let swap = match (&request.swap_source, &models.faceswap) {
        (None, _) => "none",
        (Some(path), Some(fs)) => {
            (|| {
                let face = io::read_png::<T>(path)?;
                let faces = Array::concat0(&vec![face.clone(); t_video]);
                source = fs.swap_forward(&faces, &source)?;
                reference = fs.swap_forward(&face, &reference)?;
                Ok(())
            })()
            .map_err(stage("faceswap"))?;
            "applied"
        }
        (Some(_), None) => return Err(stage("faceswap")(invalid("no face-swap checkpoint loaded"))),
    };

    let window = models.dubbing.cfg.audio_window;
    let frames = (0..t_video)
        .map(|t| models.dubbing.dub_frame(&source.slice_axis0(t, 1), &reference, &audio_window(&audio, t, r, window)))
        .collect::<Result<Vec<_>>>()
        .map_err(stage("dubbing"))?;
    let frames = Array::concat0(&frames);

    let manifest = Manifest {
        request: RequestEcho {
            text: request.text.clone(),
            language_tag: request.language_tag.clone(),
            template_id: request.template_id.clone(),
            target_speaker: request.target_speaker,
            swap_source: request.swap_source.as_ref().map(|p| p.display().to_string()),
        },
        phonemes,
        phoneme_range: [inv.ids().start, inv.ids().end],
        frames: t_video,
        frame_files: (0..t_video).map(io::frame_name).collect(),
        audio_frames: n_audio,
        audio_per_video: r,
        waveform: WAVEFORM_FILE.to_string(),
        sample_rate: SAMPLE_RATE,
        samples: conversion.waveform.len(),
        swap: swap.to_string(),
        mouth_aperture: clip.mouth_aperture.iter().map(|a| a.f64()).collect(),
        config_hash: cfg.hash(),
        checkpoints: models.info.clone(),
    };
    Ok(Generated { frames, waveform: conversion.waveform, manifest })
}

fn partial_dir(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_else(|| "output".into());
    name.push(".partial");
    out.with_file_name(name)
}

/// Writes frames, waveform and manifest into `out` atomically: everything
/// goes to a sibling `.partial` directory that is renamed on success and
/// removed on failure. An existing `out` is replaced only if it holds a
/// previous manifest.
pub fn write_outputs<T: Scalar>(out: &Path, generated: &Generated<T>) -> Result<()> {
    let tmp = partial_dir(out);
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp).map_err(io_err(&tmp))?;
    }
    let write = || -> Result<()> {
        io::write_frames(&tmp, &generated.frames)?;
        io::write_waveform(&tmp.join(WAVEFORM_FILE), &generated.waveform, SAMPLE_RATE)?;
        let path = tmp.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&generated.manifest)?).map_err(io_err(&path))?;
        if out.exists() {
            if !out.join(MANIFEST_FILE).is_file() {
                return Err(invalid(format!("{} exists and is not a previous generation output", out.display())));
            }
            std::fs::remove_dir_all(out).map_err(io_err(out))?;
        }
        std::fs::rename(&tmp, out).map_err(io_err(out))
    };
    write().inspect_err(|_| {
        let _ = std::fs::remove_dir_all(&tmp);
    })
}

/// Checkpoint paths of a request: the config's, overridden per request.
pub fn request_paths(request: &GenerationRequest, cfg: &PipelineConfig) -> Result<CheckpointPaths> {
    let mut paths = cfg.checkpoints.clone();
    for (name, path) in &request.checkpoints {
        paths.set(name, path.clone())?;
    }
    Ok(paths)
}

/// Loads the request's checkpoints, runs every stage and writes the outputs.
pub fn generate<T: Scalar>(request: &GenerationRequest, cfg: &PipelineConfig) -> Result<Manifest> {
    let load = || PipelineModels::<T>::load(&request_paths(request, cfg)?, request.swap_source.is_some());
    let models = load().map_err(|e| Error::Stage { stage: "load".into(), request: request.echo(), source: Box::new(e) })?;
    generate_with(request, cfg, &models)
}

/// [`generate`] with already loaded models.
pub fn generate_with<T: Scalar>(request: &GenerationRequest, cfg: &PipelineConfig, models: &PipelineModels<T>) -> Result<Manifest> {
    let generated = run_stages(request, cfg, models)?;
    write_outputs(&request.output_dir, &generated)
        .map_err(|e| Error::Stage { stage: "write".into(), request: request.echo(), source: Box::new(e) })?;
    Ok(generated.manifest)
}
