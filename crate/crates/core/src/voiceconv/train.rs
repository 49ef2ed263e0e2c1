use avatarkit_tensor::{seeded_rng, Adam, Array, Graph, Scalar, Session};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::prosody::{convert_f0, interpolate_prosody, SpeakerProfile};
use super::synth::{speaker_embedding, SynthInput, Synthesis, SynthesizerConfig, SynthesizerModel};
use super::vocoder::toy_vocoder;
use crate::error::{invalid, Result};
use crate::recognizer::{RecognizerModel, DOWNSAMPLE};
use crate::syndata::{ProsodyTrack, SyntheticClip};
use crate::train::{check_grads, TrainLog};

/// Repeats each BNF row `factor` times and trims to `len` rows.
pub fn upsample_bnf<T: Scalar>(bnf: &Array<T>, factor: usize, len: usize) -> Array<T> {
    let d = bnf.shape()[1];
    let rows = bnf.shape()[0];
    let mut out = Vec::with_capacity(len * d);
    for i in 0..len {
        let src = (i / factor).min(rows - 1);
        out.extend_from_slice(&bnf.data()[src * d..(src + 1) * d]);
    }
    Array::new(&[len, d], out)
}

/// BNF from the recognizer, brought back to the audio frame rate.
pub fn bnf_at_audio_rate<T: Scalar>(recognizer: &RecognizerModel<T>, audio: &Array<T>) -> Result<Array<T>> {
    let bnf = recognizer.extract_bnf(audio)?;
    Ok(upsample_bnf(&bnf, DOWNSAMPLE, audio.shape()[0]))
}

fn check_compatible<T: Scalar>(recognizer: &RecognizerModel<T>, synth: &SynthesizerModel<T>) -> Result<()> {
    if recognizer.cfg.bottleneck != synth.cfg.bnf_dim {
        return Err(invalid(format!(
            "recognizer bottleneck is {} wide but voiceconv synthesizer expects bnf_dim {}",
            recognizer.cfg.bottleneck, synth.cfg.bnf_dim
        )));
    }
    Ok(())
}

/// Everything a conversion produced, for inspection and tests.
#[derive(Clone, Debug)]
pub struct Conversion<T> {
    pub logf0: Vec<T>,
    pub voiced: Vec<bool>,
    pub synthesis: Synthesis<T>,
    pub waveform: Vec<T>,
}

/// BNF extraction, prosody interpolation and log-F0 transfer, spectral
/// synthesis for the target speaker, then vocoding.
pub fn convert_voice<T: Scalar>(
    source_audio: &Array<T>,
    source_prosody: &ProsodyTrack<T>,
    source: &SpeakerProfile,
    target: &SpeakerProfile,
    recognizer: &RecognizerModel<T>,
    synth: &SynthesizerModel<T>,
) -> Result<Conversion<T>> {
    check_compatible(recognizer, synth)?;
    if source_prosody.len() != source_audio.shape()[0] {
        return Err(invalid(format!(
            "prosody has {} frames, audio {}",
            source_prosody.len(),
            source_audio.shape()[0]
        )));
    }
    let bnf = bnf_at_audio_rate(recognizer, source_audio)?;
    let (logf0, voiced) = interpolate_prosody(source_prosody)?;
    let logf0 = convert_f0(&logf0, source, target)?;
    let speaker = speaker_embedding(synth, target)?;
    let synthesis = synth.synthesize(&SynthInput { bnf: &bnf, logf0: &logf0, voiced: &voiced, speaker: &speaker })?;
    let waveform = toy_vocoder(&synthesis.spectra);
    Ok(Conversion { logf0, voiced, synthesis, waveform })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VcTrainConfig {
    pub model: SynthesizerConfig,
    pub steps: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for VcTrainConfig {
    fn default() -> Self {
        Self { model: SynthesizerConfig::default(), steps: 400, lr: 3e-3, clip_norm: 1.0, seed: 13 }
    }
}

/// Training example: recognizer BNF, the clip's own prosody and speaker,
/// and its spectra as target.
pub struct VcExample<T> {
    pub bnf: Array<T>,
    pub logf0: Vec<T>,
    pub voiced: Vec<bool>,
    pub speaker: Vec<f64>,
    pub target: Array<T>,
}

impl<T: Scalar> VcExample<T> {
    pub fn from_clip(clip: &SyntheticClip<T>, recognizer: &RecognizerModel<T>, num_speakers: usize) -> Result<Self> {
        if clip.speaker_id >= num_speakers {
            return Err(invalid(format!("clip speaker {} outside {num_speakers} speakers", clip.speaker_id)));
        }
        let (logf0, voiced) = interpolate_prosody(&clip.prosody)?;
        let mut speaker = vec![0.0; num_speakers];
        speaker[clip.speaker_id] = 1.0;
        Ok(Self { bnf: bnf_at_audio_rate(recognizer, &clip.audio)?, logf0, voiced, speaker, target: clip.audio.clone() })
    }

    pub fn input(&self) -> SynthInput<'_, T> {
        SynthInput { bnf: &self.bnf, logf0: &self.logf0, voiced: &self.voiced, speaker: &self.speaker }
    }
}

pub fn train_vc<T: Scalar>(
    clips: &[SyntheticClip<T>],
    recognizer: &RecognizerModel<T>,
    cfg: &VcTrainConfig,
) -> Result<(SynthesizerModel<T>, TrainLog)> {
    if clips.is_empty() {
        return Err(invalid("voice-conversion training needs at least one clip"));
    }
    let mut model = SynthesizerModel::<T>::new(cfg.model.clone())?;
    check_compatible(recognizer, &model)?;
    let examples =
        clips.iter().map(|c| VcExample::from_clip(c, recognizer, cfg.model.num_speakers)).collect::<Result<Vec<_>>>()?;
    let mut opt = Adam::all(&model.store, cfg.lr);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = seeded_rng(cfg.seed);
    let mut log = TrainLog::default();
    for step in 0..cfg.steps {
        if step % examples.len() == 0 {
            order.shuffle(&mut rng);
        }
        let ex = &examples[order[step % examples.len()]];
        let g = Graph::new();
        let s = Session::new(&g, &model.store);
        let loss = model.loss_var(&s, &ex.input(), &ex.target)?;
        log.record("synthesis", step, loss.item().f64())?;
        let mut grads = s.param_grads(&g.backward(loss));
        check_grads(&grads, "synthesis", step)?;
        grads.clip_norm(cfg.clip_norm);
        drop(s);
        opt.step(&mut model.store, &grads);
        if step % 50 == 0 {
            log::info!("voiceconv step {step}: loss {:.4}", loss.item().f64());
        }
    }
    log.steps = cfg.steps;
    Ok((model, log))
}
