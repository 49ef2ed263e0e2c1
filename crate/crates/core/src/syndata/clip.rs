use avatarkit_tensor::{seeded_rng, Array, Scalar};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::phonemes::phoneme_info;
use super::template::{render_face, AvatarTemplate, PoseJitter, MAX_ROTATION_DEG, MAX_SHIFT_PX};
use super::voices::{phoneme_pattern, pitch_bump, SpeakerBank};
use super::AUDIO_DIM;
use crate::error::{invalid, Result};

/// Per-audio-frame log-F0 (log-Hz) and voicing. Unvoiced frames carry 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProsodyTrack<T> {
    pub logf0: Vec<T>,
    pub voiced: Vec<bool>,
}

impl<T: Scalar> ProsodyTrack<T> {
    pub fn new(logf0: Vec<T>, voiced: Vec<bool>) -> Result<Self> {
        if logf0.len() != voiced.len() {
            return Err(invalid(format!("prosody has {} values but {} flags", logf0.len(), voiced.len())));
        }
        Ok(Self { logf0, voiced })
    }

    pub fn len(&self) -> usize {
        self.logf0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logf0.is_empty()
    }

    pub fn voiced_values(&self) -> impl Iterator<Item = T> + '_ {
        self.logf0.iter().zip(&self.voiced).filter(|(_, &v)| v).map(|(&x, _)| x)
    }

    /// Frame-index resampling, used when a consumer runs at another rate.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            logf0: indices.iter().map(|&i| self.logf0[i]).collect(),
            voiced: indices.iter().map(|&i| self.voiced[i]).collect(),
        }
    }
}

/// Generation knobs shared by every clip of a corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClipOptions {
    /// Audio frames per video frame.
    pub audio_per_video: usize,
    /// Pose jitter as a fraction of the allowed maximum, in `[0, 1]`.
    pub jitter: f64,
    /// Std-dev of additive feature noise.
    pub noise: f64,
}

impl Default for ClipOptions {
    fn default() -> Self {
        Self { audio_per_video: 4, jitter: 0.5, noise: 0.01 }
    }
}

/// A paired audio/video clip with generative ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticClip<T> {
    pub template_id: String,
    pub speaker_id: usize,
    pub seed: u64,
    /// `[T, 3, H, W]` in `[0, 1]`.
    pub frames: Array<T>,
    /// `[T * r, AUDIO_DIM]` band energies.
    pub audio: Array<T>,
    pub phonemes: Vec<usize>,
    /// Phoneme id active at each audio frame.
    pub alignment: Vec<usize>,
    pub mouth_aperture: Vec<T>,
    pub prosody: ProsodyTrack<T>,
    pub poses: Vec<PoseJitter>,
    pub audio_per_video: usize,
}

impl<T: Scalar> SyntheticClip<T> {
    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn num_audio_frames(&self) -> usize {
        self.audio.shape()[0]
    }

    pub fn resolution(&self) -> usize {
        self.frames.shape()[3]
    }

    /// Frame `t` as `[1, 3, H, W]`.
    pub fn frame(&self, t: usize) -> Array<T> {
        let f = self.frames.index_axis0(t);
        let mut shape = vec![1];
        shape.extend_from_slice(f.shape());
        f.into_shape(&shape)
    }

    /// Audio window of `width` frames centred on video frame `t`.
    pub fn audio_window(&self, t: usize, width: usize) -> Array<T> {
        audio_window(&self.audio, t, self.audio_per_video, width)
    }
}

/// `width` consecutive audio frames centred on video frame `t` (edges
/// replicate the boundary frame).
pub fn audio_window<T: Scalar>(audio: &Array<T>, t: usize, audio_per_video: usize, width: usize) -> Array<T> {
    let n = audio.shape()[0] as isize;
    let d = audio.shape()[1];
    let centre = (t * audio_per_video + audio_per_video / 2) as isize;
    let start = centre - (width / 2) as isize;
    let mut out = Vec::with_capacity(width * d);
    for k in 0..width as isize {
        let i = (start + k).clamp(0, n - 1) as usize;
        out.extend_from_slice(&audio.data()[i * d..(i + 1) * d]);
    }
    Array::new(&[width, d], out)
}

/// Smoothing factor of the mouth aperture toward its per-phoneme target.
const APERTURE_RATE: f64 = 0.6;

/// Deterministic clip for a phoneme sequence spoken by `speaker_id`.
///
/// Timing, mouth motion and head pose depend on `seed` only; the audio
/// features and prosody additionally depend on the speaker.
pub fn synthesize_clip<T: Scalar>(
    template: &AvatarTemplate,
    phonemes: &[usize],
    speakers: &SpeakerBank,
    speaker_id: usize,
    seed: u64,
    opts: &ClipOptions,
) -> Result<SyntheticClip<T>> {
    if phonemes.is_empty() {
        return Err(invalid("phoneme sequence is empty"));
    }
    if opts.audio_per_video == 0 {
        return Err(invalid("audio_per_video must be at least 1"));
    }
    if !(0.0..=1.0).contains(&opts.jitter) {
        return Err(invalid(format!("jitter {} outside [0, 1]", opts.jitter)));
    }
    let voice = speakers.get(speaker_id)?;
    let infos = phonemes.iter().map(|&p| phoneme_info(p)).collect::<Result<Vec<_>>>()?;
    let r = opts.audio_per_video;

    let mut timing = seeded_rng(seed);
    let mut durations: Vec<usize> = phonemes.iter().map(|_| timing.random_range(1..=2)).collect();
    let total: usize = durations.iter().sum();
    if total < 2 {
        *durations.last_mut().expect("non-empty") += 2 - total;
    }
    let frame_targets: Vec<f64> = durations
        .iter()
        .zip(&infos)
        .flat_map(|(&d, info)| std::iter::repeat_n(info.aperture, d))
        .collect();
    let num_frames = frame_targets.len();

    let mut aperture = Vec::with_capacity(num_frames);
    let mut a = 0.0;
    for &target in &frame_targets {
        a += APERTURE_RATE * (target - a);
        aperture.push(a.clamp(0.0, 1.0));
    }

    let phases: [f64; 3] = std::array::from_fn(|_| timing.random_range(0.0..std::f64::consts::TAU));
    let poses: Vec<PoseJitter> = (0..num_frames)
        .map(|t| {
            let t = t as f64;
            PoseJitter {
                dx: opts.jitter * MAX_SHIFT_PX * 0.95 * (0.35 * t + phases[0]).sin(),
                dy: opts.jitter * MAX_SHIFT_PX * 0.95 * (0.27 * t + phases[1]).sin(),
                rotation_deg: opts.jitter * MAX_ROTATION_DEG * 0.95 * (0.31 * t + phases[2]).sin(),
            }
        })
        .collect();

    let mut frames = Vec::with_capacity(num_frames);
    for (t, &ap) in aperture.iter().enumerate() {
        frames.push(render_face::<T>(template, ap, poses[t])?.index_axis0(0));
    }
    let frames = Array::stack(&frames);

    // audio and prosody
    let mut voice_rng = seeded_rng(seed ^ (0x5eed_0000_0000 + speaker_id as u64 * 0x1_0001));
    let noise = Normal::new(0.0, opts.noise.max(0.0)).map_err(|e| invalid(e.to_string()))?;
    let num_audio = num_frames * r;
    let (w1, w2) = (voice_rng.random_range(0.05..0.15), voice_rng.random_range(0.15..0.35));
    let (p1, p2) = (voice_rng.random_range(0.0..6.28), voice_rng.random_range(0.0..6.28));
    let mut alignment = Vec::with_capacity(num_audio);
    let mut feats = Vec::with_capacity(num_audio * AUDIO_DIM);
    let mut logf0 = Vec::with_capacity(num_audio);
    let mut voiced = Vec::with_capacity(num_audio);
    let base = voice.base_f0_hz.ln();
    for (k, (&p, &d)) in phonemes.iter().zip(&durations).enumerate() {
        let pattern = phoneme_pattern(p);
        let len = d * r;
        for j in 0..len {
            let i = alignment.len();
            alignment.push(p);
            let env = 0.75 + 0.25 * (std::f64::consts::PI * (j as f64 + 0.5) / len as f64).sin();
            let contour = 0.8 * (w1 * i as f64 + p1).sin() + 0.6 * (w2 * i as f64 + p2).sin() - 0.02 * k as f64;
            let lf0 = base + voice.f0_spread * contour;
            let is_voiced = infos[k].voiced;
            let bump = if is_voiced { pitch_bump(lf0) } else { vec![0.0; AUDIO_DIM] };
            for b in 0..AUDIO_DIM {
                let v = (pattern[b] * env + bump[b]) * voice.color[b] + noise.sample(&mut voice_rng);
                feats.push(T::of(v.max(0.0)));
            }
            logf0.push(T::of(if is_voiced { lf0 } else { 0.0 }));
            voiced.push(is_voiced);
        }
    }

    Ok(SyntheticClip {
        template_id: template.template_id.clone(),
        speaker_id,
        seed,
        frames,
        audio: Array::new(&[num_audio, AUDIO_DIM], feats),
        phonemes: phonemes.to_vec(),
        alignment,
        mouth_aperture: aperture.into_iter().map(T::of).collect(),
        prosody: ProsodyTrack { logf0, voiced },
        poses,
        audio_per_video: r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syndata::LanguageInventory;

    fn setup() -> (AvatarTemplate, SpeakerBank, LanguageInventory) {
        (AvatarTemplate::builtin(0, 32), SpeakerBank::new(4, 1), LanguageInventory::lookup("en").unwrap())
    }

    #[test]
    fn clip_is_deterministic() {
        let (t, bank, inv) = setup();
        let ph: Vec<usize> = (1..6).map(|k| inv.id_of(k)).collect();
        let a = synthesize_clip::<f32>(&t, &ph, &bank, 1, 9, &ClipOptions::default()).unwrap();
        let b = synthesize_clip::<f32>(&t, &ph, &bank, 1, 9, &ClipOptions::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.num_frames() >= 2);
        assert_eq!(a.num_audio_frames(), a.num_frames() * 4);
        assert_eq!(a.prosody.len(), a.num_audio_frames());
        assert_eq!(a.mouth_aperture.len(), a.num_frames());
    }

    #[test]
    fn silence_keeps_mouth_closed() {
        let (t, bank, inv) = setup();
        let clip = synthesize_clip::<f64>(&t, &[inv.silence_id(); 4], &bank, 0, 3, &ClipOptions::default()).unwrap();
        assert!(clip.mouth_aperture.iter().all(|&a| a < 0.1));
        let single = synthesize_clip::<f64>(&t, &[inv.silence_id()], &bank, 0, 3, &ClipOptions::default()).unwrap();
        assert!(single.num_frames() >= 2);
    }

    #[test]
    fn speakers_share_mouth_but_not_audio() {
        let (t, bank, inv) = setup();
        let ph: Vec<usize> = [1, 2, 6, 3].iter().map(|&k| inv.id_of(k)).collect();
        let a = synthesize_clip::<f64>(&t, &ph, &bank, 0, 5, &ClipOptions::default()).unwrap();
        let b = synthesize_clip::<f64>(&t, &ph, &bank, 3, 5, &ClipOptions::default()).unwrap();
        assert_eq!(a.mouth_aperture, b.mouth_aperture);
        assert_eq!(a.frames, b.frames);
        assert_ne!(a.audio, b.audio);
    }

    #[test]
    fn unknown_speaker_and_empty_input() {
        let (t, bank, inv) = setup();
        assert!(matches!(
            synthesize_clip::<f32>(&t, &[inv.id_of(1)], &bank, 9, 0, &ClipOptions::default()),
            Err(crate::Error::Lookup(_))
        ));
        assert!(synthesize_clip::<f32>(&t, &[], &bank, 0, 0, &ClipOptions::default()).is_err());
    }

    #[test]
    fn window_is_centred_and_clamped() {
        let audio = Array::<f64>::from_f64(&[8, 1], &[0., 1., 2., 3., 4., 5., 6., 7.]);
        let w = audio_window(&audio, 0, 4, 9);
        assert_eq!(w.data(), &[0., 0., 0., 1., 2., 3., 4., 5., 6.]);
        let w = audio_window(&audio, 1, 4, 5);
        assert_eq!(w.data(), &[4., 5., 6., 7., 7.]);
    }
}
