use avatarkit_tensor::seeded_rng;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::phonemes::{is_silence, phoneme_info, BLANK_ID};
use super::AUDIO_DIM;
use crate::error::{Error, Result};

/// Acoustic identity of a synthetic speaker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerVoice {
    pub id: usize,
    pub base_f0_hz: f64,
    /// Standard deviation of the log-F0 contour, log-Hz.
    pub f0_spread: f64,
    /// Multiplicative per-band colouring.
    pub color: Vec<f64>,
}

/// Registered speakers `0 .. len`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerBank {
    voices: Vec<SpeakerVoice>,
}

const F0_LOW_HZ: f64 = 90.0;
const F0_HIGH_HZ: f64 = 260.0;

impl SpeakerBank {
    pub fn new(count: usize, seed: u64) -> Self {
        let voices = (0..count)
            .map(|id| {
                let mut rng = seeded_rng(seed.wrapping_mul(0x9e37_79b9).wrapping_add(id as u64 * 7919 + 11));
                let frac = if count > 1 { id as f64 / (count - 1) as f64 } else { 0.5 };
                let base = F0_LOW_HZ * (F0_HIGH_HZ / F0_LOW_HZ).powf(frac) * rng.random_range(0.95..1.05);
                // smooth colouring: a tilt plus one broad resonance
                let tilt = rng.random_range(-0.5..0.5);
                let centre = rng.random_range(4.0..(AUDIO_DIM as f64 - 4.0));
                let gain = rng.random_range(0.2..0.5);
                let color = (0..AUDIO_DIM)
                    .map(|b| {
                        let x = b as f64 / (AUDIO_DIM - 1) as f64 - 0.5;
                        let bump = (-((b as f64 - centre) / 4.0).powi(2)).exp();
                        (1.0 + tilt * x) * (0.8 + gain * bump)
                    })
                    .collect();
                SpeakerVoice { id, base_f0_hz: base, f0_spread: rng.random_range(0.08..0.2), color }
            })
            .collect();
        Self { voices }
    }

    pub fn len(&self) -> usize {
        self.voices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voices.is_empty()
    }

    pub fn get(&self, id: usize) -> Result<&SpeakerVoice> {
        self.voices
            .get(id)
            .ok_or_else(|| Error::Lookup(format!("speaker {id} is not registered ({} speakers)", self.voices.len())))
    }

    pub fn voices(&self) -> &[SpeakerVoice] {
        &self.voices
    }
}

/// Speaker-independent band-energy pattern of a phoneme.
pub fn phoneme_pattern(id: usize) -> Vec<f64> {
    if id == BLANK_ID || is_silence(id) {
        return vec![0.02; AUDIO_DIM];
    }
    let mut rng = seeded_rng(0xba5e_0000 + id as u64);
    let mut bands = vec![0.03; AUDIO_DIM];
    for _ in 0..3 {
        let c = rng.random_range(6.0..(AUDIO_DIM as f64 - 1.0));
        let w = rng.random_range(1.2..2.5);
        let a = rng.random_range(0.4..1.0);
        for (b, v) in bands.iter_mut().enumerate() {
            *v += a * (-((b as f64 - c) / w).powi(2)).exp();
        }
    }
    if !phoneme_info(id).map(|p| p.voiced).unwrap_or(false) {
        for v in bands.iter_mut().skip(18) {
            *v += 0.2;
        }
    }
    bands
}

/// Low-band harmonic bump whose position follows log-F0.
pub fn pitch_bump(log_f0: f64) -> Vec<f64> {
    let (lo, hi) = (70f64.ln(), 320f64.ln());
    let pos = 0.5 + 6.0 * ((log_f0 - lo) / (hi - lo)).clamp(0.0, 1.0);
    (0..AUDIO_DIM).map(|b| 0.3 * (-((b as f64 - pos) / 0.8).powi(2)).exp()).collect()
}
