use avatarkit_tensor::Scalar;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::syndata::{ProsodyTrack, SyntheticClip};

/// Log-F0 statistics and one-hot identity of a registered speaker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub speaker_id: usize,
    /// Mean voiced log-F0, log-Hz.
    pub mu: f64,
    /// Population standard deviation of voiced log-F0, log-Hz.
    pub theta: f64,
    pub embedding: Vec<f64>,
}

impl SpeakerProfile {
    pub fn new(speaker_id: usize, mu: f64, theta: f64, num_speakers: usize) -> Result<Self> {
        if speaker_id >= num_speakers {
            return Err(invalid(format!("speaker {speaker_id} outside {num_speakers} registered speakers")));
        }
        if !mu.is_finite() || !theta.is_finite() || theta < 0.0 {
            return Err(invalid(format!("bad log-F0 statistics mu={mu} theta={theta}")));
        }
        let mut embedding = vec![0.0; num_speakers];
        embedding[speaker_id] = 1.0;
        Ok(Self { speaker_id, mu, theta, embedding })
    }

    pub fn num_speakers(&self) -> usize {
        self.embedding.len()
    }
}

/// Fills unvoiced gaps: linear between voiced neighbours, nearest voiced
/// value at the ends. Flags pass through unchanged.
pub fn interpolate_prosody<T: Scalar>(track: &ProsodyTrack<T>) -> Result<(Vec<T>, Vec<bool>)> {
    let anchors: Vec<usize> = (0..track.len()).filter(|&i| track.voiced[i]).collect();
    let (Some(&first), Some(&last)) = (anchors.first(), anchors.last()) else {
        return Err(invalid("prosody track has no voiced frame to interpolate from"));
    };
    let mut out = track.logf0.clone();
    out[..first].fill(track.logf0[first]);
    out[last + 1..].fill(track.logf0[last]);
    for w in anchors.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (ya, yb) = (track.logf0[a].f64(), track.logf0[b].f64());
        for (i, v) in out.iter_mut().enumerate().take(b).skip(a + 1) {
            let frac = (i - a) as f64 / (b - a) as f64;
            *v = T::of(ya + frac * (yb - ya));
        }
    }
    Ok((out, track.voiced.clone()))
}

/// Linear log-F0 map matching source statistics to target statistics.
pub fn convert_f0<T: Scalar>(logf0: &[T], source: &SpeakerProfile, target: &SpeakerProfile) -> Result<Vec<T>> {
    if source.theta <= 0.0 {
        return Err(invalid(format!("source speaker {} has zero log-F0 spread", source.speaker_id)));
    }
    if source.mu == target.mu && source.theta == target.theta {
        return Ok(logf0.to_vec());
    }
    let ratio = target.theta / source.theta;
    Ok(logf0.iter().map(|&x| T::of(ratio * (x.f64() - source.mu) + target.mu)).collect())
}

/// Mean and population standard deviation of voiced values.
pub fn voiced_moments<T: Scalar>(tracks: &[&ProsodyTrack<T>]) -> Result<(f64, f64)> {
    let values: Vec<f64> = tracks.iter().flat_map(|t| t.voiced_values()).map(|v| v.f64()).collect();
    if values.len() < 2 {
        return Err(invalid(format!("need at least 2 voiced frames, found {}", values.len())));
    }
    let n = values.len() as f64;
    let mu = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    Ok((mu, var.sqrt()))
}

/// Profile of `speaker_id` from the clips it speaks.
pub fn speaker_stats<T: Scalar>(clips: &[&SyntheticClip<T>], speaker_id: usize, num_speakers: usize) -> Result<SpeakerProfile> {
    let tracks: Vec<&ProsodyTrack<T>> = clips.iter().filter(|c| c.speaker_id == speaker_id).map(|c| &c.prosody).collect();
    let (mu, theta) = voiced_moments(&tracks)?;
    SpeakerProfile::new(speaker_id, mu, theta, num_speakers)
}
