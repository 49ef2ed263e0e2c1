use std::path::Path;

use avatarkit_tensor::{seeded_rng, Scalar};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::clip::{synthesize_clip, ClipOptions, SyntheticClip};
use super::phonemes::LanguageInventory;
use super::template::AvatarTemplate;
use super::voices::SpeakerBank;
use crate::error::{invalid, io_err, Result};
use crate::io;

/// Corpus descriptor, read from the `[corpus]` table of a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub clips: usize,
    pub speakers: usize,
    pub languages: Vec<String>,
    pub templates: usize,
    pub resolution: usize,
    pub seed: u64,
    pub train_fraction: f64,
    pub min_phonemes: usize,
    pub max_phonemes: usize,
    pub clip: ClipOptions,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            clips: 16,
            speakers: 4,
            languages: vec!["en".into()],
            templates: 2,
            resolution: 64,
            seed: 7,
            train_fraction: 0.8,
            min_phonemes: 4,
            max_phonemes: 8,
            clip: ClipOptions::default(),
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.clips < 2 {
            return Err(invalid(format!("corpus needs at least 2 clips, got {}", self.clips)));
        }
        if self.speakers == 0 || self.templates == 0 || self.languages.is_empty() {
            return Err(invalid("corpus needs at least one speaker, template and language"));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(invalid(format!("train_fraction {} outside [0, 1]", self.train_fraction)));
        }
        if self.min_phonemes == 0 || self.min_phonemes > self.max_phonemes {
            return Err(invalid("need 1 <= min_phonemes <= max_phonemes"));
        }
        for tag in &self.languages {
            LanguageInventory::lookup(tag)?;
        }
        AvatarTemplate::builtin(0, self.resolution).validate()
    }

    /// Train-split size; both splits keep at least one clip.
    pub fn train_count(&self) -> usize {
        ((self.clips as f64 * self.train_fraction).round() as usize).clamp(1, self.clips - 1)
    }
}

/// Immutable train/validation split of generated clips.
#[derive(Clone, Debug)]
pub struct Corpus<T> {
    pub spec: CorpusSpec,
    pub speakers: SpeakerBank,
    pub templates: Vec<AvatarTemplate>,
    pub train: Vec<SyntheticClip<T>>,
    pub val: Vec<SyntheticClip<T>>,
    /// Language tag of each clip, parallel to `train` / `val`.
    pub train_languages: Vec<String>,
    pub val_languages: Vec<String>,
}

impl<T: Scalar> Corpus<T> {
    pub fn clips(&self) -> impl Iterator<Item = &SyntheticClip<T>> {
        self.train.iter().chain(&self.val)
    }

    /// Every clip spoken by `speaker_id`, both splits.
    pub fn clips_of_speaker(&self, speaker_id: usize) -> Vec<&SyntheticClip<T>> {
        self.clips().filter(|c| c.speaker_id == speaker_id).collect()
    }
}

pub fn make_corpus<T: Scalar>(spec: &CorpusSpec) -> Result<Corpus<T>> {
    spec.validate()?;
    let speakers = SpeakerBank::new(spec.speakers, spec.seed);
    let templates: Vec<_> = (0..spec.templates).map(|i| AvatarTemplate::builtin(i, spec.resolution)).collect();
    let inventories =
        spec.languages.iter().map(|t| LanguageInventory::lookup(t)).collect::<Result<Vec<_>>>()?;

    let mut rng = seeded_rng(spec.seed);
    let mut clips = Vec::with_capacity(spec.clips);
    let mut langs = Vec::with_capacity(spec.clips);
    for i in 0..spec.clips {
        let inv = &inventories[i % inventories.len()];
        let n = rng.random_range(spec.min_phonemes..=spec.max_phonemes);
        // silence at both ends, speech in between
        let mut phonemes = vec![inv.silence_id()];
        phonemes.extend((0..n).map(|_| inv.id_of(rng.random_range(1..inv.len()))));
        phonemes.push(inv.silence_id());
        let template = &templates[i % templates.len()];
        let speaker = rng.random_range(0..spec.speakers);
        let clip_seed = spec.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        clips.push(synthesize_clip(template, &phonemes, &speakers, speaker, clip_seed, &spec.clip)?);
        langs.push(inv.language_tag.clone());
    }

    let mut order: Vec<usize> = (0..spec.clips).collect();
    order.shuffle(&mut seeded_rng(spec.seed ^ 0x5917));
    let n_train = spec.train_count();
    let pick = |idx: &[usize]| -> (Vec<SyntheticClip<T>>, Vec<String>) {
        idx.iter().map(|&i| (clips[i].clone(), langs[i].clone())).unzip()
    };
    let (train, train_languages) = pick(&order[..n_train]);
    let (val, val_languages) = pick(&order[n_train..]);
    Ok(Corpus { spec: spec.clone(), speakers, templates, train, val, train_languages, val_languages })
}

#[derive(Serialize)]
struct ClipEntry<'a> {
    dir: String,
    split: &'a str,
    language: &'a str,
    template_id: &'a str,
    speaker_id: usize,
    seed: u64,
    frames: usize,
    audio_frames: usize,
    phonemes: &'a [usize],
    mouth_aperture: Vec<f64>,
}

/// Writes every clip as `clip_NNNN/frame_%06d.png` plus `audio.avarr`,
/// `prosody.avarr` (log-F0, voiced flag) and a top-level `manifest.json`.
pub fn export_corpus<T: Scalar>(corpus: &Corpus<T>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut entries = Vec::new();
    let splits = [("train", &corpus.train, &corpus.train_languages), ("val", &corpus.val, &corpus.val_languages)];
    for (split, clips, langs) in splits {
        for (clip, lang) in clips.iter().zip(langs.iter()) {
            let name = format!("clip_{:04}", entries.len());
            let clip_dir = dir.join(&name);
            io::write_frames(&clip_dir, &clip.frames)?;
            io::write_array(&clip_dir.join("audio.avarr"), &clip.audio)?;
            let prosody: Vec<T> = clip
                .prosody
                .logf0
                .iter()
                .zip(&clip.prosody.voiced)
                .flat_map(|(&f, &v)| [f, if v { T::one() } else { T::zero() }])
                .collect();
            io::write_array(&clip_dir.join("prosody.avarr"), &avatarkit_tensor::Array::new(&[clip.prosody.len(), 2], prosody))?;
            entries.push(ClipEntry {
                dir: name,
                split,
                language: lang,
                template_id: &clip.template_id,
                speaker_id: clip.speaker_id,
                seed: clip.seed,
                frames: clip.num_frames(),
                audio_frames: clip.num_audio_frames(),
                phonemes: &clip.phonemes,
                mouth_aperture: clip.mouth_aperture.iter().map(|a| a.f64()).collect(),
            });
        }
    }
    let manifest = serde_json::json!({
        "audio_per_video": corpus.spec.clip.audio_per_video,
        "spec": corpus.spec,
        "clips": entries,
    });
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(io_err(&path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(clips: usize) -> CorpusSpec {
        CorpusSpec { clips, resolution: 32, ..CorpusSpec::default() }
    }

    #[test]
    fn split_sizes() {
        let c = make_corpus::<f32>(&CorpusSpec { train_fraction: 0.8, ..small(10) }).unwrap();
        assert_eq!((c.train.len(), c.val.len()), (8, 2));
        let c = make_corpus::<f32>(&small(2)).unwrap();
        assert_eq!((c.train.len(), c.val.len()), (1, 1));
        assert!(make_corpus::<f32>(&small(1)).is_err());
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let a = make_corpus::<f32>(&small(12)).unwrap();
        let b = make_corpus::<f32>(&small(12)).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.val, b.val);
        for v in &a.val {
            assert!(a.train.iter().all(|t| t.seed != v.seed));
        }
    }

    #[test]
    fn export_writes_manifest() {
        let c = make_corpus::<f32>(&small(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_corpus(&c, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["clips"].as_array().unwrap().len(), 2);
        assert!(dir.path().join("clip_0000/frame_000000.png").exists());
        let audio = io::read_array::<f32>(&dir.path().join("clip_0000/audio.avarr")).unwrap();
        assert_eq!(audio.shape()[1], super::super::AUDIO_DIM);
    }
}
