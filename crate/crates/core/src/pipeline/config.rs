use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::config_hash;
use crate::dubbing::{DubbingTrainConfig, SyncTrainConfig};
use crate::error::{io_err, Error, Result};
use crate::faceswap::FaceSwapTrainConfig;
use crate::metrics::EvalConfig;
use crate::recognizer::RecognizerTrainConfig;
use crate::syndata::CorpusSpec;
use crate::voiceconv::VcTrainConfig;

/// Where each trained module lives. Relative paths resolve against the
/// working directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckpointPaths {
    pub recognizer: PathBuf,
    pub voiceconv: PathBuf,
    pub faceswap: PathBuf,
    pub sync: PathBuf,
    pub dubbing: PathBuf,
}

impl Default for CheckpointPaths {
    fn default() -> Self {
        let p = |name: &str| PathBuf::from("checkpoints").join(format!("{name}.ckpt"));
        Self { recognizer: p("recognizer"), voiceconv: p("voiceconv"), faceswap: p("faceswap"), sync: p("sync"), dubbing: p("dubbing") }
    }
}

impl CheckpointPaths {
    pub const NAMES: [&'static str; 5] = ["recognizer", "voiceconv", "faceswap", "sync", "dubbing"];

    pub fn get(&self, name: &str) -> Result<&Path> {
        Ok(match name {
            "recognizer" => &self.recognizer,
            "voiceconv" => &self.voiceconv,
            "faceswap" => &self.faceswap,
            "sync" => &self.sync,
            "dubbing" => &self.dubbing,
            other => return Err(Error::Config(format!("unknown checkpoint name `{other}` (known: {})", Self::NAMES.join(", ")))),
        })
    }

    pub fn set(&mut self, name: &str, path: PathBuf) -> Result<()> {
        let slot = match name {
            "recognizer" => &mut self.recognizer,
            "voiceconv" => &mut self.voiceconv,
            "faceswap" => &mut self.faceswap,
            "sync" => &mut self.sync,
            "dubbing" => &mut self.dubbing,
            other => return Err(Error::Config(format!("unknown checkpoint name `{other}` (known: {})", Self::NAMES.join(", ")))),
        };
        *slot = path;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    /// Voice of the text-to-speech stub before conversion.
    pub tts_speaker: usize,
    /// Mixed with a hash of the text to seed the stub's timing.
    pub seed: u64,
    /// Stub utterances per speaker used to estimate pitch statistics.
    pub calibration_clips: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self { tts_speaker: 0, seed: 11, calibration_clips: 3 }
    }
}

/// Every tunable of every module in one file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub corpus: CorpusSpec,
    pub recognizer: RecognizerTrainConfig,
    pub voiceconv: VcTrainConfig,
    pub faceswap: FaceSwapTrainConfig,
    pub sync: SyncTrainConfig,
    pub dubbing: DubbingTrainConfig,
    pub generate: GenerateConfig,
    pub evaluate: EvalConfig,
    pub checkpoints: CheckpointPaths,
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Desk-scale working resolution shared by every image module.
pub const DEFAULT_RESOLUTION: usize = 32;

impl Default for PipelineConfig {
    fn default() -> Self {
        let mut cfg = Self {
            corpus: CorpusSpec::default(),
            recognizer: RecognizerTrainConfig::default(),
            voiceconv: VcTrainConfig::default(),
            faceswap: FaceSwapTrainConfig::default(),
            sync: SyncTrainConfig::default(),
            dubbing: DubbingTrainConfig::default(),
            generate: GenerateConfig::default(),
            evaluate: EvalConfig::default(),
            checkpoints: CheckpointPaths::default(),
        };
        cfg.corpus.resolution = DEFAULT_RESOLUTION;
        cfg.faceswap.model.resolution = DEFAULT_RESOLUTION;
        cfg.sync.model.resolution = DEFAULT_RESOLUTION;
        cfg.dubbing.model.resolution = DEFAULT_RESOLUTION;
        cfg
    }
}

impl PipelineConfig {
    /// Parses `text` as overrides of [`PipelineConfig::default`]: a table
    /// that sets only some keys keeps the pipeline defaults for the rest.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut base = toml::Table::try_from(Self::default()).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, user);
        let cfg: Self = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// The effective configuration, defaults filled in.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }

    /// Checks that the modules agree on every size they share.
    pub fn validate(&self) -> Result<()> {
        let r = self.corpus.resolution;
        let agree = |field: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(Error::Config(format!("{field} is {got} but must equal {want}")))
            }
        };
        agree("faceswap.model.resolution", self.faceswap.model.resolution, r)?;
        agree("sync.model.resolution", self.sync.model.resolution, r)?;
        agree("dubbing.model.resolution", self.dubbing.model.resolution, r)?;
        agree("sync.model.audio_window", self.sync.model.audio_window, self.dubbing.model.audio_window)?;
        agree("voiceconv.model.output_dim", self.voiceconv.model.output_dim, self.dubbing.model.audio_dim)?;
        agree("voiceconv.model.bnf_dim", self.voiceconv.model.bnf_dim, self.recognizer.model.bottleneck)?;
        agree("voiceconv.model.num_speakers", self.voiceconv.model.num_speakers, self.corpus.speakers)?;
        if self.generate.tts_speaker >= self.corpus.speakers {
            return Err(Error::Config(format!(
                "generate.tts_speaker {} is not one of the {} corpus speakers",
                self.generate.tts_speaker, self.corpus.speakers
            )));
        }
        if self.generate.calibration_clips == 0 {
            return Err(Error::Config("generate.calibration_clips must be at least 1".into()));
        }
        self.corpus.validate()
    }
}
