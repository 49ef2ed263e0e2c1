use std::collections::BTreeSet;
use std::path::Path;

use avatarkit_tensor::Scalar;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::generate::{generate, GenerationRequest};
use crate::error::{invalid, io_err, Result};

/// A requests file: a TOML array of `[[request]]` tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestFile {
    pub request: Vec<GenerationRequest>,
}

impl RequestFile {
    /// Parses and structurally checks a requests file. Relative output
    /// directories and swap sources resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut file: Self = toml::from_str(text).map_err(|e| invalid(format!("malformed requests file: {e}")))?;
        if file.request.is_empty() {
            return Err(invalid("requests file lists no requests"));
        }
        let mut seen = BTreeSet::new();
        for (i, r) in file.request.iter_mut().enumerate() {
            if r.output_dir.is_relative() {
                r.output_dir = base.join(&r.output_dir);
            }
            if let Some(p) = r.swap_source.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
            if !seen.insert(r.output_dir.clone()) {
                return Err(invalid(format!("request {i} reuses output directory {}", r.output_dir.display())));
            }
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchOutcome {
    pub index: usize,
    pub language_tag: String,
    pub output_dir: String,
    pub ok: bool,
    pub error: Option<String>,
    pub frames: Option<usize>,
    pub phoneme_range: Option<[usize; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub succeeded: usize,
    pub failed: usize,
    /// In request order.
    pub results: Vec<BatchOutcome>,
}

/// Generates every request independently; a failing request is recorded and
/// the rest carry on.
pub fn generate_batch<T: Scalar>(file: &RequestFile, cfg: &PipelineConfig) -> BatchSummary {
    let results: Vec<BatchOutcome> = file
        .request
        .iter()
        .enumerate()
        .map(|(index, r)| {
            let res = generate::<T>(r, cfg);
            let mut out = BatchOutcome {
                index,
                language_tag: r.language_tag.clone(),
                output_dir: r.output_dir.display().to_string(),
                ok: res.is_ok(),
                error: None,
                frames: None,
                phoneme_range: None,
            };
            match res {
                Ok(m) => {
                    log::info!("request {index} ({}): {} frames, phoneme ids {:?}", r.language_tag, m.frames, m.phoneme_range);
                    out.frames = Some(m.frames);
                    out.phoneme_range = Some(m.phoneme_range);
                }
                Err(e) => {
                    log::warn!("request {index} failed: {e}");
                    out.error = Some(e.to_string());
                }
            }
            out
        })
        .collect();
    let succeeded = results.iter().filter(|r| r.ok).count();
    BatchSummary { succeeded, failed: results.len() - succeeded, results }
}
