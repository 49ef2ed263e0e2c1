use std::path::{Path, PathBuf};
use std::process::ExitCode;

use avatarkit::checkpoint::Checkpoint;
use avatarkit::dubbing::{train_dubbing, train_sync_scorer, DubbingModel, SyncScorer};
use avatarkit::error::io_err;
use avatarkit::faceswap::{train_faceswap, FaceSet, SwapModel};
use avatarkit::metrics::evaluate_dirs;
use avatarkit::pipeline::{generate, generate_batch, speaker_profiles, GenerationRequest, PipelineConfig, RequestFile};
use avatarkit::recognizer::{train_recognizer, RecognizerModel};
use avatarkit::syndata::{audio_window, export_corpus, make_corpus, Corpus, ProsodyTrack, SpeakerBank};
use avatarkit::train::TrainLog;
use avatarkit::voiceconv::{analyze_default, convert_voice, train_vc, SynthesizerModel, SAMPLE_RATE};
use avatarkit::{io, Array, Error, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

const ECHO_FILE: &str = "effective_config.toml";

#[derive(Parser)]
#[command(name = "avatarkit", version, about = "Train, generate and evaluate synthetic talking avatars")]
struct Cli {
    /// Pipeline configuration (TOML). Missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a checkpoint location, e.g. `--checkpoint dubbing=run/dub.ckpt`.
    #[arg(long = "checkpoint", value_name = "NAME=PATH", global = true)]
    checkpoints: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic corpus to disk as PNG frames, audio and a manifest.
    ExportCorpus {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the phoneme recognizer on the corpus training split.
    TrainRecognizer {
        /// Checkpoint to write; defaults to `checkpoints.recognizer`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the voice-conversion synthesizer on top of a trained recognizer.
    TrainVc {
        #[arg(long)]
        recognizer: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert an exported clip's speech to another corpus speaker.
    Convert {
        /// Clip directory holding `audio.avarr` and `prosody.avarr`.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        target_speaker: usize,
        /// Speaker of the clip; read from the corpus manifest beside the clip when omitted.
        #[arg(long)]
        source_speaker: Option<usize>,
        /// Waveform file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the face-swap model on corpus frames.
    TrainFaceswap {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Frames sampled from each training clip.
        #[arg(long, default_value_t = 4)]
        frames_per_clip: usize,
    },
    /// Put the identity of a face image onto a target image or frame directory.
    Swap {
        #[arg(long)]
        source: PathBuf,
        /// A PNG, or a directory of `frame_%06d.png` files.
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// A PNG for a PNG target, a directory for a directory target.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the audio-visual sync scorer.
    TrainSync {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the dubbing generator against a trained sync scorer.
    TrainDubbing {
        #[arg(long)]
        sync: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render the mouth region of a frame directory to match an audio track.
    Dub {
        /// Directory of `frame_%06d.png` files.
        #[arg(long)]
        source_clip: PathBuf,
        /// `[N, D]` features (`.avarr`) or a waveform (`.avwav`).
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Reference face; defaults to the configured reference frame of the clip.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Text to a dubbed, voice-converted avatar video.
    Generate {
        #[arg(long)]
        text: String,
        #[arg(long)]
        language: String,
        #[arg(long, default_value = "t0")]
        template: String,
        #[arg(long, default_value_t = 0)]
        speaker: usize,
        /// Face image whose identity replaces the template's.
        #[arg(long)]
        swap_source: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every request of a `[[request]]` TOML file independently.
    GenerateBatch {
        #[arg(long)]
        requests: PathBuf,
        /// JSON summary; defaults to `batch_summary.json` beside the requests file.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// PSNR, SSIM and lip-sync scores of generated frames against a reference clip directory.
    Evaluate {
        #[arg(long)]
        generated: PathBuf,
        /// Clip directory with frames and `audio.avarr`.
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        scorer: Option<PathBuf>,
        /// Report path; defaults to `evaluation.json` in the generated directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    for spec in &cli.checkpoints {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--checkpoint expects NAME=PATH, got `{spec}`")))?;
        cfg.checkpoints.set(name, PathBuf::from(path))?;
    }
    // per-verb flags win over both
    let verb: &[(&str, &Option<PathBuf>)] = match &cli.command {
        Command::TrainRecognizer { out } => &[("recognizer", out)],
        Command::TrainVc { recognizer, out } => &[("recognizer", recognizer), ("voiceconv", out)],
        Command::TrainFaceswap { out, .. } => &[("faceswap", out)],
        Command::Swap { ckpt, .. } => &[("faceswap", ckpt)],
        Command::TrainSync { out } => &[("sync", out)],
        Command::TrainDubbing { sync, out } => &[("sync", sync), ("dubbing", out)],
        Command::Dub { ckpt, .. } => &[("dubbing", ckpt)],
        Command::Evaluate { scorer, .. } => &[("sync", scorer)],
        _ => &[],
    };
    for (name, path) in verb {
        if let Some(p) = path {
            cfg.checkpoints.set(name, p.clone())?;
        }
    }
    Ok(cfg)
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => std::fs::create_dir_all(dir).map_err(io_err(dir)),
        None => Ok(()),
    }
}

fn write_echo(cfg: &PipelineConfig, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, cfg.to_toml()?).map_err(io_err(path))?;
    log::info!("effective configuration written to {}", path.display());
    Ok(())
}

fn corpus(cfg: &PipelineConfig) -> Result<Corpus<f32>> {
    log::info!("building corpus: {} clips at {}px", cfg.corpus.clips, cfg.corpus.resolution);
    make_corpus(&cfg.corpus)
}

fn final_losses(log: &TrainLog) -> serde_json::Value {
    log.losses.iter().filter_map(|(k, v)| v.last().map(|x| (k.clone(), json!(x)))).collect()
}

/// Saves a trained module with the pipeline config hash in its summary and
/// echoes the effective config beside it.
fn save_trained(cfg: &PipelineConfig, ckpt: Checkpoint, path: &Path, extra: serde_json::Value) -> Result<()> {
    let mut summary = json!({ "pipeline_config_hash": cfg.hash() });
    if let (Some(dst), serde_json::Value::Object(src)) = (summary.as_object_mut(), extra) {
        dst.extend(src);
    }
    ensure_parent(path)?;
    ckpt.with_summary(summary).save(path)?;
    log::info!("saved {}", path.display());
    write_echo(cfg, &path.with_extension("config.toml"))
}

fn load<M>(path: &Path, from: impl FnOnce(&Checkpoint) -> Result<M>) -> Result<M> {
    from(&Checkpoint::load(path)?)
}

/// Speaker id of an exported clip, from the corpus manifest one level up.
fn clip_speaker(clip: &Path) -> Result<usize> {
    let name = clip.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let manifest = clip.parent().unwrap_or(Path::new(".")).join("manifest.json");
    let text = std::fs::read_to_string(&manifest).map_err(io_err(&manifest))?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    v["clips"]
        .as_array()
        .and_then(|cs| cs.iter().find(|c| c["dir"] == name))
        .and_then(|c| c["speaker_id"].as_u64())
        .map(|s| s as usize)
        .ok_or_else(|| Error::Lookup(format!("clip `{name}` not listed in {}; pass --source-speaker", manifest.display())))
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = load_config(&cli)?;
    let paths = cfg.checkpoints.clone();
    match cli.command {
        Command::ExportCorpus { out } => {
            export_corpus(&corpus(&cfg)?, &out)?;
            write_echo(&cfg, &out.join(ECHO_FILE))?;
        }
        Command::TrainRecognizer { .. } => {
            let (model, log) = train_recognizer(&corpus(&cfg)?.train, &cfg.recognizer)?;
            save_trained(&cfg, model.to_checkpoint(log.steps as u64), &paths.recognizer, json!({ "final": final_losses(&log) }))?;
        }
        Command::TrainVc { .. } => {
            let recognizer = load(&paths.recognizer, RecognizerModel::<f32>::from_checkpoint)?;
            let (model, log) = train_vc(&corpus(&cfg)?.train, &recognizer, &cfg.voiceconv)?;
            save_trained(&cfg, model.to_checkpoint(log.steps as u64), &paths.voiceconv, json!({ "final": final_losses(&log) }))?;
        }
        Command::Convert { input, target_speaker, source_speaker, out } => {
            let recognizer = load(&paths.recognizer, RecognizerModel::<f32>::from_checkpoint)?;
            let synth = load(&paths.voiceconv, SynthesizerModel::<f32>::from_checkpoint)?;
            let source_speaker = match source_speaker {
                Some(s) => s,
                None => clip_speaker(&input)?,
            };
            let audio = io::read_array::<f32>(&input.join("audio.avarr"))?;
            let pro = io::read_array::<f32>(&input.join("prosody.avarr"))?;
            let n = pro.shape()[0];
            let prosody = ProsodyTrack::new((0..n).map(|i| pro.at(&[i, 0])).collect(), (0..n).map(|i| pro.at(&[i, 1]) > 0.5).collect())?;
            let bank = SpeakerBank::new(cfg.corpus.speakers, cfg.corpus.seed);
            let profiles = speaker_profiles::<f32>(&cfg, &bank, synth.cfg.num_speakers)?;
            let pick = |s: usize| {
                profiles.get(s).ok_or_else(|| Error::Validation(format!("speaker {s} is not one of the {} speakers", profiles.len())))
            };
            let conv = convert_voice(&audio, &prosody, pick(source_speaker)?, pick(target_speaker)?, &recognizer, &synth)?;
            ensure_parent(&out)?;
            io::write_waveform(&out, &conv.waveform, SAMPLE_RATE)?;
            write_echo(&cfg, &out.with_extension("config.toml"))?;
            log::info!("speaker {source_speaker} -> {target_speaker}: {} samples", conv.waveform.len());
        }
        Command::TrainFaceswap { frames_per_clip, .. } => {
            let corpus = corpus(&cfg)?;
            let faces = FaceSet::from_clips(&corpus.train, frames_per_clip);
            let (model, log) = train_faceswap(&faces, &cfg.faceswap)?;
            save_trained(&cfg, model.to_checkpoint(log.steps as u64), &paths.faceswap, json!({ "final": final_losses(&log) }))?;
        }
        Command::Swap { source, target, out, .. } => {
            let model = load(&paths.faceswap, SwapModel::<f32>::from_checkpoint)?;
            let face = io::read_png::<f32>(&source)?;
            if target.is_dir() {
                let frames = io::read_frames::<f32>(&target)?;
                let faces = Array::concat0(&vec![face; frames.shape()[0]]);
                io::write_frames(&out, &model.swap_forward(&faces, &frames)?)?;
                write_echo(&cfg, &out.join(ECHO_FILE))?;
            } else {
                let swapped = model.swap_forward(&face, &io::read_png::<f32>(&target)?)?;
                ensure_parent(&out)?;
                io::write_png(&out, &swapped.index_axis0(0))?;
                write_echo(&cfg, &out.with_extension("config.toml"))?;
            }
        }
        Command::TrainSync { .. } => {
            let corpus = corpus(&cfg)?;
            let (scorer, log, accuracy) = train_sync_scorer(&corpus.train, &corpus.val, &cfg.sync)?;
            log::info!("held-out sync accuracy {accuracy:.3}");
            let summary = json!({ "final": final_losses(&log), "val_accuracy": accuracy });
            save_trained(&cfg, scorer.to_checkpoint(serde_json::Value::Null), &paths.sync, summary)?;
        }
        Command::TrainDubbing { .. } => {
            let scorer = load(&paths.sync, SyncScorer::<f32>::from_checkpoint)?;
            let (model, log) = train_dubbing(&corpus(&cfg)?.train, &scorer, &cfg.dubbing)?;
            save_trained(&cfg, model.to_checkpoint(log.steps as u64), &paths.dubbing, json!({ "final": final_losses(&log) }))?;
        }
        Command::Dub { source_clip, audio, reference, out, .. } => {
            let model = load(&paths.dubbing, DubbingModel::<f32>::from_checkpoint)?;
            let video = io::read_frames::<f32>(&source_clip)?;
            let audio = if audio.extension().is_some_and(|e| e == "avwav") {
                analyze_default(&io::read_waveform::<f32>(&audio)?.0)?
            } else {
                io::read_array::<f32>(&audio)?
            };
            let t = video.shape()[0];
            let reference = match reference {
                Some(p) => io::read_png::<f32>(&p)?,
                None => video.slice_axis0(cfg.dubbing.reference_frame.min(t - 1), 1),
            };
            let r = cfg.corpus.clip.audio_per_video;
            let t_out = t.min(audio.shape()[0].div_ceil(r));
            let dubbed = (0..t_out)
                .map(|i| model.dub_frame(&video.slice_axis0(i, 1), &reference, &audio_window(&audio, i, r, model.cfg.audio_window)))
                .collect::<Result<Vec<_>>>()?;
            io::write_frames(&out, &Array::concat0(&dubbed))?;
            io::write_array(&out.join("audio.avarr"), &audio)?;
            write_echo(&cfg, &out.join(ECHO_FILE))?;
            log::info!("dubbed {t_out} of {t} frames");
        }
        Command::Generate { text, language, template, speaker, swap_source, out } => {
            let request = GenerationRequest {
                text,
                language_tag: language,
                template_id: template,
                target_speaker: speaker,
                swap_source,
                output_dir: out.clone(),
                checkpoints: Default::default(),
            };
            let manifest = generate::<f32>(&request, &cfg)?;
            write_echo(&cfg, &out.join(ECHO_FILE))?;
            log::info!("{} frames, {} samples written to {}", manifest.frames, manifest.samples, out.display());
        }
        Command::GenerateBatch { requests, summary } => {
            let file = RequestFile::load(&requests)?;
            let result = generate_batch::<f32>(&file, &cfg);
            let base = requests.parent().unwrap_or(Path::new("."));
            let path = summary.unwrap_or_else(|| base.join("batch_summary.json"));
            std::fs::write(&path, serde_json::to_string_pretty(&result)?).map_err(io_err(&path))?;
            write_echo(&cfg, &base.join(ECHO_FILE))?;
            println!("{} succeeded, {} failed; summary in {}", result.succeeded, result.failed, path.display());
            if result.failed > 0 {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Evaluate { generated, reference, out, .. } => {
            let scorer = load(&paths.sync, SyncScorer::<f32>::from_checkpoint)?;
            let report = evaluate_dirs(&generated, &reference, &scorer, &cfg.evaluate)?;
            let path = out.unwrap_or_else(|| generated.join("evaluation.json"));
            ensure_parent(&path)?;
            std::fs::write(&path, report.to_json()?).map_err(io_err(&path))?;
            write_echo(&cfg, &path.with_extension("config.toml"))?;
            println!(
                "frames {}  psnr {:.2} dB  ssim {:.4}  lse_d {:.4}  lse_c {:.4}",
                report.frames, report.psnr, report.ssim, report.lse_d, report.lse_c
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}
