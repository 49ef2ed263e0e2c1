use std::path::Path;
use std::process::Command;

const TINY: &str = r#"
[corpus]
clips = 6
train_fraction = 0.5

[recognizer]
steps = 3

[voiceconv]
steps = 3

[faceswap]
id_steps = 2
steps = 2
batch = 2

[sync]
steps = 3

[dubbing]
steps = 2
batch = 2
probe_every = 1

[checkpoints]
recognizer = "ckpt/recognizer.ckpt"
voiceconv = "ckpt/voiceconv.ckpt"
faceswap = "ckpt/faceswap.ckpt"
sync = "ckpt/sync.ckpt"
dubbing = "ckpt/dubbing.ckpt"
"#;

fn run(dir: &Path, args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_avatarkit"))
        .current_dir(dir)
        .args(["--config", "tiny.toml"])
        .args(args)
        .output()
        .unwrap();
    eprintln!("$ {}\n{}", args.join(" "), String::from_utf8_lossy(&out.stderr));
    out
}

fn ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?} failed");
}

#[test]
fn every_verb_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("tiny.toml"), TINY).unwrap();

    ok(dir, &["export-corpus", "--out", "corpus"]);
    assert!(dir.join("corpus/manifest.json").is_file());
    assert!(dir.join("corpus/clip_0000/frame_000000.png").is_file());
    assert!(dir.join("corpus/effective_config.toml").is_file());

    ok(dir, &["train-recognizer"]);
    ok(dir, &["train-vc", "--recognizer", "ckpt/recognizer.ckpt", "--out", "ckpt/voiceconv.ckpt"]);
    ok(dir, &["train-faceswap", "--out", "other/faceswap.ckpt"]);
    ok(dir, &["train-sync"]);
    ok(dir, &["train-dubbing"]);
    let ckpt = avatarkit::Checkpoint::load(&dir.join("ckpt/dubbing.ckpt")).unwrap();
    let cfg = avatarkit::pipeline::PipelineConfig::load(&dir.join("tiny.toml")).unwrap();
    assert_eq!(ckpt.meta.summary["pipeline_config_hash"], cfg.hash());
    assert!(dir.join("ckpt/dubbing.config.toml").is_file());
    assert!(dir.join("other/faceswap.ckpt").is_file() && !dir.join("ckpt/faceswap.ckpt").exists());

    ok(dir, &["convert", "--in", "corpus/clip_0000", "--target-speaker", "1", "--out", "conv/voice.avwav"]);
    assert!(dir.join("conv/voice.avwav").is_file());

    let face = "corpus/clip_0001/frame_000000.png";
    ok(dir, &["swap", "--source", face, "--target", "corpus/clip_0000/frame_000000.png", "--ckpt", "other/faceswap.ckpt", "--out", "one.png"]);
    assert!(dir.join("one.png").is_file());
    ok(dir, &["swap", "--source", face, "--target", "corpus/clip_0000", "--ckpt", "other/faceswap.ckpt", "--out", "swapped"]);
    assert!(dir.join("swapped/frame_000000.png").is_file());

    ok(dir, &["dub", "--source-clip", "corpus/clip_0000", "--audio", "corpus/clip_0000/audio.avarr", "--out", "dubbed"]);
    ok(dir, &["dub", "--source-clip", "corpus/clip_0000", "--audio", "conv/voice.avwav", "--ckpt", "ckpt/dubbing.ckpt", "--out", "dubbed_conv"]);
    assert!(dir.join("dubbed_conv/frame_000000.png").is_file());
    ok(dir, &["evaluate", "--generated", "dubbed", "--reference", "corpus/clip_0000", "--scorer", "ckpt/sync.ckpt", "--out", "report.json"]);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("report.json")).unwrap()).unwrap();
    assert!(report["psnr"].as_f64().unwrap() > 0.0);

    ok(dir, &["generate", "--text", "hola", "--language", "es", "--speaker", "2", "--out", "gen"]);
    assert!(dir.join("gen/manifest.json").is_file() && dir.join("gen/effective_config.toml").is_file());

    std::fs::write(
        dir.join("requests.toml"),
        "[[request]]\ntext = \"hi\"\nlanguage_tag = \"en\"\ntemplate_id = \"t0\"\ntarget_speaker = 0\noutput_dir = \"b0\"\n\
         [[request]]\ntext = \"hi\"\nlanguage_tag = \"nope\"\ntemplate_id = \"t0\"\ntarget_speaker = 0\noutput_dir = \"b1\"\n",
    )
    .unwrap();
    let out = run(dir, &["generate-batch", "--requests", "requests.toml"]);
    assert_eq!(out.status.code(), Some(2));
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("batch_summary.json")).unwrap()).unwrap();
    assert_eq!((summary["succeeded"].as_u64(), summary["failed"].as_u64()), (Some(1), Some(1)));
}

#[test]
fn bad_config_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("tiny.toml"), "[corpus]\nsurprise = true\n").unwrap();
    let out = run(tmp.path(), &["export-corpus", "--out", "c"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("surprise"));
}
