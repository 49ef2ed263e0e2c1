use avatarkit::dubbing::{reversed_audio, train_sync_scorer, SyncConfig, SyncScorer, SyncTrainConfig};
use avatarkit::metrics::*;
use avatarkit::syndata::{export_corpus, make_corpus, Corpus, CorpusSpec};
use avatarkit::{Array, Error};
use avatarkit_tensor::seeded_rng;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::sync::OnceLock;

mod common;
use common::{psnr_oracle, random, ssim_oracle};

#[test]
fn psnr_matches_direct_formula() {
    for seed in 0..10 {
        let (a, b) = (random(&[3, 9, 7], seed), random(&[3, 9, 7], 100 + seed));
        let got = psnr(&a, &b, 1.0).unwrap();
        assert!((got - psnr_oracle(a.data(), b.data(), 1.0)).abs() < 1e-6);
        let got = psnr(&a, &b, 2.0).unwrap();
        assert!((got - psnr_oracle(a.data(), b.data(), 2.0)).abs() < 1e-6);
    }
}

#[test]
fn psnr_falls_as_noise_grows() {
    let a = Array::<f64>::full(&[3, 16, 16], 0.5);
    let mut rng = seeded_rng(1);
    let unit: Vec<f64> = (0..a.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut last = f64::INFINITY;
    for amp in [0.01, 0.02, 0.05, 0.1, 0.2] {
        let b = Array::new(&[3, 16, 16], unit.iter().map(|u| 0.5 + amp * u).collect());
        let p = psnr(&a, &b, 1.0).unwrap();
        assert!(p < last);
        last = p;
    }
}

#[test]
fn ssim_matches_windowed_oracle() {
    let cfg = SsimConfig::default();
    for (shape, seed) in [(vec![3, 16, 16], 1), (vec![1, 20, 13], 2), (vec![2, 3, 12, 12], 3)] {
        let a = random(&shape, seed);
        // correlated partner so the value is not near zero
        let noise = random(&shape, seed + 50);
        let b = Array::new(&shape, a.data().iter().zip(noise.data()).map(|(x, n)| 0.7 * x + 0.3 * n).collect());
        let got = ssim(&a, &b, &cfg).unwrap();
        let want = ssim_oracle(&a, &b, 11, 1.5, 1.0);
        assert!((got - want).abs() < 1e-5, "{shape:?}: {got} vs {want}");
    }
    // small planes shrink the window
    let (a, b) = (random(&[3, 8, 8], 4), random(&[3, 8, 8], 5));
    assert!((ssim(&a, &b, &cfg).unwrap() - ssim_oracle(&a, &b, 7, 1.5, 1.0)).abs() < 1e-5);
}

#[test]
fn ssim_properties() {
    let cfg = SsimConfig::default();
    let a = random(&[3, 16, 16], 6);
    assert!((ssim(&a, &a, &cfg).unwrap() - 1.0).abs() < 1e-12);
    for seed in 0..5 {
        let b = random(&[3, 16, 16], 10 + seed);
        let (ab, ba) = (ssim(&a, &b, &cfg).unwrap(), ssim(&b, &a, &cfg).unwrap());
        assert!((ab - ba).abs() < 1e-12 && (-1.0..=1.0).contains(&ab));
    }
    // mid-gray field with texture against its negative
    let tex = Array::new(&[1, 16, 16], random(&[1, 16, 16], 7).data().iter().map(|v| 0.5 + 0.2 * (v - 0.5)).collect());
    let neg = tex.map(|v| 1.0 - v);
    assert!(ssim(&tex, &neg, &cfg).unwrap() < 1.0);
    assert!(matches!(ssim(&a, &random(&[3, 16, 15], 1), &cfg), Err(Error::Validation(_))));
}

struct Fixture {
    corpus: Corpus<f32>,
    scorer: SyncScorer<f32>,
}

fn fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let spec = CorpusSpec { clips: 250, resolution: 32, train_fraction: 0.8, ..Default::default() };
        let corpus = make_corpus::<f32>(&spec).unwrap();
        let cfg = SyncTrainConfig { model: SyncConfig { resolution: 32, ..Default::default() }, ..Default::default() };
        let (scorer, _, _) = train_sync_scorer(&corpus.train, &corpus.val, &cfg).unwrap();
        Fixture { corpus, scorer }
    })
}

#[test]
fn reversed_audio_scores_worse() {
    let f = fixture();
    let mut better = 0;
    for clip in &f.corpus.val {
        let m = lse_metrics(&f.scorer, &clip.frames, &clip.audio, clip.audio_per_video, LSE_MAX_OFFSET).unwrap();
        let r = lse_metrics(&f.scorer, &clip.frames, &reversed_audio(&clip.audio), clip.audio_per_video, LSE_MAX_OFFSET)
            .unwrap();
        if m.lse_d < r.lse_d {
            better += 1;
        }
    }
    assert!(better as f64 >= 0.9 * f.corpus.val.len() as f64, "{better} of {}", f.corpus.val.len());
}

#[test]
fn own_audio_is_more_confident_than_shuffled() {
    let f = fixture();
    let mut rng = seeded_rng(9);
    let (mut own, mut shuffled) = (0.0, 0.0);
    for clip in &f.corpus.val {
        own += lse_metrics(&f.scorer, &clip.frames, &clip.audio, clip.audio_per_video, 3).unwrap().lse_c;
        let r = clip.audio_per_video;
        let t = clip.num_frames();
        let mut order: Vec<usize> = (0..t).collect();
        for i in (1..t).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let rows: Vec<Array<f32>> = order.iter().flat_map(|&k| (0..r).map(move |j| k * r + j)).map(|i| clip.audio.index_axis0(i)).collect();
        shuffled += lse_metrics(&f.scorer, &clip.frames, &Array::stack(&rows), r, 3).unwrap().lse_c;
    }
    assert!(own >= shuffled, "own {own} vs shuffled {shuffled}");
}

#[test]
fn lse_is_deterministic_and_needs_enough_frames() {
    let f = fixture();
    let clip = &f.corpus.val[0];
    let a = lse_metrics(&f.scorer, &clip.frames, &clip.audio, clip.audio_per_video, 3).unwrap();
    let b = lse_metrics(&f.scorer, &clip.frames, &clip.audio, clip.audio_per_video, 3).unwrap();
    assert_eq!(a, b);
    let short = clip.frames.slice_axis0(0, 6);
    assert!(matches!(lse_metrics(&f.scorer, &short, &clip.audio, clip.audio_per_video, 3), Err(Error::Validation(_))));
}

#[test]
fn self_evaluation_and_byte_stability() {
    let f = fixture();
    let clip = &f.corpus.val[1];
    let cfg = EvalConfig::default();
    let rep = evaluate(&clip.frames, &clip.frames, &clip.audio, clip.audio_per_video, &f.scorer, &cfg).unwrap();
    assert_eq!(rep.psnr, PSNR_CAP);
    assert!((rep.ssim - 1.0).abs() < 1e-9);
    let again = evaluate(&clip.frames, &clip.frames, &clip.audio, clip.audio_per_video, &f.scorer, &cfg).unwrap();
    assert_eq!(rep.to_json().unwrap(), again.to_json().unwrap());
    let short = clip.frames.slice_axis0(0, clip.num_frames() - 1);
    assert!(matches!(evaluate(&short, &clip.frames, &clip.audio, clip.audio_per_video, &f.scorer, &cfg), Err(Error::Validation(_))));
}

#[test]
fn gaussian_noise_matches_analytic_psnr() {
    let f = fixture();
    let sigma = 0.05;
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut rng = seeded_rng(12);
    let dir = tempfile::tempdir().unwrap();
    export_corpus(&f.corpus, dir.path()).unwrap();
    let clip_dir = dir.path().join("clip_0200");
    let reference = avatarkit::io::read_frames::<f64>(&clip_dir).unwrap();
    let noisy = Array::new(reference.shape(), reference.data().iter().map(|v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0)).collect());
    let gen_dir = dir.path().join("noisy");
    avatarkit::io::write_frames(&gen_dir, &noisy).unwrap();
    let scorer: SyncScorer<f64> = SyncScorer::from_checkpoint(&f.scorer.to_checkpoint(serde_json::json!({}))).unwrap();
    let rep = evaluate_dirs(&gen_dir, &clip_dir, &scorer, &EvalConfig::default()).unwrap();
    // MSE of unclipped noise is sigma^2
    let predicted = -10.0 * (sigma * sigma).log10();
    assert!((rep.psnr - predicted).abs() <= 0.5, "psnr {} vs {predicted}", rep.psnr);
    assert!(rep.ssim < 1.0 && rep.per_frame.psnr.len() == reference.shape()[0]);
}
