use avatarkit::dubbing::*;
use avatarkit::syndata::{make_corpus, Corpus, CorpusSpec};
use avatarkit::{Array, Error};
use avatarkit_tensor::gradcheck::{check_inputs, check_params};
use avatarkit_tensor::{seeded_rng, Graph, Graph64, Scalar, Session, Var};
use rand::Rng;
use std::sync::OnceLock;

fn random(shape: &[usize], seed: u64) -> Array<f64> {
    let mut rng = seeded_rng(seed);
    let n = shape.iter().product();
    Array::new(shape, (0..n).map(|_| rng.random_range(0.0..1.0)).collect())
}

/// Smooth test pattern, one phase per channel.
fn smooth(c: usize, h: usize, w: usize) -> Array<f64> {
    let mut a = Array::zeros(&[1, c, h, w]);
    for k in 0..c {
        for i in 0..h {
            for j in 0..w {
                let (x, y) = (j as f64 / w as f64, i as f64 / h as f64);
                a.set(&[0, k, i, j], (2.1 * x + 0.7 * k as f64).sin() + (1.7 * y - 0.3 * k as f64).cos() * 0.5);
            }
        }
    }
    a
}

fn warp(f: &Array<f64>, p: &AdaATParams) -> Array<f64> {
    let g = Graph64::new();
    let out = adaat_transform(g.constant(f.clone()), g.constant(p.to_array().unwrap())).unwrap();
    (*out.value()).clone()
}

fn uniform(c: usize, s: f64, th: f64, tx: f64, ty: f64) -> AdaATParams {
    AdaATParams { scale: vec![s; c], rotation: vec![th; c], tx: vec![tx; c], ty: vec![ty; c] }
}

#[test]
fn adaat_identity_is_exact() {
    let f = random(&[2, 3, 9, 11], 1);
    let g = Graph64::new();
    let p = Array::concat0(&[AdaATParams::identity(3).to_array().unwrap(), AdaATParams::identity(3).to_array().unwrap()]);
    let out = adaat_transform(g.constant(f.clone()), g.constant(p)).unwrap();
    assert_eq!(out.shape(), f.shape());
    for (a, b) in out.value().data().iter().zip(f.data()) {
        assert!((a - b).abs() <= 1e-6);
    }
}

#[test]
fn adaat_channels_are_independent() {
    let f = random(&[1, 4, 8, 8], 2);
    let base = uniform(4, 0.9, 0.3, 0.1, -0.2);
    let mut moved = base.clone();
    moved.scale[2] = 1.3;
    moved.rotation[2] = -1.0;
    moved.tx[2] = 0.5;
    let (a, b) = (warp(&f, &base), warp(&f, &moved));
    let plane = 64;
    for c in [0, 1, 3] {
        assert_eq!(a.data()[c * plane..(c + 1) * plane], b.data()[c * plane..(c + 1) * plane]);
    }
    assert_ne!(a.data()[2 * plane..3 * plane], b.data()[2 * plane..3 * plane]);
}

#[test]
fn adaat_integer_translation_matches_roll() {
    let (h, w) = (7, 10);
    let f = random(&[1, 2, h, w], 3);
    for k in [1usize, 2, 3] {
        let out = warp(&f, &uniform(2, 1.0, 0.0, 2.0 * k as f64 / (w - 1) as f64, 0.0));
        for c in 0..2 {
            for i in 0..h {
                for j in 0..w - k {
                    let want = f.at(&[0, c, i, (j + k) % w]);
                    assert!((out.at(&[0, c, i, j]) - want).abs() <= 1e-5, "k {k} at ({i}, {j})");
                }
            }
        }
    }
    // vertical shift
    let out = warp(&f, &uniform(2, 1.0, 0.0, 0.0, -2.0 / (h - 1) as f64));
    for i in 1..h {
        for j in 0..w {
            assert!((out.at(&[0, 1, i, j]) - f.at(&[0, 1, i - 1, j])).abs() <= 1e-5);
        }
    }
}

#[test]
fn adaat_half_turn_twice_is_identity() {
    let f = random(&[1, 3, 8, 9], 4);
    let pi = uniform(3, 1.0, std::f64::consts::PI, 0.0, 0.0);
    let twice = warp(&warp(&f, &pi), &pi);
    for c in 0..3 {
        for i in 1..7 {
            for j in 1..8 {
                assert!((twice.at(&[0, c, i, j]) - f.at(&[0, c, i, j])).abs() <= 1e-4);
            }
        }
    }
}

#[test]
fn adaat_composition_matches_single_transform() {
    let (h, w) = (33, 33);
    let f = smooth(1, h, w);
    let (s1, th1, t1) = (1.05, 0.2, [0.05, -0.04]);
    let (s2, th2, t2) = (0.95, -0.15, [-0.03, 0.06]);
    let two = warp(&warp(&f, &uniform(1, s1, th1, t1[0], t1[1])), &uniform(1, s2, th2, t2[0], t2[1]));
    // sampling at A1 (A2 x + t2) + t1
    let (sn, cs) = th1.sin_cos();
    let t = [s1 * (cs * t2[0] - sn * t2[1]) + t1[0], s1 * (sn * t2[0] + cs * t2[1]) + t1[1]];
    let one = warp(&f, &uniform(1, s1 * s2, th1 + th2, t[0], t[1]));
    // bilinear tolerance: error of one warp against the sampled pattern's own
    // piecewise-linear reconstruction is bounded by the pattern's curvature
    let (mut worst, mut tol) = (0.0f64, 0.0f64);
    for i in 8..25 {
        for j in 8..25 {
            worst = worst.max((two.at(&[0, 0, i, j]) - one.at(&[0, 0, i, j])).abs());
        }
    }
    for i in 0..h - 1 {
        for j in 0..w - 1 {
            let mid = 0.25 * (f.at(&[0, 0, i, j]) + f.at(&[0, 0, i + 1, j]) + f.at(&[0, 0, i, j + 1]) + f.at(&[0, 0, i + 1, j + 1]));
            let (x, y) = ((j as f64 + 0.5) / w as f64, (i as f64 + 0.5) / h as f64);
            let exact = (2.1 * x).sin() + (1.7 * y).cos() * 0.5;
            tol = tol.max((mid - exact).abs());
        }
    }
    assert!(worst <= 2.0 * tol, "two-step vs composed {worst} > 2 x {tol}");
}

#[test]
fn adaat_gradients_match_finite_differences() {
    let f = smooth(2, 6, 7);
    let p = AdaATParams { scale: vec![0.93, 1.08], rotation: vec![0.17, -0.26], tx: vec![0.11, -0.07], ty: vec![-0.05, 0.13] }
        .to_array::<f64>()
        .unwrap();
    let weights = random(&[1, 2, 6, 7], 5);
    let r = check_inputs(&[f, p], 1e-6, 200, |g, v| {
        let out = adaat_transform(v[0], v[1]).unwrap();
        (out * g.constant(weights.clone())).sum()
    });
    assert!(r.rel_err < 1e-4, "{r:?}");
}

#[test]
fn adaat_rejects_channel_mismatch() {
    let g = Graph64::new();
    let err = adaat_transform(g.constant(Array::zeros(&[1, 3, 4, 4])), g.constant(AdaATParams::identity(4).to_array().unwrap()));
    assert!(matches!(err, Err(Error::Validation(_))));
}

fn pool2(a: &Array<f64>) -> Array<f64> {
    let s = a.shape();
    let (h, w) = (s[2] / 2, s[3] / 2);
    let mut out = Array::zeros(&[s[0], s[1], h, w]);
    for b in 0..s[0] {
        for c in 0..s[1] {
            for i in 0..h {
                for j in 0..w {
                    let v = (a.at(&[b, c, 2 * i, 2 * j])
                        + a.at(&[b, c, 2 * i + 1, 2 * j])
                        + a.at(&[b, c, 2 * i, 2 * j + 1])
                        + a.at(&[b, c, 2 * i + 1, 2 * j + 1]))
                        / 4.0;
                    out.set(&[b, c, i, j], v);
                }
            }
        }
    }
    out
}

fn mean_abs_diff(a: &Array<f64>, b: &Array<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn perception(a: &Array<f64>, b: &Array<f64>, net: &impl FeatureNet<f64>) -> f64 {
    let g = Graph64::new();
    perception_loss(g.constant(a.clone()), g.constant(b.clone()), net).unwrap().item()
}

#[test]
fn perception_identity_net_matches_hand_terms() {
    let (a, b) = (random(&[2, 3, 6, 8], 6), random(&[2, 3, 6, 8], 7));
    let want = (mean_abs_diff(&a, &b) + mean_abs_diff(&pool2(&a), &pool2(&b))) / 2.0;
    assert!((perception(&a, &b, &IdentityNet { copies: 1 }) - want).abs() < 1e-12);
    assert!((perception(&a, &b, &IdentityNet { copies: 4 }) - want).abs() < 1e-12);
    let c = Array::full(&[1, 3, 4, 4], 0.2);
    let d = Array::full(&[1, 3, 4, 4], 0.45);
    assert!((perception(&c, &d, &IdentityNet { copies: 1 }) - 0.25).abs() < 1e-12);
    assert_eq!(perception(&a, &a, &PerceptionNet::new(&[4, 4], 1)), 0.0);
}

#[test]
fn perception_is_symmetric() {
    let net = PerceptionNet::new(&[4, 6, 6], 9);
    for seed in 0..5 {
        let (a, b) = (random(&[1, 3, 8, 8], 10 + seed), random(&[1, 3, 8, 8], 20 + seed));
        assert!((perception(&a, &b, &net) - perception(&b, &a, &net)).abs() < 1e-12);
    }
}

/// One layer of another net.
struct Pick<'a>(&'a PerceptionNet<f64>, usize);

impl FeatureNet<f64> for Pick<'_> {
    fn features<'g>(&self, g: &'g Graph<f64>, x: Var<'g, f64>) -> Vec<Var<'g, f64>> {
        vec![self.0.features(g, x)[self.1]]
    }
}

/// Another net with its last layer listed twice.
struct DupLast<'a>(&'a PerceptionNet<f64>);

impl FeatureNet<f64> for DupLast<'_> {
    fn features<'g>(&self, g: &'g Graph<f64>, x: Var<'g, f64>) -> Vec<Var<'g, f64>> {
        let mut f = self.0.features(g, x);
        f.push(*f.last().unwrap());
        f
    }
}

#[test]
fn perception_layer_terms_and_duplication() {
    let net = PerceptionNet::new(&[4, 5, 6], 11);
    let (a, b) = (random(&[2, 3, 8, 8], 12), random(&[2, 3, 8, 8], 13));
    // single-layer loss is half the layer's two-scale term
    let terms: Vec<f64> = (0..3).map(|k| 2.0 * perception(&a, &b, &Pick(&net, k))).collect();
    let full = perception(&a, &b, &net);
    assert!((full - terms.iter().sum::<f64>() / 6.0).abs() < 1e-12);
    let dup = perception(&a, &b, &DupLast(&net));
    assert!((dup - (terms.iter().sum::<f64>() + terms[2]) / 8.0).abs() < 1e-12);
}

#[test]
fn perception_rejects_shape_mismatch() {
    let g = Graph64::new();
    let r = perception_loss(g.constant(Array::zeros(&[1, 3, 4, 4])), g.constant(Array::zeros(&[1, 3, 4, 6])), &IdentityNet { copies: 1 });
    assert!(matches!(r, Err(Error::Validation(_))));
}

#[test]
fn gan_and_sync_closed_forms() {
    let g = Graph64::new();
    let c = |v: f64| g.constant(Array::full(&[3, 1], v));
    for (dr, df, ld, lg) in [(1.0, 0.0, 0.0, 1.0), (0.5, 0.5, 0.25, 0.25), (0.8, 0.3, 0.065, 0.49), (0.0, 1.0, 1.0, 0.0)] {
        let (l_d, l_g) = gan_losses(c(dr), c(df));
        assert!((l_d.item() - ld).abs() < 1e-9 && (l_g.item() - lg).abs() < 1e-9, "D {dr} {df}");
    }
    for (s, want) in [(0.0, 1.0), (0.5, 0.25), (1.0, 0.0)] {
        assert!((lip_sync_loss(c(s)).item() - want).abs() < 1e-9);
    }
}

#[test]
fn total_loss_closed_forms_and_affinity() {
    let g = Graph64::new();
    let comps = |p: f64, s: f64, a: f64| DubbingLossComponents { perception: g.scalar(p), sync: g.scalar(s), gan: g.scalar(a) };
    let w = |lambda_p, lambda_sync| DubbingWeights { lambda_p, lambda_sync };
    assert_eq!(dubbing_total_loss(&comps(0.0, 0.0, 0.0), &DubbingWeights::default()).unwrap().item(), 0.0);
    assert!((dubbing_total_loss(&comps(1.0, 1.0, 1.0), &w(1.0, 1.0)).unwrap().item() - 3.0).abs() < 1e-9);
    let c = comps(0.7, 0.2, 0.4);
    let f = |lp: f64, ls: f64| dubbing_total_loss(&c, &w(lp, ls)).unwrap().item();
    for (x0, x1, x2) in [(0.0, 1.0, 2.5)] {
        let slope = (f(x1, 0.3) - f(x0, 0.3)) / (x1 - x0);
        assert!((f(x2, 0.3) - (f(x0, 0.3) + slope * (x2 - x0))).abs() < 1e-9);
        let slope = (f(1.0, x1) - f(1.0, x0)) / (x1 - x0);
        assert!((f(1.0, x2) - (f(1.0, x0) + slope * (x2 - x0))).abs() < 1e-9);
    }
    assert!(dubbing_total_loss(&c, &w(-1.0, 0.3)).is_err());
    assert!(dubbing_total_loss(&c, &w(1.0, f64::NAN)).is_err());
}

fn tiny_dubbing() -> DubbingModel<f64> {
    let cfg = DubbingConfig {
        resolution: 8,
        audio_window: 3,
        audio_hidden: 6,
        audio_embed: 4,
        channels: [3, 4],
        head_hidden: 6,
        disc_channels: 2,
        perception_widths: vec![3, 3],
        ..Default::default()
    };
    let mut model = DubbingModel::new(cfg).unwrap();
    // Zero biases put the masked source region exactly on the leaky-relu
    // kink, and the identity warp samples exactly on pixel centres. Jitter
    // every bias so the loss is smooth where it is probed.
    let mut rng = seeded_rng(3);
    let ids: Vec<_> = model.store.ids().filter(|&id| model.store.name(id).ends_with(".b")).collect();
    for id in ids {
        for v in model.store.get_mut(id).data_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
    }
    model
}

fn tiny_scorer() -> SyncScorer<f64> {
    SyncScorer::new(SyncConfig { resolution: 8, audio_window: 3, audio_hidden: 5, visual_channels: [2, 3], embed: 4, ..Default::default() })
        .unwrap()
}

#[test]
fn total_loss_gradient_check() {
    let model = tiny_dubbing();
    let scorer = tiny_scorer();
    let (src, reference) = (random(&[2, 3, 8, 8], 14), random(&[2, 3, 8, 8], 15));
    let win = random(&[2, 3, 29], 16);
    let w = DubbingWeights::default();
    let r = check_params(&model.store, &model.generator_ids(), 1e-6, 10, |s| {
        model.generator_loss(s, &scorer, &src, &reference, &win, &w).unwrap().0
    });
    assert!(r.rel_err < 1e-4, "{r:?}");
}

#[test]
fn generator_loss_leaves_discriminator_and_scorer_untouched() {
    let model = tiny_dubbing();
    let scorer = tiny_scorer();
    let g = Graph64::new();
    let s = Session::new(&g, &model.store);
    let (total, _) = model
        .generator_loss(&s, &scorer, &random(&[1, 3, 8, 8], 17), &random(&[1, 3, 8, 8], 18), &random(&[1, 3, 29], 19), &DubbingWeights::default())
        .unwrap();
    let grads = s.param_grads(&g.backward(total));
    for id in model.discriminator_ids() {
        assert!(grads.get(id).is_none_or(|gr| gr.data().iter().all(|&x| x == 0.0)));
    }
}

#[test]
fn dub_frame_contract() {
    let model = tiny_dubbing();
    let (src, reference) = (random(&[3, 8, 8], 20), random(&[3, 8, 8], 21));
    let win = random(&[3, 29], 22);
    let a = model.dub_frame(&src, &reference, &win).unwrap();
    let b = model.dub_frame(&src, &reference, &win).unwrap();
    assert_eq!(a.shape(), &[3, 8, 8]);
    assert_eq!(a.data(), b.data());
    assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert!(matches!(model.dub_frame(&src, &reference, &random(&[4, 29], 23)), Err(Error::Validation(_))));
    assert!(model.dub_frame(&random(&[3, 16, 16], 24), &reference, &win).is_err());
}

#[test]
fn checkpoint_round_trip_and_module_check() {
    let model = tiny_dubbing();
    let ckpt = model.to_checkpoint(7);
    let back = DubbingModel::<f64>::from_checkpoint(&avatarkit::Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap()).unwrap();
    let (src, win) = (random(&[1, 3, 8, 8], 25), random(&[1, 3, 29], 26));
    assert_eq!(model.dub_frame(&src, &src, &win).unwrap().data(), back.dub_frame(&src, &src, &win).unwrap().data());
    let scorer = tiny_scorer().to_checkpoint(serde_json::json!({}));
    assert!(matches!(DubbingModel::<f64>::from_checkpoint(&scorer), Err(Error::Checkpoint(_))));
    assert!(matches!(SyncScorer::<f64>::from_checkpoint(&ckpt), Err(Error::Checkpoint(_))));
}

struct SyncFixture {
    corpus: Corpus<f32>,
    scorer: SyncScorer<f32>,
    val_accuracy: f64,
}

/// 200 training and 50 held-out clips at 32 px with a trained scorer.
fn fixture() -> &'static SyncFixture {
    static CELL: OnceLock<SyncFixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let spec = CorpusSpec { clips: 250, resolution: 32, train_fraction: 0.8, ..Default::default() };
        let corpus = make_corpus::<f32>(&spec).unwrap();
        let cfg = SyncTrainConfig { model: SyncConfig { resolution: 32, ..Default::default() }, ..Default::default() };
        let (scorer, _, val_accuracy) = train_sync_scorer(&corpus.train, &corpus.val, &cfg).unwrap();
        SyncFixture { corpus, scorer, val_accuracy }
    })
}

#[test]
fn trained_scorer_separates_matched_pairs() {
    let f = fixture();
    assert_eq!(f.corpus.val.len(), 50);
    assert!(f.val_accuracy >= 0.9, "held-out accuracy {}", f.val_accuracy);
    let rev = reversal_accuracy(&f.scorer, &f.corpus.val).unwrap();
    assert!(rev >= 0.9, "reversal ranking {rev}");
}

#[test]
fn untrained_scorer_is_at_chance() {
    let f = fixture();
    let scorer = SyncScorer::<f32>::new(SyncConfig { resolution: 32, ..Default::default() }).unwrap();
    let acc = sync_accuracy(&scorer, &f.corpus.val, 5).unwrap();
    assert!((acc - 0.5).abs() <= 0.1, "untrained accuracy {acc}");
}

#[test]
fn scores_stay_in_unit_interval() {
    let f = fixture();
    let clip = &f.corpus.val[0];
    let win = clip_windows(&clip.audio, clip.num_frames(), clip.audio_per_video, 9);
    for scorer in [&f.scorer, &SyncScorer::new(SyncConfig { resolution: 32, ..Default::default() }).unwrap()] {
        let s = scorer.scores(&win, &clip.frames).unwrap();
        assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    // permuting the batch permutes the scores
    let n = clip.num_frames();
    let perm: Vec<usize> = (0..n).rev().collect();
    let pw = Array::stack(&perm.iter().map(|&i| win.index_axis0(i)).collect::<Vec<_>>());
    let pf = Array::stack(&perm.iter().map(|&i| clip.frames.index_axis0(i)).collect::<Vec<_>>());
    let (a, b) = (f.scorer.scores(&win, &clip.frames).unwrap(), f.scorer.scores(&pw, &pf).unwrap());
    for (k, &i) in perm.iter().enumerate() {
        assert_eq!(a[i], b[k]);
    }
}

#[test]
fn sync_training_rejects_single_frame_clips() {
    let f = fixture();
    let mut one = f.corpus.train[0].clone();
    one.frames = one.frames.slice_axis0(0, 1);
    one.mouth_aperture.truncate(1);
    let r = train_sync_scorer(&[one], &f.corpus.val, &SyncTrainConfig::default());
    assert!(matches!(r, Err(Error::Validation(_))));
}

#[test]
fn strict_mode_rejects_untrained_scorer() {
    let f = fixture();
    let untrained = SyncScorer::<f32>::new(SyncConfig { resolution: 32, ..Default::default() }).unwrap();
    let cfg = DubbingTrainConfig { model: DubbingConfig { resolution: 32, ..Default::default() }, steps: 1, ..Default::default() };
    assert!(matches!(train_dubbing(&f.corpus.train[..1], &untrained, &cfg), Err(Error::Validation(_))));
    let lenient = DubbingTrainConfig { strict_sync: false, ..cfg };
    assert!(train_dubbing(&f.corpus.train[..1], &untrained, &lenient).is_ok());
}

#[test]
fn smoke_run_is_finite_and_probe_sync_falls() {
    let f = fixture();
    let cfg = DubbingTrainConfig {
        model: DubbingConfig { resolution: 32, ..Default::default() },
        steps: 500,
        batch: 4,
        ..Default::default()
    };
    let (model, log) = train_dubbing(&f.corpus.train[..2], &f.scorer, &cfg).unwrap();
    for k in ["perception", "sync", "gan", "generator", "discriminator", "probe_sync"] {
        assert!(log.series(k).iter().all(|v| v.is_finite()), "{k}");
    }
    let probe = log.series("probe_sync");
    assert_eq!(probe.len(), 20);
    assert!(log.tail_mean("probe_sync", 5) < log.head_mean("probe_sync", 1), "{probe:?}");
    let clip = &f.corpus.train[0];
    let out = model.dub_frame(&clip.frame(3), &clip.frame(0), &clip.audio_window(3, 9)).unwrap();
    assert!(out.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(&v.f64())));
}

