use avatarkit::recognizer::{
    ctc_log_prob, normalize_utterance, train_recognizer, HybridLossConfig, RecognizerConfig, RecognizerModel,
    RecognizerTrainConfig,
};
use avatarkit::syndata::{synthesize_clip, AvatarTemplate, ClipOptions, LanguageInventory, SpeakerBank, AUDIO_DIM};
use avatarkit::Array;
use avatarkit_tensor::gradcheck::check_params;
use avatarkit_tensor::{seeded_rng, Array64};
use rand::Rng;

mod common;
use common::{brute_force, random_log_posteriors};

fn to_array(lp: &[Vec<f64>]) -> Array64 {
    Array64::from_f64(&[lp.len(), lp[0].len()], &lp.concat())
}

#[test]
fn ctc_matches_enumeration_t2_uniform() {
    let lp = vec![vec![0.5f64.ln(); 2]; 2];
    assert!((brute_force(&lp, &[1]) - 0.75f64.ln()).abs() < 1e-12);
    assert!((ctc_log_prob(&to_array(&lp), &[1]).unwrap() - 0.75f64.ln()).abs() < 1e-12);
}

#[test]
fn ctc_repeated_label_t3() {
    let mut rng = seeded_rng(3);
    let lp = random_log_posteriors(&mut rng, 3, 3);
    let got = ctc_log_prob(&to_array(&lp), &[1, 1]).unwrap();
    assert!((got - brute_force(&lp, &[1, 1])).abs() < 1e-9);
}

#[test]
fn ctc_random_small_cases() {
    let mut rng = seeded_rng(99);
    for _ in 0..200 {
        let t = rng.random_range(1..=6);
        let v = rng.random_range(2..=3);
        let l = rng.random_range(1..=3);
        let labels: Vec<usize> = (0..l).map(|_| rng.random_range(1..v)).collect();
        let lp = random_log_posteriors(&mut rng, t, v);
        let got = ctc_log_prob(&to_array(&lp), &labels).unwrap();
        let want = brute_force(&lp, &labels);
        if want == f64::NEG_INFINITY {
            assert_eq!(got, f64::NEG_INFINITY);
        } else {
            assert!((got - want).abs() < 1e-6, "{labels:?} T={t}: {got} vs {want}");
            assert!(got <= 0.0);
        }
    }
}

#[test]
fn normalization_examples() {
    let x = Array64::from_f64(&[2, 1], &[1.0, 3.0]);
    assert_eq!(normalize_utterance(&x).data(), &[-1.0, 1.0]);
    let c = Array64::from_f64(&[3, 2], &[2.0, 5.0, 2.0, 5.0, 2.0, 5.0]);
    assert!(normalize_utterance(&c).data().iter().all(|&v| v == 0.0));
    let mut rng = seeded_rng(4);
    let r = Array64::from_f64(&[7, 3], &(0..21).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>());
    let once = normalize_utterance(&r);
    let twice = normalize_utterance(&once);
    for (a, b) in once.data().iter().zip(twice.data()) {
        assert!((a - b).abs() < 1e-6);
    }
}

fn tiny_config() -> RecognizerConfig {
    RecognizerConfig {
        input_dim: 4,
        vocab_size: 4,
        conv_channels: [1, 2],
        hidden: 4,
        bottleneck: 4,
        embed: 3,
        decoder_hidden: 4,
        attention_dim: 3,
        seed: 5,
    }
}

fn tiny_input(t: usize) -> Array64 {
    let mut rng = seeded_rng(8);
    Array64::from_f64(&[t, 4], &(0..t * 4).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>())
}

#[test]
fn hybrid_loss_boundaries_and_affinity() {
    let m = RecognizerModel::<f64>::new(tiny_config()).unwrap();
    let x = tiny_input(9);
    let y = [1, 2, 2];
    let ctc = -m.ctc_log_prob(&x, &y).unwrap();
    let att = -m.attention_log_prob(&x, &y).unwrap();
    assert!(ctc >= 0.0 && att >= 0.0);
    let at = |l: f64| m.hybrid_loss(&x, &y, &HybridLossConfig::new(l).unwrap()).unwrap();
    assert!((at(1.0) - ctc).abs() < 1e-12);
    assert!((at(0.0) - att).abs() < 1e-12);
    assert!((at(0.5) - 0.5 * (ctc + att)).abs() < 1e-9);
    // third point from the line through two others
    let (a, b) = (at(0.2), at(0.9));
    let pred = a + (b - a) * (0.6 - 0.2) / (0.9 - 0.2);
    assert!((at(0.6) - pred).abs() < 1e-9);
    assert!(HybridLossConfig::new(1.5).is_err());
}

#[test]
fn attention_uniform_output_closed_form() {
    let mut m = RecognizerModel::<f64>::new(tiny_config()).unwrap();
    for name in ["decoder.out.w", "decoder.out.b"] {
        let id = m.store.find(name).unwrap();
        m.store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let x = tiny_input(6);
    let y = [3, 1];
    let n_out = 5.0; // vocab + eos
    let want = 3.0 * (1.0 / n_out as f64).ln(); // two labels plus eos
    assert!((m.attention_log_prob(&x, &y).unwrap() - want).abs() < 1e-12);
    assert!(m.attention_log_prob(&x, &[9]).is_err());
}

#[test]
fn attention_equals_stepwise_accumulation() {
    let m = RecognizerModel::<f64>::new(tiny_config()).unwrap();
    let x = tiny_input(7);
    let y = [2, 3, 1];
    let g = avatarkit_tensor::Graph64::new();
    let s = avatarkit_tensor::Session::new(&g, &m.store).frozen();
    let bnf = m.encode(&s, &x).unwrap();
    let rows = m.attention_steps(&s, bnf, &y);
    let mut manual = 0.0;
    for (row, gold) in rows.iter().zip([2, 3, 1, m.eos()]) {
        let r = row.value();
        let z: f64 = r.data().iter().map(|v| v.exp()).sum();
        assert!((z - 1.0).abs() < 1e-12);
        manual += r.data()[gold];
    }
    assert!((m.attention_log_prob(&x, &y).unwrap() - manual).abs() < 1e-12);
}

#[test]
fn hybrid_loss_gradient_check() {
    let m = RecognizerModel::<f64>::new(tiny_config()).unwrap();
    assert!(m.store.num_scalars() < 2000, "{}", m.store.num_scalars());
    let x = tiny_input(8);
    let cfg = HybridLossConfig::new(0.3).unwrap();
    let ids: Vec<_> = m.store.ids().collect();
    let r = check_params(&m.store, &ids, 1e-6, 12, |s| m.hybrid_loss_var(s, &x, &[1, 3, 3], &cfg).unwrap());
    assert!(r.rel_err < 1e-4, "{r:?}");
}

#[test]
fn bnf_shape_determinism_and_batch_independence() {
    let m = RecognizerModel::<f32>::new(RecognizerConfig::default()).unwrap();
    let mut rng = seeded_rng(1);
    let mk = |t: usize, rng: &mut avatarkit_tensor::ChaCha8Rng| {
        Array::<f32>::from_f64(&[t, AUDIO_DIM], &(0..t * AUDIO_DIM).map(|_| rng.random_range(0.0..1.0)).collect::<Vec<_>>())
    };
    let (a, b) = (mk(11, &mut rng), mk(6, &mut rng));
    let bnf = m.extract_bnf(&a).unwrap();
    assert_eq!(bnf.shape(), &[6, 32]);
    assert_eq!(bnf, m.extract_bnf(&a).unwrap());
    let ab = m.extract_bnf_batch(&[a.clone(), b.clone()]).unwrap();
    let ba = m.extract_bnf_batch(&[b, a]).unwrap();
    for (x, y) in ab[0].data().iter().zip(ba[1].data()) {
        assert!((x - y).abs() < 1e-5);
    }
    assert!(m.extract_bnf(&Array::zeros(&[0, AUDIO_DIM])).is_err());
}

#[test]
fn lambda_sweep_is_finite() {
    let inv = LanguageInventory::lookup("en").unwrap();
    let bank = SpeakerBank::new(2, 3);
    let phon: Vec<usize> = [0, 1, 6, 2, 0].iter().map(|&k| inv.id_of(k)).collect();
    let clip = synthesize_clip::<f32>(&AvatarTemplate::builtin(0, 32), &phon, &bank, 0, 4, &ClipOptions::default()).unwrap();
    for lambda in [0.0, 0.3, 1.0] {
        let cfg = RecognizerTrainConfig { steps: 15, loss: HybridLossConfig { lambda }, ..Default::default() };
        let (_, log) = train_recognizer(std::slice::from_ref(&clip), &cfg).unwrap();
        assert!(log.series("hybrid").iter().all(|v| v.is_finite()));
    }
}

#[test]
fn overfit_single_clip_decodes_exactly() {
    let inv = LanguageInventory::lookup("en").unwrap();
    let bank = SpeakerBank::new(4, 7);
    let phon: Vec<usize> = [0, 1, 8, 3, 6, 4, 0].iter().map(|&k| inv.id_of(k)).collect();
    let clip = synthesize_clip::<f32>(&AvatarTemplate::builtin(0, 32), &phon, &bank, 1, 21, &ClipOptions::default()).unwrap();
    let cfg = RecognizerTrainConfig::default();
    let (model, log) = train_recognizer(std::slice::from_ref(&clip), &cfg).unwrap();
    let first = log.head_mean("hybrid", 10);
    let last = log.tail_mean("hybrid", 10);
    assert!(last < 0.2 * first, "loss {first} -> {last}");
    let means = log.window_means("hybrid", 50);
    assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
    assert_eq!(model.greedy_decode(&clip.audio).unwrap(), clip.phonemes);
}
