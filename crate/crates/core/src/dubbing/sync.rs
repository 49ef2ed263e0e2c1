use avatarkit_tensor::nn::{Conv2d, Linear};
use avatarkit_tensor::{seeded_rng, Adam, Array, Graph, ParamStore, Scalar, Session, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{invalid, Result};
use crate::syndata::{audio_window, SyntheticClip, AUDIO_DIM};
use crate::train::{check_grads, TrainLog};

pub const SYNC_MODULE: &str = "sync";

/// Apertures closer than this are not used as mismatched pairs.
pub const NEGATIVE_MIN_GAP: f64 = 0.15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyncConfig {
    pub resolution: usize,
    pub audio_window: usize,
    pub audio_dim: usize,
    pub audio_hidden: usize,
    pub visual_channels: [usize; 2],
    pub embed: usize,
    pub seed: u64,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            audio_window: 9,
            audio_dim: AUDIO_DIM,
            audio_hidden: 64,
            visual_channels: [8, 16],
            embed: 16,
            seed: 4,
        }
    }
}

/// Audio-visual sync scorer: an audio-window branch and a lower-face
/// branch compared by cosine, squashed to `[0, 1]`.
#[derive(Clone, Debug)]
pub struct SyncScorer<T> {
    pub cfg: SyncConfig,
    pub store: ParamStore<T>,
    /// Training steps behind the current weights; 0 means untrained.
    pub trained_steps: u64,
    audio: [Linear; 2],
    visual: [Conv2d; 2],
    visual_head: Linear,
    temperature: avatarkit_tensor::ParamId,
    offset: avatarkit_tensor::ParamId,
}

fn normalize<'g, T: Scalar>(v: Var<'g, T>) -> Var<'g, T> {
    v / v.square().sum_axis(1, true).add_scalar(1e-12).sqrt()
}

impl<T: Scalar> SyncScorer<T> {
    pub fn new(cfg: SyncConfig) -> Result<Self> {
        if cfg.resolution < 8 || cfg.resolution % 8 != 0 {
            return Err(invalid(format!("sync scorer resolution {} must be a multiple of 8", cfg.resolution)));
        }
        if cfg.audio_window == 0 || cfg.embed == 0 {
            return Err(invalid("sync scorer needs a non-empty audio window and embedding"));
        }
        let mut rng = seeded_rng(cfg.seed);
        let mut store = ParamStore::new();
        let audio = [
            Linear::new(&mut store, &mut rng, "sync.audio0", cfg.audio_window * cfg.audio_dim, cfg.audio_hidden),
            Linear::new(&mut store, &mut rng, "sync.audio1", cfg.audio_hidden, cfg.embed),
        ];
        let [c0, c1] = cfg.visual_channels;
        let visual = [
            Conv2d::new(&mut store, &mut rng, "sync.visual0", 3, c0, 3, 2, 1),
            Conv2d::new(&mut store, &mut rng, "sync.visual1", c0, c1, 3, 2, 1),
        ];
        let flat = c1 * (cfg.resolution / 8) * (cfg.resolution / 4);
        let visual_head = Linear::new(&mut store, &mut rng, "sync.visual_head", flat, cfg.embed);
        let temperature = store.add("sync.temperature", Array::full(&[1], T::of(5.0)));
        let offset = store.add("sync.offset", Array::zeros(&[1]));
        Ok(Self { cfg, store, trained_steps: 0, audio, visual, visual_head, temperature, offset })
    }

    fn check(&self, windows: &[usize], frames: &[usize]) -> Result<()> {
        let r = self.cfg.resolution;
        if windows.len() != 3 || windows[1] != self.cfg.audio_window || windows[2] != self.cfg.audio_dim {
            return Err(invalid(format!(
                "sync scorer takes [B, {}, {}] audio windows, got {windows:?}",
                self.cfg.audio_window, self.cfg.audio_dim
            )));
        }
        if frames != [windows[0], 3, r, r] {
            return Err(invalid(format!("sync scorer takes [{}, 3, {r}, {r}] frames, got {frames:?}", windows[0])));
        }
        Ok(())
    }

    /// Unnormalised audio embedding of `[B, window, dim]`.
    pub fn embed_audio<'g>(&self, s: &Session<'g, '_, T>, windows: Var<'g, T>) -> Var<'g, T> {
        let b = windows.shape()[0];
        let x = windows.reshape(&[b, self.cfg.audio_window * self.cfg.audio_dim]);
        let h = self.audio[0].forward(s, x).leaky_relu(0.2);
        self.audio[1].forward(s, h)
    }

    /// Unnormalised embedding of the lower half of `[B, 3, R, R]` frames.
    pub fn embed_visual<'g>(&self, s: &Session<'g, '_, T>, frames: Var<'g, T>) -> Var<'g, T> {
        let r = self.cfg.resolution;
        let b = frames.shape()[0];
        let crop = frames.narrow(2, r / 2, r / 2);
        let h = self.visual[0].forward(s, crop).leaky_relu(0.2);
        let h = self.visual[1].forward(s, h).leaky_relu(0.2);
        let flat = h.shape()[1..].iter().product();
        self.visual_head.forward(s, h.reshape(&[b, flat]))
    }

    /// Cosine similarity `[B, 1]` of the two branches.
    pub fn cosine_var<'g>(&self, s: &Session<'g, '_, T>, windows: Var<'g, T>, frames: Var<'g, T>) -> Var<'g, T> {
        let a = normalize(self.embed_audio(s, windows));
        let v = normalize(self.embed_visual(s, frames));
        (a * v).sum_axis(1, true)
    }

    /// Pre-sigmoid score `[B, 1]`.
    pub fn logit_var<'g>(&self, s: &Session<'g, '_, T>, windows: Var<'g, T>, frames: Var<'g, T>) -> Var<'g, T> {
        self.cosine_var(s, windows, frames) * s.param(self.temperature) + s.param(self.offset)
    }

    /// Sync score in `[0, 1]`, `[B, 1]`.
    pub fn score_var<'g>(&self, s: &Session<'g, '_, T>, windows: Var<'g, T>, frames: Var<'g, T>) -> Var<'g, T> {
        self.logit_var(s, windows, frames).sigmoid()
    }

    pub fn scores(&self, windows: &Array<T>, frames: &Array<T>) -> Result<Vec<f64>> {
        self.check(windows.shape(), frames.shape())?;
        let g = Graph::new();
        let s = Session::new(&g, &self.store).frozen();
        let out = self.score_var(&s, s.constant(windows.clone()), s.constant(frames.clone()));
        let v = out.value().to_f64_vec();
        Ok(v)
    }

    /// Unit-norm audio and visual embeddings, each `[B, embed]`.
    pub fn embeddings(&self, windows: &Array<T>, frames: &Array<T>) -> Result<(Array<f64>, Array<f64>)> {
        self.check(windows.shape(), frames.shape())?;
        let g = Graph::new();
        let s = Session::new(&g, &self.store).frozen();
        let a = normalize(self.embed_audio(&s, s.constant(windows.clone())));
        let v = normalize(self.embed_visual(&s, s.constant(frames.clone())));
        Ok((a.value().cast(), v.value().cast()))
    }

    pub fn to_checkpoint(&self, summary: serde_json::Value) -> Checkpoint {
        Checkpoint::new(
            SYNC_MODULE,
            self.trained_steps,
            &self.cfg,
            &[("resolution", self.cfg.resolution), ("audio_window", self.cfg.audio_window), ("embed", self.cfg.embed)],
            &self.store,
        )
        .with_summary(summary)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_module(SYNC_MODULE)?;
        let mut model = Self::new(ckpt.config()?)?;
        ckpt.load_into(&mut model.store)?;
        model.trained_steps = ckpt.meta.step;
        Ok(model)
    }
}

/// Audio windows of every video frame of a clip, `[T, window, dim]`.
pub fn clip_windows<T: Scalar>(audio: &Array<T>, frames: usize, audio_per_video: usize, window: usize) -> Array<T> {
    let parts: Vec<Array<T>> = (0..frames).map(|t| audio_window(audio, t, audio_per_video, window)).collect();
    Array::stack(&parts)
}

/// A frame index whose aperture differs from frame `t` by at least
/// [`NEGATIVE_MIN_GAP`], if the clip has one.
pub fn mismatched_frame<T: Scalar>(clip: &SyntheticClip<T>, t: usize, rng: &mut impl Rng) -> Option<usize> {
    let a = clip.mouth_aperture[t].f64();
    let candidates: Vec<usize> =
        (0..clip.num_frames()).filter(|&u| (clip.mouth_aperture[u].f64() - a).abs() >= NEGATIVE_MIN_GAP).collect();
    if candidates.is_empty() {
        None
    } else {
        Some(candidates[rng.random_range(0..candidates.len())])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyncTrainConfig {
    pub model: SyncConfig,
    pub steps: usize,
    /// Matched pairs per step; as many mismatched pairs are added.
    pub batch: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for SyncTrainConfig {
    fn default() -> Self {
        Self { model: SyncConfig::default(), steps: 3000, batch: 16, lr: 2e-3, clip_norm: 5.0, seed: 23 }
    }
}

/// Matched and mismatched training pair: `(clip, frame, audio frame)`.
fn sample_pair<T: Scalar>(clips: &[SyntheticClip<T>], rng: &mut impl Rng, matched: bool) -> (usize, usize, usize, usize) {
    loop {
        let c = rng.random_range(0..clips.len());
        let t = rng.random_range(0..clips[c].num_frames());
        if matched {
            return (c, t, c, t);
        }
        if rng.random_bool(0.5) {
            if let Some(u) = mismatched_frame(&clips[c], t, rng) {
                return (c, t, c, u);
            }
        } else {
            let c2 = rng.random_range(0..clips.len());
            let u = rng.random_range(0..clips[c2].num_frames());
            if (clips[c2].mouth_aperture[u].f64() - clips[c].mouth_aperture[t].f64()).abs() >= NEGATIVE_MIN_GAP {
                return (c, t, c2, u);
            }
        }
    }
}

fn pair_batch<T: Scalar>(clips: &[SyntheticClip<T>], pairs: &[(usize, usize, usize, usize)], window: usize) -> (Array<T>, Array<T>) {
    let frames: Vec<Array<T>> = pairs.iter().map(|&(c, t, _, _)| clips[c].frame(t)).collect();
    let windows: Vec<Array<T>> = pairs.iter().map(|&(_, _, c, u)| clips[c].audio_window(u, window)).collect();
    (Array::stack(&windows), Array::concat0(&frames))
}

/// Fraction of frames whose matched audio window outscores a mismatched one.
/// Clips without any usable mismatch are skipped.
pub fn sync_accuracy<T: Scalar>(scorer: &SyncScorer<T>, clips: &[SyntheticClip<T>], seed: u64) -> Result<f64> {
    let mut rng = avatarkit_tensor::seeded_rng(seed);
    let w = scorer.cfg.audio_window;
    let (mut right, mut total) = (0usize, 0usize);
    for (c, clip) in clips.iter().enumerate() {
        let mut pairs = Vec::new();
        for t in 0..clip.num_frames() {
            if let Some(u) = mismatched_frame(clip, t, &mut rng) {
                pairs.push((c, t, c, t));
                pairs.push((c, t, c, u));
            }
        }
        if pairs.is_empty() {
            continue;
        }
        let (win, fr) = pair_batch(clips, &pairs, w);
        let s = scorer.scores(&win, &fr)?;
        for k in (0..s.len()).step_by(2) {
            total += 1;
            if s[k] > s[k + 1] {
                right += 1;
            }
        }
    }
    if total == 0 {
        return Err(invalid("no clip offers a mismatched frame to compare against"));
    }
    Ok(right as f64 / total as f64)
}

/// The clip's audio track played backwards, `[T * r, dim]`.
pub fn reversed_audio<T: Scalar>(audio: &Array<T>) -> Array<T> {
    let rows: Vec<Array<T>> = (0..audio.shape()[0]).rev().map(|i| audio.index_axis0(i)).collect();
    Array::stack(&rows)
}

/// Mean per-frame score of a clip's frames against an audio track.
pub fn clip_score<T: Scalar>(scorer: &SyncScorer<T>, clip: &SyntheticClip<T>, audio: &Array<T>) -> Result<f64> {
    let t = clip.num_frames();
    let win = clip_windows(audio, t, clip.audio_per_video, scorer.cfg.audio_window);
    let s = scorer.scores(&win, &clip.frames)?;
    Ok(s.iter().sum::<f64>() / t as f64)
}

/// Fraction of clips whose own audio outscores the same audio reversed.
pub fn reversal_accuracy<T: Scalar>(scorer: &SyncScorer<T>, clips: &[SyntheticClip<T>]) -> Result<f64> {
    if clips.is_empty() {
        return Err(invalid("no clips to rank"));
    }
    let mut right = 0;
    for clip in clips {
        if clip_score(scorer, clip, &clip.audio)? > clip_score(scorer, clip, &reversed_audio(&clip.audio))? {
            right += 1;
        }
    }
    Ok(right as f64 / clips.len() as f64)
}

/// Binary cross-entropy on matched (label 1) versus mismatched (label 0)
/// audio-frame pairs. Returns the scorer, its log and the held-out accuracy.
pub fn train_sync_scorer<T: Scalar>(
    train: &[SyntheticClip<T>],
    val: &[SyntheticClip<T>],
    cfg: &SyncTrainConfig,
) -> Result<(SyncScorer<T>, TrainLog, f64)> {
    if train.is_empty() || val.is_empty() {
        return Err(invalid("sync training needs training and validation clips"));
    }
    if train.iter().chain(val).any(|c| c.num_frames() < 2) {
        return Err(invalid("sync training needs clips of at least 2 frames to form mismatched pairs"));
    }
    let apertures = train.iter().flat_map(|c| c.mouth_aperture.iter().map(|a| a.f64()));
    let (lo, hi) = apertures.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), a| (l.min(a), h.max(a)));
    if hi - lo < NEGATIVE_MIN_GAP {
        return Err(invalid("training clips have no mouth movement to tell pairs apart"));
    }
    let mut scorer = SyncScorer::<T>::new(cfg.model.clone())?;
    for c in train.iter().chain(val) {
        scorer.check(&[1, scorer.cfg.audio_window, c.audio.shape()[1]], &[1, 3, c.resolution(), c.resolution()])?;
    }
    let mut opt = Adam::all(&scorer.store, cfg.lr);
    let mut rng = seeded_rng(cfg.seed);
    let mut log = TrainLog::default();
    let w = scorer.cfg.audio_window;
    for step in 0..cfg.steps {
        let mut pairs: Vec<_> = (0..cfg.batch).map(|_| sample_pair(train, &mut rng, true)).collect();
        pairs.extend((0..cfg.batch).map(|_| sample_pair(train, &mut rng, false)));
        let (win, fr) = pair_batch(train, &pairs, w);
        let sign: Vec<f64> = (0..2 * cfg.batch).map(|i| if i < cfg.batch { -1.0 } else { 1.0 }).collect();
        let g = Graph::new();
        let s = Session::new(&g, &scorer.store);
        let z = scorer.logit_var(&s, s.constant(win), s.constant(fr));
        // -log sigmoid(z) for matched, -log(1 - sigmoid(z)) for mismatched
        let loss = (z * s.constant(Array::from_f64(&[2 * cfg.batch, 1], &sign))).softplus().mean();
        log.record("sync_bce", step, loss.item().f64())?;
        let mut grads = s.param_grads(&g.backward(loss));
        check_grads(&grads, "sync_bce", step)?;
        grads.clip_norm(cfg.clip_norm);
        drop(s);
        opt.step(&mut scorer.store, &grads);
    }
    scorer.trained_steps = cfg.steps as u64;
    log.steps = cfg.steps;
    let acc = sync_accuracy(&scorer, val, cfg.seed ^ 0xacc)?;
    log::info!("sync scorer held-out accuracy {acc:.3}");
    Ok((scorer, log, acc))
}
