use avatarkit_tensor::{seeded_rng, Adam, Array, Graph, Scalar, Session};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::losses::{dubbing_total_loss, DubbingWeights};
use super::model::{DubbingConfig, DubbingModel};
use super::sync::SyncScorer;
use crate::error::{invalid, Result};
use crate::syndata::SyntheticClip;
use crate::train::{check_grads, TrainLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DubbingTrainConfig {
    pub model: DubbingConfig,
    pub weights: DubbingWeights,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub disc_lr: f64,
    pub clip_norm: f64,
    /// Reject an untrained sync scorer instead of only warning.
    pub strict_sync: bool,
    /// Clip frame used as the reference image of every sample.
    pub reference_frame: usize,
    /// Steps between evaluations of the sync loss on a fixed probe batch.
    pub probe_every: usize,
    pub seed: u64,
}

impl Default for DubbingTrainConfig {
    fn default() -> Self {
        Self {
            model: DubbingConfig::default(),
            weights: DubbingWeights::default(),
            steps: 500,
            batch: 8,
            lr: 2e-3,
            disc_lr: 1e-3,
            clip_norm: 5.0,
            strict_sync: true,
            reference_frame: 0,
            probe_every: 25,
            seed: 29,
        }
    }
}

/// `(source frames, reference frames, audio windows)` for `(clip, frame)` pairs.
pub fn dubbing_batch<T: Scalar>(
    clips: &[SyntheticClip<T>],
    picks: &[(usize, usize)],
    reference_frame: usize,
    window: usize,
) -> (Array<T>, Array<T>, Array<T>) {
    let src: Vec<Array<T>> = picks.iter().map(|&(c, t)| clips[c].frame(t)).collect();
    let reference: Vec<Array<T>> =
        picks.iter().map(|&(c, _)| clips[c].frame(reference_frame.min(clips[c].num_frames() - 1))).collect();
    let win: Vec<Array<T>> = picks.iter().map(|&(c, t)| clips[c].audio_window(t, window)).collect();
    (Array::concat0(&src), Array::concat0(&reference), Array::stack(&win))
}

/// Rejects (strict) or warns about a scorer that never saw training.
pub fn check_scorer<T: Scalar>(scorer: &SyncScorer<T>, strict: bool) -> Result<()> {
    if scorer.trained_steps == 0 {
        log::warn!("sync scorer is untrained; the lip-sync loss carries no signal");
        if strict {
            return Err(invalid("sync scorer checkpoint is untrained (0 steps)"));
        }
    }
    Ok(())
}

/// Alternating generator and discriminator updates against a frozen sync
/// scorer. Each sample re-synthesises a clip frame from its masked self, the
/// clip's reference frame and the frame's audio window.
pub fn train_dubbing<T: Scalar>(
    clips: &[SyntheticClip<T>],
    scorer: &SyncScorer<T>,
    cfg: &DubbingTrainConfig,
) -> Result<(DubbingModel<T>, TrainLog)> {
    if clips.is_empty() {
        return Err(invalid("dubbing training needs at least one clip"));
    }
    if cfg.batch == 0 {
        return Err(invalid("dubbing batch must be positive"));
    }
    check_scorer(scorer, cfg.strict_sync)?;
    cfg.weights.validate()?;
    let mut model = DubbingModel::<T>::new(cfg.model.clone())?;
    let window = model.cfg.audio_window;
    let frames: Vec<(usize, usize)> =
        clips.iter().enumerate().flat_map(|(c, clip)| (0..clip.num_frames()).map(move |t| (c, t))).collect();
    let probe: Vec<(usize, usize)> = frames.iter().copied().take(cfg.batch).collect();
    let (p_src, p_ref, p_win) = dubbing_batch(clips, &probe, cfg.reference_frame, window);
    model.check_inputs(p_src.shape(), p_ref.shape(), p_win.shape())?;

    let mut gen_opt = Adam::new(&model.store, model.generator_ids(), cfg.lr).with_betas(0.5, 0.999);
    let mut disc_opt = Adam::new(&model.store, model.discriminator_ids(), cfg.disc_lr).with_betas(0.5, 0.999);
    let mut rng = seeded_rng(cfg.seed);
    let mut log = TrainLog::default();
    for step in 0..cfg.steps {
        if cfg.probe_every > 0 && step % cfg.probe_every == 0 {
            let g = Graph::new();
            let s = Session::new(&g, &model.store).frozen();
            let (_, c) = model.generator_components(&s, scorer, &p_src, &p_ref, &p_win)?;
            log.record("probe_sync", step, c.sync.item().f64())?;
        }
        let picks: Vec<(usize, usize)> = if frames.len() <= cfg.batch {
            frames.clone()
        } else {
            (0..cfg.batch).map(|_| frames[rng.random_range(0..frames.len())]).collect()
        };
        let (src, reference, win) = dubbing_batch(clips, &picks, cfg.reference_frame, window);

        let fake = {
            let g = Graph::new();
            let s = Session::new(&g, &model.store);
            let (out, c) = model.generator_components(&s, scorer, &src, &reference, &win)?;
            let total = dubbing_total_loss(&c, &cfg.weights)?;
            for (name, v) in [("perception", c.perception), ("sync", c.sync), ("gan", c.gan), ("generator", total)] {
                log.record(name, step, v.item().f64())?;
            }
            let mut grads = s.param_grads(&g.backward(total));
            check_grads(&grads, "generator", step)?;
            grads.clip_norm(cfg.clip_norm);
            let fake = (*out.value()).clone();
            drop(s);
            gen_opt.step(&mut model.store, &grads);
            fake
        };

        let g = Graph::new();
        let s = Session::new(&g, &model.store);
        let d_loss = model.discriminator_loss(&s, &src, &fake)?;
        log.record("discriminator", step, d_loss.item().f64())?;
        let mut grads = s.param_grads(&g.backward(d_loss));
        check_grads(&grads, "discriminator", step)?;
        grads.clip_norm(cfg.clip_norm);
        drop(s);
        disc_opt.step(&mut model.store, &grads);
        if step % 100 == 0 {
            log::info!("dubbing step {step}: perception {:.4}", log.series("perception").last().copied().unwrap_or(0.0));
        }
    }
    log.steps = cfg.steps;
    Ok((model, log))
}
