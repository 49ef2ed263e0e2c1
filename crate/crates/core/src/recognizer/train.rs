use avatarkit_tensor::{seeded_rng, Adam, Graph, Scalar, Session};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{HybridLossConfig, RecognizerConfig, RecognizerModel};
use crate::checkpoint::Checkpoint;
use crate::error::{invalid, Result};
use crate::syndata::SyntheticClip;
use crate::train::{check_grads, TrainLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecognizerTrainConfig {
    pub model: RecognizerConfig,
    pub loss: HybridLossConfig,
    pub steps: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for RecognizerTrainConfig {
    fn default() -> Self {
        Self {
            model: RecognizerConfig::default(),
            loss: HybridLossConfig::default(),
            steps: 300,
            lr: 3e-3,
            clip_norm: 5.0,
            seed: 11,
        }
    }
}

/// One clip per step, cycling through a seeded shuffle of `clips`.
pub fn train_recognizer<T: Scalar>(
    clips: &[SyntheticClip<T>],
    cfg: &RecognizerTrainConfig,
) -> Result<(RecognizerModel<T>, TrainLog)> {
    if clips.is_empty() {
        return Err(invalid("recognizer training needs at least one clip"));
    }
    cfg.loss.validate()?;
    let mut model = RecognizerModel::<T>::new(cfg.model.clone())?;
    let mut opt = Adam::all(&model.store, cfg.lr);
    let mut order: Vec<usize> = (0..clips.len()).collect();
    let mut rng = seeded_rng(cfg.seed);
    let mut log = TrainLog::default();
    for step in 0..cfg.steps {
        if step % clips.len() == 0 {
            order.shuffle(&mut rng);
        }
        let clip = &clips[order[step % clips.len()]];
        let g = Graph::new();
        let s = Session::new(&g, &model.store);
        let loss = model.hybrid_loss_var(&s, &clip.audio, &clip.phonemes, &cfg.loss)?;
        log.record("hybrid", step, loss.item().f64())?;
        let mut grads = s.param_grads(&g.backward(loss));
        check_grads(&grads, "hybrid", step)?;
        grads.clip_norm(cfg.clip_norm);
        drop(s);
        opt.step(&mut model.store, &grads);
        if step % 50 == 0 {
            log::info!("recognizer step {step}: hybrid loss {:.4}", loss.item().f64());
        }
    }
    log.steps = cfg.steps;
    Ok((model, log))
}

impl<T: Scalar> RecognizerModel<T> {
    pub fn checkpoint_with_log(&self, log: &TrainLog) -> Checkpoint {
        self.to_checkpoint(log.steps as u64).with_summary(log.summary())
    }
}
