use std::collections::BTreeMap;

use avatarkit_tensor::{seeded_rng, Adam, Array, Graph, Scalar, Session};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::losses::SwapLossWeights;
use super::model::{SwapConfig, SwapModel};
use crate::error::{invalid, Result};
use crate::syndata::SyntheticClip;
use crate::train::{check_grads, TrainLog};

/// Single face images `[1, 3, R, R]` labelled with an identity index.
#[derive(Clone, Debug)]
pub struct FaceSet<T> {
    pub images: Vec<Array<T>>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> FaceSet<T> {
    /// Takes up to `per_clip` evenly spaced frames from every clip; each
    /// distinct template becomes one identity.
    pub fn from_clips<'a>(clips: impl IntoIterator<Item = &'a SyntheticClip<T>>, per_clip: usize) -> Self
    where
        T: 'a,
    {
        let mut ids = BTreeMap::new();
        let mut set = Self { images: Vec::new(), labels: Vec::new() };
        for clip in clips {
            let next = ids.len();
            let label = *ids.entry(clip.template_id.clone()).or_insert(next);
            let n = clip.num_frames();
            let take = per_clip.clamp(1, n);
            for k in 0..take {
                set.images.push(clip.frame(k * n / take));
                set.labels.push(label);
            }
        }
        set
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn identities(&self) -> usize {
        let mut l = self.labels.clone();
        l.sort_unstable();
        l.dedup();
        l.len()
    }

    pub fn batch(&self, indices: &[usize]) -> Array<T> {
        let parts: Vec<Array<T>> = indices.iter().map(|&i| self.images[i].clone()).collect();
        Array::concat0(&parts)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaceSwapTrainConfig {
    pub model: SwapConfig,
    pub weights: SwapLossWeights,
    /// Contrastive pre-training steps of the identity extractor.
    pub id_steps: usize,
    pub id_margin: f64,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub disc_lr: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for FaceSwapTrainConfig {
    fn default() -> Self {
        Self {
            model: SwapConfig::default(),
            weights: SwapLossWeights::default(),
            id_steps: 200,
            id_margin: 0.2,
            steps: 600,
            batch: 4,
            lr: 2e-3,
            disc_lr: 1e-3,
            clip_norm: 5.0,
            seed: 17,
        }
    }
}

/// Margin contrastive objective over all pairs of a batch: same identity
/// pulls cosine to 1, different identities push it below `margin`.
fn contrastive_loss<'g, T: Scalar>(
    model: &SwapModel<T>,
    s: &Session<'g, '_, T>,
    images: &Array<T>,
    labels: &[usize],
    margin: f64,
) -> avatarkit_tensor::Var<'g, T> {
    let b = labels.len();
    let e = model.identity(s, s.constant(images.clone()));
    let e = e / e.square().sum_axis(1, true).add_scalar(1e-12).sqrt();
    let cos = e.matmul(e.t());
    let mut same = vec![0.0; b * b];
    let mut diff = vec![0.0; b * b];
    let mut pairs = 0.0;
    for i in 0..b {
        for j in i + 1..b {
            if labels[i] == labels[j] {
                same[i * b + j] = 1.0;
            } else {
                diff[i * b + j] = 1.0;
            }
            pairs += 1.0;
        }
    }
    let same = s.constant(Array::from_f64(&[b, b], &same));
    let diff = s.constant(Array::from_f64(&[b, b], &diff));
    let pull = (cos.neg().add_scalar(1.0) * same).sum();
    let push = (cos.add_scalar(-margin).relu() * diff).sum();
    (pull + push).scale(1.0 / pairs)
}

/// Identity-extractor pre-training, then alternating generator and
/// discriminator updates. Half of every generator batch is self-swaps,
/// which carry the reconstruction term.
pub fn train_faceswap<T: Scalar>(faces: &FaceSet<T>, cfg: &FaceSwapTrainConfig) -> Result<(SwapModel<T>, TrainLog)> {
    if faces.identities() < 2 {
        return Err(invalid("face-swap training needs faces of at least 2 distinct templates"));
    }
    if cfg.batch < 2 {
        return Err(invalid("face-swap batch must hold at least 2 images"));
    }
    let mut model = SwapModel::<T>::new(cfg.model.clone())?;
    cfg.weights.validate(cfg.model.disc_layers)?;
    for img in &faces.images {
        model.check_images(img.shape())?;
    }
    let mut rng = seeded_rng(cfg.seed);
    let mut log = TrainLog::default();
    let n = faces.len();

    let mut id_opt = Adam::new(&model.store, model.identity_ids(), cfg.lr);
    for step in 0..cfg.id_steps {
        let idx: Vec<usize> = (0..2 * cfg.batch).map(|_| rng.random_range(0..n)).collect();
        let labels: Vec<usize> = idx.iter().map(|&i| faces.labels[i]).collect();
        let g = Graph::new();
        let s = Session::new(&g, &model.store);
        let loss = contrastive_loss(&model, &s, &faces.batch(&idx), &labels, cfg.id_margin);
        log.record("id_contrastive", step, loss.item().f64())?;
        let mut grads = s.param_grads(&g.backward(loss));
        check_grads(&grads, "id_contrastive", step)?;
        grads.clip_norm(cfg.clip_norm);
        drop(s);
        id_opt.step(&mut model.store, &grads);
    }

    let mut gen_opt = Adam::new(&model.store, model.generator_ids(), cfg.lr).with_betas(0.5, 0.999);
    let mut disc_opt = Adam::new(&model.store, model.discriminator_ids(), cfg.disc_lr).with_betas(0.5, 0.999);
    let half = cfg.batch / 2;
    for step in 0..cfg.steps {
        let targets: Vec<usize> = (0..cfg.batch).map(|_| rng.random_range(0..n)).collect();
        let sources: Vec<usize> =
            (0..cfg.batch).map(|i| if i < half { targets[i] } else { rng.random_range(0..n) }).collect();
        let self_pair: Vec<bool> = (0..cfg.batch).map(|i| i < half || sources[i] == targets[i]).collect();
        let (src, tgt) = (faces.batch(&sources), faces.batch(&targets));

        let fake = {
            let g = Graph::new();
            let s = Session::new(&g, &model.store);
            let (i_r, c) = model.generator_components(&s, &src, &tgt, &self_pair, cfg.weights.m)?;
            let total = super::losses::swap_total_loss(&c, &cfg.weights)?;
            for (name, v) in [
                ("identity", c.identity),
                ("reconstruction", c.reconstruction),
                ("adversarial", c.adversarial),
                ("weak_fm", c.weak_fm),
                ("generator", total),
            ] {
                log.record(name, step, v.item().f64())?;
            }
            let mut grads = s.param_grads(&g.backward(total));
            check_grads(&grads, "generator", step)?;
            grads.clip_norm(cfg.clip_norm);
            let fake = (*i_r.value()).clone();
            drop(s);
            gen_opt.step(&mut model.store, &grads);
            fake
        };

        let g = Graph::new();
        let s = Session::new(&g, &model.store);
        let d_loss = model.discriminator_loss(&s, &tgt, &fake)?;
        log.record("discriminator", step, d_loss.item().f64())?;
        let mut grads = s.param_grads(&g.backward(d_loss));
        check_grads(&grads, "discriminator", step)?;
        grads.clip_norm(cfg.clip_norm);
        drop(s);
        disc_opt.step(&mut model.store, &grads);
        if step % 100 == 0 {
            log::info!("faceswap step {step}: rec {:.4}", log.series("reconstruction").last().copied().unwrap_or(0.0));
        }
    }
    log.steps = cfg.steps;
    Ok((model, log))
}
