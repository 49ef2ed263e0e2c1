use avatarkit_tensor::nn::{Conv2d, Linear};
use avatarkit_tensor::{concat, seeded_rng, Array, Graph, ParamId, ParamStore, Scalar, Session, Var};
use serde::{Deserialize, Serialize};

use super::adaat::{adaat_transform, ADAAT_PARAMS};
use super::losses::{
    dubbing_total_loss, lip_sync_loss, lsgan_discriminator_loss, lsgan_generator_loss, perception_loss,
    DubbingLossComponents, DubbingWeights, PerceptionNet,
};
use super::sync::SyncScorer;
use crate::checkpoint::Checkpoint;
use crate::error::{invalid, Result};
use crate::syndata::AUDIO_DIM;

pub const MODULE: &str = "dubbing";

pub const GEN_PREFIX: &str = "dub.gen.";
pub const DISC_PREFIX: &str = "dub.disc.";

const SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DubbingConfig {
    pub resolution: usize,
    /// Audio frames seen per video frame.
    pub audio_window: usize,
    pub audio_dim: usize,
    pub audio_hidden: usize,
    pub audio_embed: usize,
    /// Encoder widths at full and half resolution.
    pub channels: [usize; 2],
    pub head_hidden: usize,
    pub disc_channels: usize,
    /// Source rows and columns hidden from the source encoder, as fractions
    /// of the resolution.
    pub mask_rows: [f64; 2],
    pub mask_cols: [f64; 2],
    pub perception_widths: Vec<usize>,
    pub perception_seed: u64,
    pub seed: u64,
}

impl Default for DubbingConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            audio_window: 9,
            audio_dim: AUDIO_DIM,
            audio_hidden: 64,
            audio_embed: 32,
            channels: [8, 16],
            head_hidden: 64,
            disc_channels: 8,
            mask_rows: [0.40, 0.92],
            mask_cols: [0.25, 0.75],
            perception_widths: vec![8, 16, 16],
            perception_seed: 0x5eed,
            seed: 6,
        }
    }
}

#[derive(Clone, Debug)]
struct Encoder {
    conv0: Conv2d,
    conv1: Conv2d,
}

impl Encoder {
    fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut avatarkit_tensor::ChaCha8Rng, name: &str, c: [usize; 2]) -> Self {
        Self {
            conv0: Conv2d::new(store, rng, &format!("{name}0"), 3, c[0], 3, 1, 1),
            conv1: Conv2d::new(store, rng, &format!("{name}1"), c[0], c[1], 3, 2, 1),
        }
    }

    /// `(full-resolution skip, half-resolution feature)`.
    fn forward<'g, T: Scalar>(&self, s: &Session<'g, '_, T>, x: Var<'g, T>) -> (Var<'g, T>, Var<'g, T>) {
        let h0 = self.conv0.forward(s, x).leaky_relu(SLOPE);
        let h1 = self.conv1.forward(s, h0).leaky_relu(SLOPE);
        (h0, h1)
    }
}

/// Everything one generator pass produced.
pub struct DubbingPass<'g, T> {
    pub output: Var<'g, T>,
    /// `[B, C, 4]` warp parameters applied to the reference feature.
    pub adaat: Var<'g, T>,
}

/// Audio encoder, source/reference/alignment encoders, AdaAT head,
/// inpainting decoder and a patch discriminator.
#[derive(Clone, Debug)]
pub struct DubbingModel<T> {
    pub cfg: DubbingConfig,
    pub store: ParamStore<T>,
    perception: PerceptionNet<T>,
    audio: [Linear; 2],
    source_enc: Encoder,
    reference_enc: Encoder,
    align: [Conv2d; 2],
    head: [Linear; 2],
    decoder: [Conv2d; 4],
    disc: [Conv2d; 3],
    mask: Array<T>,
}

impl<T: Scalar> DubbingModel<T> {
    pub fn new(cfg: DubbingConfig) -> Result<Self> {
        let r = cfg.resolution;
        if r < 8 || r % 8 != 0 {
            return Err(invalid(format!("dubbing resolution {r} must be a multiple of 8")));
        }
        if cfg.audio_window == 0 || cfg.channels.contains(&0) || cfg.perception_widths.is_empty() {
            return Err(invalid("dubbing needs an audio window, positive widths and a perception net"));
        }
        for [a, b] in [cfg.mask_rows, cfg.mask_cols] {
            if !(0.0 <= a && a < b && b <= 1.0) {
                return Err(invalid(format!("mask span [{a}, {b}) must be an increasing range in [0, 1]")));
            }
        }
        let mut rng = seeded_rng(cfg.seed);
        let mut store = ParamStore::new();
        let [c0, c1] = cfg.channels;
        let audio = [
            Linear::new(&mut store, &mut rng, "dub.gen.audio0", cfg.audio_window * cfg.audio_dim, cfg.audio_hidden),
            Linear::new(&mut store, &mut rng, "dub.gen.audio1", cfg.audio_hidden, cfg.audio_embed),
        ];
        let source_enc = Encoder::new(&mut store, &mut rng, "dub.gen.source", cfg.channels);
        let reference_enc = Encoder::new(&mut store, &mut rng, "dub.gen.reference", cfg.channels);
        let align = [
            Conv2d::new(&mut store, &mut rng, "dub.gen.align0", 2 * c1, c1, 3, 2, 1),
            Conv2d::new(&mut store, &mut rng, "dub.gen.align1", c1, c1, 3, 2, 1),
        ];
        let head0 = Linear::new(&mut store, &mut rng, "dub.gen.head0", cfg.audio_embed + c1, cfg.head_hidden);
        let head1 = Linear::new(&mut store, &mut rng, "dub.gen.head1", cfg.head_hidden, ADAAT_PARAMS * c1);
        // start close to the identity warp: unit scale, no rotation or shift
        store.get_mut(head1.w).data_mut().iter_mut().for_each(|w| *w = *w * T::of(0.1));
        let b = store.get_mut(head1.b.expect("bias"));
        for k in 0..c1 {
            b.data_mut()[k * ADAAT_PARAMS] = T::of((std::f64::consts::E - 1.0).ln());
        }
        let decoder = [
            Conv2d::new(&mut store, &mut rng, "dub.gen.dec0", 2 * c1, c1, 3, 1, 1),
            Conv2d::new(&mut store, &mut rng, "dub.gen.dec1", c1, c1, 3, 1, 1),
            Conv2d::new(&mut store, &mut rng, "dub.gen.dec2", c1 + c0, c0, 3, 1, 1),
            Conv2d::new(&mut store, &mut rng, "dub.gen.dec3", c0, 3, 3, 1, 1),
        ];
        let d = cfg.disc_channels;
        let disc = [
            Conv2d::new(&mut store, &mut rng, "dub.disc.0", 3, d, 3, 2, 1),
            Conv2d::new(&mut store, &mut rng, "dub.disc.1", d, 2 * d, 3, 2, 1),
            Conv2d::new(&mut store, &mut rng, "dub.disc.2", 2 * d, 1, 3, 1, 1),
        ];
        let span = |[a, b]: [f64; 2]| ((a * r as f64).floor() as usize, ((b * r as f64).ceil() as usize).min(r));
        let ((y0, y1), (x0, x1)) = (span(cfg.mask_rows), span(cfg.mask_cols));
        let mut mask = Array::ones(&[1, 1, r, r]);
        for y in y0..y1 {
            for x in x0..x1 {
                mask.set(&[0, 0, y, x], T::zero());
            }
        }
        let perception = PerceptionNet::new(&cfg.perception_widths, cfg.perception_seed);
        Ok(Self { cfg, store, perception, audio, source_enc, reference_enc, align, head: [head0, head1], decoder, disc, mask })
    }

    pub fn generator_ids(&self) -> Vec<ParamId> {
        self.store.ids_with_prefix(GEN_PREFIX)
    }

    pub fn discriminator_ids(&self) -> Vec<ParamId> {
        self.store.ids_with_prefix(DISC_PREFIX)
    }

    pub fn perception_net(&self) -> &PerceptionNet<T> {
        &self.perception
    }

    /// `[1, 1, R, R]` multiplier that blanks the mouth area of source frames.
    pub fn source_mask(&self) -> &Array<T> {
        &self.mask
    }

    pub fn check_inputs(&self, source: &[usize], reference: &[usize], windows: &[usize]) -> Result<()> {
        let r = self.cfg.resolution;
        let b = source.first().copied().unwrap_or(0);
        if source != [b, 3, r, r] || reference != [b, 3, r, r] {
            return Err(invalid(format!(
                "dubbing takes [B, 3, {r}, {r}] source and reference frames, got {source:?} and {reference:?}"
            )));
        }
        if windows != [b, self.cfg.audio_window, self.cfg.audio_dim] {
            return Err(invalid(format!(
                "audio window must be [{b}, {}, {}], got {windows:?}",
                self.cfg.audio_window, self.cfg.audio_dim
            )));
        }
        Ok(())
    }

    pub fn forward<'g>(
        &self,
        s: &Session<'g, '_, T>,
        source: Var<'g, T>,
        reference: Var<'g, T>,
        windows: Var<'g, T>,
    ) -> DubbingPass<'g, T> {
        let b = source.shape()[0];
        let [_, c1] = self.cfg.channels;
        let a = windows.reshape(&[b, self.cfg.audio_window * self.cfg.audio_dim]);
        let f_audio = self.audio[1].forward(s, self.audio[0].forward(s, a).leaky_relu(SLOPE)).leaky_relu(SLOPE);
        let (skip, f_s) = self.source_enc.forward(s, source * s.constant(self.mask.clone()));
        let (_, f_r) = self.reference_enc.forward(s, reference);
        let h = self.align[0].forward(s, concat(&[f_s, f_r], 1)).leaky_relu(SLOPE);
        let h = self.align[1].forward(s, h).leaky_relu(SLOPE);
        let [_, c, hh, ww] = h.shape()[..] else { unreachable!() };
        let f_align = h.reshape(&[b, c, hh * ww]).mean_axis(2, false);
        let fused = concat(&[f_audio, f_align], 1);
        let raw = self.head[1].forward(s, self.head[0].forward(s, fused).leaky_relu(SLOPE)).reshape(&[b, c1, ADAAT_PARAMS]);
        let scale = raw.narrow(2, 0, 1).softplus().add_scalar(1e-3);
        let params = concat(&[scale, raw.narrow(2, 1, ADAAT_PARAMS - 1)], 2);
        let f_d = adaat_transform(f_r, params).expect("shapes fixed by construction");
        let h = self.decoder[0].forward(s, concat(&[f_s, f_d], 1)).leaky_relu(SLOPE);
        let h = self.decoder[1].forward(s, h).leaky_relu(SLOPE).upsample_nearest(2);
        let h = self.decoder[2].forward(s, concat(&[h, skip], 1)).leaky_relu(SLOPE);
        DubbingPass { output: self.decoder[3].forward(s, h).sigmoid(), adaat: params }
    }

    /// Patch scores of the discriminator.
    pub fn discriminate<'g>(&self, s: &Session<'g, '_, T>, img: Var<'g, T>) -> Var<'g, T> {
        let h = self.disc[0].forward(s, img).leaky_relu(SLOPE);
        let h = self.disc[1].forward(s, h).leaky_relu(SLOPE);
        self.disc[2].forward(s, h)
    }

    /// Dubs one frame or a batch: `source` and `reference` are `[B, 3, R, R]`
    /// (or `[3, R, R]`), `audio_window` is `[B, window, dim]` (or
    /// `[window, dim]`).
    pub fn dub_frame(&self, source: &Array<T>, reference: &Array<T>, audio_window: &Array<T>) -> Result<Array<T>> {
        let lift = |a: &Array<T>, rank: usize| {
            if a.ndim() + 1 == rank {
                let mut s = vec![1];
                s.extend_from_slice(a.shape());
                a.reshape(&s)
            } else {
                a.clone()
            }
        };
        let (src, reference, win) = (lift(source, 4), lift(reference, 4), lift(audio_window, 3));
        self.check_inputs(src.shape(), reference.shape(), win.shape())?;
        let g = Graph::new();
        let s = Session::new(&g, &self.store).frozen();
        let out = self.forward(&s, s.constant(src), s.constant(reference), s.constant(win)).output;
        let v = (*out.value()).clone();
        Ok(if source.ndim() == 3 { v.reshape(source.shape()) } else { v })
    }

    /// Generator-side loss terms. The scorer, the discriminator and the
    /// perception net are read through frozen views.
    pub fn generator_components<'g>(
        &self,
        s: &Session<'g, '_, T>,
        scorer: &SyncScorer<T>,
        source: &Array<T>,
        reference: &Array<T>,
        windows: &Array<T>,
    ) -> Result<(Var<'g, T>, DubbingLossComponents<'g, T>)> {
        self.check_inputs(source.shape(), reference.shape(), windows.shape())?;
        if scorer.cfg.resolution != self.cfg.resolution || scorer.cfg.audio_window != self.cfg.audio_window {
            return Err(invalid(format!(
                "sync scorer expects {}px frames and {}-frame windows, dubbing uses {}px and {}",
                scorer.cfg.resolution, scorer.cfg.audio_window, self.cfg.resolution, self.cfg.audio_window
            )));
        }
        let g = s.graph();
        let win = s.constant(windows.clone());
        let i_r = s.constant(source.clone());
        let out = self.forward(s, i_r, s.constant(reference.clone()), win).output;
        let perception = perception_loss(out, i_r, &self.perception)?;
        let sync_s = Session::new(g, &scorer.store).frozen();
        let sync = lip_sync_loss(scorer.score_var(&sync_s, win, out));
        let gan = lsgan_generator_loss(self.discriminate(&s.frozen(), out));
        Ok((out, DubbingLossComponents { perception, sync, gan }))
    }

    pub fn generator_loss<'g>(
        &self,
        s: &Session<'g, '_, T>,
        scorer: &SyncScorer<T>,
        source: &Array<T>,
        reference: &Array<T>,
        windows: &Array<T>,
        w: &DubbingWeights,
    ) -> Result<(Var<'g, T>, DubbingLossComponents<'g, T>)> {
        let (_, c) = self.generator_components(s, scorer, source, reference, windows)?;
        Ok((dubbing_total_loss(&c, w)?, c))
    }

    pub fn discriminator_loss<'g>(&self, s: &Session<'g, '_, T>, real: &Array<T>, fake: &Array<T>) -> Result<Var<'g, T>> {
        if real.shape() != fake.shape() {
            return Err(invalid("real and generated batches differ in shape"));
        }
        let dr = self.discriminate(s, s.constant(real.clone()));
        let df = self.discriminate(s, s.constant(fake.clone()));
        Ok(lsgan_discriminator_loss(dr, df))
    }

    pub fn to_checkpoint(&self, step: u64) -> Checkpoint {
        let [_, c1] = self.cfg.channels;
        Checkpoint::new(
            MODULE,
            step,
            &self.cfg,
            &[("resolution", self.cfg.resolution), ("audio_window", self.cfg.audio_window), ("feature_channels", c1)],
            &self.store,
        )
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_module(MODULE)?;
        let mut model = Self::new(ckpt.config()?)?;
        ckpt.load_into(&mut model.store)?;
        Ok(model)
    }
}
