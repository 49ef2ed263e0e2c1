use avatarkit_tensor::nn::{Conv2d, Linear};
use avatarkit_tensor::{seeded_rng, Array, Graph, ParamId, ParamStore, Scalar, Session, Var};
use serde::{Deserialize, Serialize};

use super::losses::{
    identity_loss, lsgan_discriminator_loss, lsgan_generator_loss, reconstruction_loss, swap_total_loss,
    weak_feature_matching, SwapLossComponents, SwapLossWeights,
};
use crate::checkpoint::Checkpoint;
use crate::error::{invalid, Result};

pub const MODULE: &str = "faceswap";

const SLOPE: f64 = 0.2;

/// Parameter-name prefixes of the four sub-networks.
pub const ID_PREFIX: &str = "id.";
pub const GEN_PREFIX: &str = "gen.";
pub const DISC_PREFIXES: [&str; 2] = ["disc1.", "disc2."];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwapConfig {
    pub resolution: usize,
    /// Encoder widths at full and quarter resolution.
    pub enc_channels: [usize; 2],
    pub res_blocks: usize,
    pub id_channels: [usize; 2],
    pub id_dim: usize,
    pub disc_channels: usize,
    /// Feature layers per discriminator (M).
    pub disc_layers: usize,
    pub seed: u64,
}

impl Default for SwapConfig {
    fn default() -> Self {
        Self {
            resolution: 32,
            enc_channels: [16, 32],
            res_blocks: 2,
            id_channels: [8, 16],
            id_dim: 16,
            disc_channels: 8,
            disc_layers: 4,
            seed: 3,
        }
    }
}

#[derive(Clone, Debug)]
struct InjectionBlock {
    conv_a: Conv2d,
    conv_b: Conv2d,
    film: Linear,
}

#[derive(Clone, Debug)]
struct Discriminator {
    layers: Vec<Conv2d>,
}

impl Discriminator {
    fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut avatarkit_tensor::ChaCha8Rng, prefix: &str, cfg: &SwapConfig) -> Self {
        let m = cfg.disc_layers;
        let mut layers = Vec::with_capacity(m);
        let mut cin = 3;
        for i in 0..m {
            let last = i + 1 == m;
            let cout = if last { 1 } else { cfg.disc_channels << i.min(1) };
            let stride = if i < 2 && !last { 2 } else { 1 };
            layers.push(Conv2d::new(store, rng, &format!("{prefix}{i}"), cin, cout, 3, stride, 1));
            cin = cout;
        }
        Self { layers }
    }

    /// Per-layer activations; the last one is the patch score map.
    fn features<'g, T: Scalar>(&self, s: &Session<'g, '_, T>, x: Var<'g, T>) -> Vec<Var<'g, T>> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(s, h);
            if i + 1 < self.layers.len() {
                h = h.leaky_relu(SLOPE);
            }
            out.push(h);
        }
        out
    }
}

/// Identity extractor, identity-injecting encoder/decoder generator and two
/// discriminators (full and half resolution), all in one parameter store.
#[derive(Clone, Debug)]
pub struct SwapModel<T> {
    pub cfg: SwapConfig,
    pub store: ParamStore<T>,
    id_convs: [Conv2d; 2],
    id_head: Linear,
    enc: [Conv2d; 3],
    blocks: Vec<InjectionBlock>,
    dec: [Conv2d; 3],
    discs: [Discriminator; 2],
}

fn row_normalize<'g, T: Scalar>(v: Var<'g, T>) -> Var<'g, T> {
    v / v.square().sum_axis(1, true).add_scalar(1e-12).sqrt()
}

impl<T: Scalar> SwapModel<T> {
    pub fn new(cfg: SwapConfig) -> Result<Self> {
        if cfg.resolution < 8 || cfg.resolution % 4 != 0 {
            return Err(invalid(format!("face-swap resolution {} must be a multiple of 4, at least 8", cfg.resolution)));
        }
        if cfg.disc_layers < 2 {
            return Err(invalid("discriminators need at least 2 feature layers"));
        }
        if cfg.id_dim == 0 || cfg.enc_channels.contains(&0) || cfg.id_channels.contains(&0) || cfg.disc_channels == 0 {
            return Err(invalid("face-swap widths must be positive"));
        }
        let mut rng = seeded_rng(cfg.seed);
        let mut store = ParamStore::new();
        let [i0, i1] = cfg.id_channels;
        let id_convs = [
            Conv2d::new(&mut store, &mut rng, "id.conv0", 3, i0, 3, 2, 1),
            Conv2d::new(&mut store, &mut rng, "id.conv1", i0, i1, 3, 2, 1),
        ];
        let id_head = Linear::new(&mut store, &mut rng, "id.head", i1, cfg.id_dim);
        let [c0, c1] = cfg.enc_channels;
        let enc = [
            Conv2d::new(&mut store, &mut rng, "gen.enc0", 3, c0, 3, 1, 1),
            Conv2d::new(&mut store, &mut rng, "gen.enc1", c0, c1, 3, 2, 1),
            Conv2d::new(&mut store, &mut rng, "gen.enc2", c1, c1, 3, 2, 1),
        ];
        let blocks = (0..cfg.res_blocks)
            .map(|i| {
                let conv_a = Conv2d::new(&mut store, &mut rng, &format!("gen.block{i}.a"), c1, c1, 3, 1, 1);
                let conv_b = Conv2d::new(&mut store, &mut rng, &format!("gen.block{i}.b"), c1, c1, 3, 1, 1);
                let film = Linear::new(&mut store, &mut rng, &format!("gen.block{i}.film"), cfg.id_dim, 2 * c1);
                InjectionBlock { conv_a, conv_b, film }
            })
            .collect();
        let dec = [
            Conv2d::new(&mut store, &mut rng, "gen.dec0", c1, c0, 3, 1, 1),
            Conv2d::new(&mut store, &mut rng, "gen.dec1", c0, c0, 3, 1, 1),
            Conv2d::new(&mut store, &mut rng, "gen.dec2", c0, 3, 3, 1, 1),
        ];
        let discs = [
            Discriminator::new(&mut store, &mut rng, DISC_PREFIXES[0], &cfg),
            Discriminator::new(&mut store, &mut rng, DISC_PREFIXES[1], &cfg),
        ];
        Ok(Self { cfg, store, id_convs, id_head, enc, blocks, dec, discs })
    }

    pub fn generator_ids(&self) -> Vec<ParamId> {
        self.store.ids_with_prefix(GEN_PREFIX)
    }

    pub fn discriminator_ids(&self) -> Vec<ParamId> {
        DISC_PREFIXES.iter().flat_map(|p| self.store.ids_with_prefix(p)).collect()
    }

    pub fn identity_ids(&self) -> Vec<ParamId> {
        self.store.ids_with_prefix(ID_PREFIX)
    }

    pub fn check_images(&self, x: &[usize]) -> Result<()> {
        let r = self.cfg.resolution;
        if x.len() != 4 || x[1] != 3 || x[2] != r || x[3] != r {
            return Err(invalid(format!("face-swap model takes [B, 3, {r}, {r}] images, got {x:?}")));
        }
        Ok(())
    }

    /// Raw identity embedding `[B, id_dim]`.
    pub fn identity<'g>(&self, s: &Session<'g, '_, T>, img: Var<'g, T>) -> Var<'g, T> {
        let h = self.id_convs[0].forward(s, img).leaky_relu(SLOPE);
        let h = self.id_convs[1].forward(s, h).leaky_relu(SLOPE);
        let [b, c, hh, ww] = h.shape()[..] else { unreachable!() };
        let pooled = h.reshape(&[b, c, hh * ww]).mean_axis(2, false);
        self.id_head.forward(s, pooled)
    }

    /// Renders `target` with the identity `id` (`[B, id_dim]`, any norm).
    pub fn generate<'g>(&self, s: &Session<'g, '_, T>, target: Var<'g, T>, id: Var<'g, T>) -> Var<'g, T> {
        let id = row_normalize(id);
        let mut h = self.enc[0].forward(s, target).leaky_relu(SLOPE);
        h = self.enc[1].forward(s, h).leaky_relu(SLOPE);
        h = self.enc[2].forward(s, h).leaky_relu(SLOPE);
        let c = h.shape()[1];
        let b = h.shape()[0];
        for blk in &self.blocks {
            let film = blk.film.forward(s, id);
            let gamma = film.narrow(1, 0, c).reshape(&[b, c, 1, 1]);
            let beta = film.narrow(1, c, c).reshape(&[b, c, 1, 1]);
            let y = blk.conv_a.forward(s, h);
            let y = (y * gamma.add_scalar(1.0) + beta).leaky_relu(SLOPE);
            h = h + blk.conv_b.forward(s, y);
        }
        h = self.dec[0].forward(s, h.upsample_nearest(2)).leaky_relu(SLOPE);
        h = self.dec[1].forward(s, h.upsample_nearest(2)).leaky_relu(SLOPE);
        self.dec[2].forward(s, h).sigmoid()
    }

    /// Per-layer features of discriminator `k` (0 = full, 1 = half resolution).
    pub fn disc_features<'g>(&self, s: &Session<'g, '_, T>, k: usize, img: Var<'g, T>) -> Vec<Var<'g, T>> {
        let x = if k == 0 { img } else { img.avg_pool2d(2, 2) };
        self.discs[k].features(s, x)
    }

    /// Generator-side terms for swapping `source` identities onto `target`
    /// frames. Reconstruction only counts rows where `self_pair` is set.
    /// Identity extractor and discriminators are read through a frozen view.
    pub fn generator_components<'g>(
        &self,
        s: &Session<'g, '_, T>,
        source: &Array<T>,
        target: &Array<T>,
        self_pair: &[bool],
        m: usize,
    ) -> Result<(Var<'g, T>, SwapLossComponents<'g, T>)> {
        self.check_images(source.shape())?;
        self.check_images(target.shape())?;
        let b = target.shape()[0];
        if source.shape()[0] != b || self_pair.len() != b {
            return Err(invalid("source, target and self-pair flags must share the batch size"));
        }
        if m == 0 || m > self.cfg.disc_layers {
            return Err(invalid(format!("m = {m} outside 1..={}", self.cfg.disc_layers)));
        }
        let frozen = s.frozen();
        let i_t = s.constant(target.clone());
        let v_s = self.identity(&frozen, s.constant(source.clone()));
        let i_r = self.generate(s, i_t, v_s);
        let v_r = self.identity(&frozen, i_r);
        let identity = identity_loss(v_r, v_s)?;
        let rows: Vec<usize> = (0..b).filter(|&i| self_pair[i]).collect();
        let reconstruction = if rows.is_empty() {
            s.scalar(0.0)
        } else {
            reconstruction_loss(i_r.index_select0(&rows), i_t.index_select0(&rows))?
        };
        let mut adversarial = s.scalar(0.0);
        let mut weak_fm = s.scalar(0.0);
        for k in 0..2 {
            let fr = self.disc_features(&frozen, k, i_r);
            let ft = self.disc_features(&frozen, k, i_t);
            adversarial = adversarial + lsgan_generator_loss(*fr.last().expect("layers"));
            weak_fm = weak_fm + weak_feature_matching(&fr, &ft, m)?;
        }
        Ok((i_r, SwapLossComponents { identity, reconstruction, adversarial, weak_fm }))
    }

    /// Weighted generator objective and its components.
    pub fn generator_loss<'g>(
        &self,
        s: &Session<'g, '_, T>,
        source: &Array<T>,
        target: &Array<T>,
        self_pair: &[bool],
        w: &SwapLossWeights,
    ) -> Result<(Var<'g, T>, SwapLossComponents<'g, T>)> {
        w.validate(self.cfg.disc_layers)?;
        let (_, c) = self.generator_components(s, source, target, self_pair, w.m)?;
        Ok((swap_total_loss(&c, w)?, c))
    }

    /// Summed least-squares discriminator loss over both scales.
    pub fn discriminator_loss<'g>(&self, s: &Session<'g, '_, T>, real: &Array<T>, fake: &Array<T>) -> Result<Var<'g, T>> {
        self.check_images(real.shape())?;
        self.check_images(fake.shape())?;
        let (real, fake) = (s.constant(real.clone()), s.constant(fake.clone()));
        let mut total = s.scalar(0.0);
        for k in 0..2 {
            let dr = *self.disc_features(s, k, real).last().expect("layers");
            let df = *self.disc_features(s, k, fake).last().expect("layers");
            total = total + lsgan_discriminator_loss(dr, df);
        }
        Ok(total)
    }

    /// Identity embeddings of a batch in eval mode.
    pub fn identity_vectors(&self, img: &Array<T>) -> Result<Array<T>> {
        self.check_images(img.shape())?;
        let g = Graph::new();
        let s = Session::new(&g, &self.store).frozen();
        Ok((*self.identity(&s, s.constant(img.clone())).value()).clone())
    }

    /// Transfers each source identity onto the matching target frame.
    pub fn swap_forward(&self, source: &Array<T>, target: &Array<T>) -> Result<Array<T>> {
        self.check_images(source.shape())?;
        self.check_images(target.shape())?;
        if source.shape()[0] != target.shape()[0] {
            return Err(invalid(format!("{} source images for {} targets", source.shape()[0], target.shape()[0])));
        }
        let g = Graph::new();
        let s = Session::new(&g, &self.store).frozen();
        let id = self.identity(&s, s.constant(source.clone()));
        Ok((*self.generate(&s, s.constant(target.clone()), id).value()).clone())
    }

    pub fn to_checkpoint(&self, step: u64) -> Checkpoint {
        Checkpoint::new(
            MODULE,
            step,
            &self.cfg,
            &[("resolution", self.cfg.resolution), ("id_dim", self.cfg.id_dim), ("disc_layers", self.cfg.disc_layers)],
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
