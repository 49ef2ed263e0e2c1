use avatarkit_tensor::nn::Conv2d;
use avatarkit_tensor::{seeded_rng, Graph, ParamStore, Scalar, Session, Var};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use crate::adversarial::{lsgan_discriminator_loss, lsgan_generator_loss, lsgan_losses as gan_losses};

/// Image feature pyramid used by the perception loss.
pub trait FeatureNet<T: Scalar> {
    /// Features `V_1 .. V_N` of an image batch. Nothing flows into the
    /// network's own weights.
    fn features<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Vec<Var<'g, T>>;
}

/// `copies` identical identity layers.
#[derive(Clone, Copy, Debug)]
pub struct IdentityNet {
    pub copies: usize,
}

impl<T: Scalar> FeatureNet<T> for IdentityNet {
    fn features<'g>(&self, _g: &'g Graph<T>, x: Var<'g, T>) -> Vec<Var<'g, T>> {
        vec![x; self.copies]
    }
}

/// Frozen, randomly initialised convolution pyramid standing in for a
/// pretrained image network. Fully determined by its seed and widths.
#[derive(Clone, Debug)]
pub struct PerceptionNet<T> {
    store: ParamStore<T>,
    layers: Vec<Conv2d>,
}

impl<T: Scalar> PerceptionNet<T> {
    pub fn new(widths: &[usize], seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut store = ParamStore::new();
        let mut cin = 3;
        let layers = widths
            .iter()
            .enumerate()
            .map(|(i, &cout)| {
                let stride = if i == 0 { 1 } else { 2 };
                let l = Conv2d::new(&mut store, &mut rng, &format!("perception.{i}"), cin, cout, 3, stride, 1);
                cin = cout;
                l
            })
            .collect();
        Self { store, layers }
    }
}

impl<T: Scalar> FeatureNet<T> for PerceptionNet<T> {
    fn features<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Vec<Var<'g, T>> {
        let s = Session::new(g, &self.store).frozen();
        let mut h = x;
        self.layers
            .iter()
            .map(|l| {
                h = l.forward(&s, h).leaky_relu(0.2);
                h
            })
            .collect()
    }
}

/// Multi-scale feature L1: for each layer, the mean absolute feature
/// difference at full and at 2x average-pooled resolution, averaged over
/// both scales and all `N` layers.
pub fn perception_loss<'g, T: Scalar>(
    i_o: Var<'g, T>,
    i_r: Var<'g, T>,
    net: &impl FeatureNet<T>,
) -> Result<Var<'g, T>> {
    let shape = i_o.shape();
    if shape != i_r.shape() {
        return Err(invalid(format!("perception inputs differ: {:?} vs {:?}", shape, i_r.shape())));
    }
    if shape.len() != 4 || shape[2] % 2 != 0 || shape[3] % 2 != 0 {
        return Err(invalid(format!("perception loss needs [B, C, H, W] with even H, W, got {shape:?}")));
    }
    let g = i_o.graph();
    let (lo, lr) = (i_o.avg_pool2d(2, 2), i_r.avg_pool2d(2, 2));
    let fo = net.features(g, i_o);
    let fr = net.features(g, i_r);
    let fo2 = net.features(g, lo);
    let fr2 = net.features(g, lr);
    let n = fo.len();
    if n == 0 {
        return Err(invalid("feature net has no layers"));
    }
    let mut total = g.scalar(0.0);
    for i in 0..n {
        total = total + (fo[i] - fr[i]).abs().mean() + (fo2[i] - fr2[i]).abs().mean();
    }
    Ok(total.scale(1.0 / (2 * n) as f64))
}

/// `E(score - 1)^2` over the batch of scorer outputs.
pub fn lip_sync_loss<'g, T: Scalar>(scores: Var<'g, T>) -> Var<'g, T> {
    scores.add_scalar(-1.0).square().mean()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DubbingWeights {
    pub lambda_p: f64,
    pub lambda_sync: f64,
}

impl Default for DubbingWeights {
    fn default() -> Self {
        Self { lambda_p: 1.0, lambda_sync: 0.3 }
    }
}

impl DubbingWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("lambda_p", self.lambda_p), ("lambda_sync", self.lambda_sync)] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(invalid(format!("{name} must be a non-negative finite weight, got {w}")));
            }
        }
        Ok(())
    }
}

/// Generator-side loss terms of one batch.
pub struct DubbingLossComponents<'g, T> {
    pub perception: Var<'g, T>,
    pub sync: Var<'g, T>,
    pub gan: Var<'g, T>,
}

impl<T: Scalar> Clone for DubbingLossComponents<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Scalar> Copy for DubbingLossComponents<'_, T> {}

/// `lambda_p L_p + lambda_sync L_sync + L_GAN`.
pub fn dubbing_total_loss<'g, T: Scalar>(c: &DubbingLossComponents<'g, T>, w: &DubbingWeights) -> Result<Var<'g, T>> {
    w.validate()?;
    Ok(c.perception.scale(w.lambda_p) + c.sync.scale(w.lambda_sync) + c.gan)
}
