use avatarkit_tensor::{Scalar, Var};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use crate::adversarial::{lsgan_discriminator_loss, lsgan_generator_loss, lsgan_losses as adversarial_losses};

/// `1 - cos(v_R, v_S)` averaged over the batch. Rows are identity vectors.
pub fn identity_loss<'g, T: Scalar>(v_r: Var<'g, T>, v_s: Var<'g, T>) -> Result<Var<'g, T>> {
    if v_r.shape() != v_s.shape() || v_r.shape().len() != 2 {
        return Err(invalid(format!("identity vectors must be matching [B, D], got {:?} and {:?}", v_r.shape(), v_s.shape())));
    }
    let nr = v_r.square().sum_axis(1, true);
    let ns = v_s.square().sum_axis(1, true);
    if nr.value().data().iter().chain(ns.value().data()).any(|n| !(n.f64() > 0.0)) {
        return Err(invalid("identity vector with zero norm"));
    }
    let cos = (v_r * v_s).sum_axis(1, true) / (nr * ns).sqrt();
    Ok(cos.neg().add_scalar(1.0).mean())
}

/// Mean absolute difference; the L1 norm divided by the element count.
pub fn reconstruction_loss<'g, T: Scalar>(i_r: Var<'g, T>, i_t: Var<'g, T>) -> Result<Var<'g, T>> {
    if i_r.shape() != i_t.shape() {
        return Err(invalid(format!("reconstruction shapes differ: {:?} vs {:?}", i_r.shape(), i_t.shape())));
    }
    Ok((i_r - i_t).abs().mean())
}

/// `sum_{i=m..M} mean |D_i(I_R) - D_i(I_T)|` over per-layer features.
/// `m` is 1-based, as are the layers.
pub fn weak_feature_matching<'g, T: Scalar>(feats_r: &[Var<'g, T>], feats_t: &[Var<'g, T>], m: usize) -> Result<Var<'g, T>> {
    let layers = feats_r.len();
    if feats_t.len() != layers {
        return Err(invalid(format!("{layers} generated feature layers but {} target layers", feats_t.len())));
    }
    if m == 0 || m > layers {
        return Err(invalid(format!("feature-matching start layer {m} outside 1..={layers}")));
    }
    let mut total = None;
    for (a, b) in feats_r.iter().zip(feats_t).skip(m - 1) {
        let term = reconstruction_loss(*a, *b)?;
        total = Some(match total {
            None => term,
            Some(t) => t + term,
        });
    }
    Ok(total.expect("at least one layer"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwapLossWeights {
    pub lambda_id: f64,
    pub lambda_rec: f64,
    pub lambda_wfm: f64,
    /// First discriminator layer entering the feature-matching sum (1-based).
    pub m: usize,
}

impl Default for SwapLossWeights {
    fn default() -> Self {
        Self { lambda_id: 5.0, lambda_rec: 10.0, lambda_wfm: 10.0, m: 2 }
    }
}

impl SwapLossWeights {
    /// Weights must be non-negative and finite.
    pub fn check_weights(&self) -> Result<()> {
        for (name, w) in [("lambda_id", self.lambda_id), ("lambda_rec", self.lambda_rec), ("lambda_wfm", self.lambda_wfm)] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(invalid(format!("{name} must be a non-negative finite weight, got {w}")));
            }
        }
        Ok(())
    }

    pub fn validate(&self, disc_layers: usize) -> Result<()> {
        self.check_weights()?;
        if self.m == 0 || self.m > disc_layers {
            return Err(invalid(format!("m = {} outside 1..={disc_layers}", self.m)));
        }
        Ok(())
    }
}

/// Generator-side loss terms of one batch. `weak_fm` already sums both
/// discriminator scales.
pub struct SwapLossComponents<'g, T> {
    pub identity: Var<'g, T>,
    pub reconstruction: Var<'g, T>,
    pub adversarial: Var<'g, T>,
    pub weak_fm: Var<'g, T>,
}

impl<T: Scalar> Clone for SwapLossComponents<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Scalar> Copy for SwapLossComponents<'_, T> {}

/// `lambda_id L_id + lambda_rec L_rec + L_adv + lambda_wfm L_wfm`.
pub fn swap_total_loss<'g, T: Scalar>(c: &SwapLossComponents<'g, T>, w: &SwapLossWeights) -> Result<Var<'g, T>> {
    w.check_weights()?;
    Ok(c.identity.scale(w.lambda_id) + c.reconstruction.scale(w.lambda_rec) + c.adversarial + c.weak_fm.scale(w.lambda_wfm))
}
