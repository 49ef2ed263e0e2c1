//! Image fidelity (PSNR, SSIM) and lip-sync (LSE-D, LSE-C) metrics, and the
//! evaluation report that bundles them.
//!
//! LSE values are measured with this crate's own [`SyncScorer`], so they are
//! comparable between runs of this crate and nothing else.

use std::path::Path;

use avatarkit_tensor::{Array, Scalar};
use serde::{Deserialize, Serialize};

use crate::dubbing::{clip_windows, SyncScorer};
use crate::error::{invalid, Result};
use crate::io;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

/// `10 log10(peak^2 / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr<T: Scalar>(a: &Array<T>, b: &Array<T>, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(invalid(format!("PSNR of differently shaped images {:?} and {:?}", a.shape(), b.shape())));
    }
    if !(peak > 0.0) || a.is_empty() {
        return Err(invalid(format!("PSNR needs non-empty images and a positive peak, got {peak}")));
    }
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x.f64() - y.f64()).powi(2)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimConfig {
    /// Odd Gaussian window size, shrunk to fit small images.
    pub window: usize,
    pub sigma: f64,
    pub peak: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self { window: 11, sigma: 1.5, peak: 1.0, k1: 0.01, k2: 0.03 }
    }
}

impl SsimConfig {
    /// Window size used on an `h x w` plane.
    pub fn window_for(&self, h: usize, w: usize) -> usize {
        let m = self.window.min(h).min(w);
        if m % 2 == 0 {
            m - 1
        } else {
            m
        }
    }
}

/// Normalised 1-D Gaussian taps.
fn gaussian(n: usize, sigma: f64) -> Vec<f64> {
    let c = (n / 2) as f64;
    let k: Vec<f64> = (0..n).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `h x w` plane.
fn filter(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM over every `H x W` plane of two equally shaped arrays
/// (rank 2 or more; leading axes are independent planes).
pub fn ssim<T: Scalar>(a: &Array<T>, b: &Array<T>, cfg: &SsimConfig) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(invalid(format!("SSIM of differently shaped images {:?} and {:?}", a.shape(), b.shape())));
    }
    let s = a.shape();
    if s.len() < 2 || a.is_empty() {
        return Err(invalid(format!("SSIM needs [.., H, W] images, got {s:?}")));
    }
    if cfg.window == 0 || !(cfg.sigma > 0.0) || !(cfg.peak > 0.0) {
        return Err(invalid("SSIM window, sigma and peak must be positive"));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let k = gaussian(cfg.window_for(h, w), cfg.sigma);
    let (c1, c2) = ((cfg.k1 * cfg.peak).powi(2), (cfg.k2 * cfg.peak).powi(2));
    let (ad, bd) = (a.to_f64_vec(), b.to_f64_vec());
    let (mut total, mut count) = (0.0, 0usize);
    for (pa, pb) in ad.chunks(h * w).zip(bd.chunks(h * w)) {
        let prod = |f: fn(f64, f64) -> f64| pa.iter().zip(pb).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>();
        let mx = filter(pa, h, w, &k);
        let my = filter(pb, h, w, &k);
        let mxx = filter(&prod(|x, _| x * x), h, w, &k);
        let myy = filter(&prod(|_, y| y * y), h, w, &k);
        let mxy = filter(&prod(|x, y| x * y), h, w, &k);
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let (vx, vy, cxy) = (mxx[i] - ux * ux, myy[i] - uy * uy, mxy[i] - ux * uy);
            total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Temporal offsets, in video frames, searched by [`lse_metrics`].
pub const LSE_MAX_OFFSET: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LseMetrics {
    /// Mean distance between unit audio and visual embeddings at zero offset.
    pub lse_d: f64,
    /// Mean of zero-offset similarity minus the median similarity over all
    /// offsets in `[-max_offset, max_offset]`.
    pub lse_c: f64,
    /// Frames with every offset in range; the means run over these.
    pub frames: usize,
}

/// Sync distance and confidence of `frames [T, 3, R, R]` against
/// `audio [T * r, dim]`.
pub fn lse_metrics<T: Scalar>(
    scorer: &SyncScorer<T>,
    frames: &Array<T>,
    audio: &Array<T>,
    audio_per_video: usize,
    max_offset: usize,
) -> Result<LseMetrics> {
    let t = frames.shape().first().copied().unwrap_or(0);
    if t < 2 * max_offset + 1 {
        return Err(invalid(format!("clip of {t} frames is shorter than the {}-frame offset window", 2 * max_offset + 1)));
    }
    if audio.ndim() != 2 || audio_per_video == 0 {
        return Err(invalid(format!("audio must be [T*r, dim] with r > 0, got {:?}", audio.shape())));
    }
    let windows = clip_windows(audio, t, audio_per_video, scorer.cfg.audio_window);
    let (a, v) = scorer.embeddings(&windows, frames)?;
    let e = a.shape()[1];
    let row = |m: &Array<f64>, i: usize| m.data()[i * e..(i + 1) * e].to_vec();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let (mut dist, mut conf) = (0.0, 0.0);
    let frames_used = t - 2 * max_offset;
    for i in max_offset..t - max_offset {
        let vi = row(&v, i);
        let a0 = row(&a, i);
        dist += a0.iter().zip(&vi).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let mut sims: Vec<f64> = (i - max_offset..=i + max_offset).map(|j| dot(&row(&a, j), &vi)).collect();
        let s0 = dot(&a0, &vi);
        sims.sort_by(f64::total_cmp);
        conf += s0 - sims[max_offset];
    }
    Ok(LseMetrics { lse_d: dist / frames_used as f64, lse_c: conf / frames_used as f64, frames: frames_used })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub peak: f64,
    pub ssim: SsimConfig,
    pub max_offset: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { peak: 1.0, ssim: SsimConfig::default(), max_offset: LSE_MAX_OFFSET }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameTrace {
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    /// Mean per-frame PSNR, dB.
    pub psnr: f64,
    pub ssim: f64,
    pub lse_d: f64,
    pub lse_c: f64,
    pub per_frame: FrameTrace,
    pub config: EvalConfig,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Scores generated frames against reference frames, and their lip sync
/// against the reference audio.
pub fn evaluate<T: Scalar>(
    generated: &Array<T>,
    reference: &Array<T>,
    audio: &Array<T>,
    audio_per_video: usize,
    scorer: &SyncScorer<T>,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let (tg, tr) = (generated.shape().first().copied().unwrap_or(0), reference.shape().first().copied().unwrap_or(0));
    if tg != tr || generated.shape() != reference.shape() {
        return Err(invalid(format!(
            "generated frames {:?} do not match reference frames {:?}",
            generated.shape(),
            reference.shape()
        )));
    }
    let mut trace = FrameTrace { psnr: Vec::with_capacity(tg), ssim: Vec::with_capacity(tg) };
    for t in 0..tg {
        let (g, r) = (generated.index_axis0(t), reference.index_axis0(t));
        trace.psnr.push(psnr(&g, &r, cfg.peak)?);
        trace.ssim.push(ssim(&g, &r, &SsimConfig { peak: cfg.peak, ..cfg.ssim.clone() })?);
    }
    let lse = lse_metrics(scorer, generated, audio, audio_per_video, cfg.max_offset)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(EvalReport {
        frames: tg,
        psnr: mean(&trace.psnr),
        ssim: mean(&trace.ssim),
        lse_d: lse.lse_d,
        lse_c: lse.lse_c,
        per_frame: trace,
        config: cfg.clone(),
    })
}

/// [`evaluate`] on a directory of generated frames and a reference clip
/// directory holding `frame_%06d.png` files and `audio.avarr`.
pub fn evaluate_dirs<T: Scalar>(
    generated: &Path,
    reference: &Path,
    scorer: &SyncScorer<T>,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let gen = io::read_frames::<T>(generated)?;
    let refs = io::read_frames::<T>(reference)?;
    let audio = io::read_array::<T>(&reference.join("audio.avarr"))?;
    let t = refs.shape()[0];
    let na = audio.shape().first().copied().unwrap_or(0);
    if t == 0 || na % t != 0 {
        return Err(invalid(format!("reference audio of {na} frames does not divide into {t} video frames")));
    }
    evaluate(&gen, &refs, &audio, na / t, scorer, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_closed_forms() {
        let a = Array::<f64>::full(&[3, 4, 4], 0.5);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP);
        let b = Array::full(&[3, 4, 4], 0.6);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &Array::zeros(&[3, 4, 5]), 1.0).is_err());
        assert!(psnr(&a, &b, 0.0).is_err());
    }

    #[test]
    fn window_shrinks_to_odd_fit() {
        let c = SsimConfig::default();
        assert_eq!(c.window_for(64, 64), 11);
        assert_eq!(c.window_for(8, 10), 7);
        assert_eq!(c.window_for(1, 5), 1);
    }
}
