//! Location-relative attention whose weights are a mixture of discretised
//! logistic distributions over encoder positions.

use avatarkit_tensor::{sigmoid, softplus, Array, Scalar, Var};

/// Mixture components used by the synthesizer.
pub const MIXTURES: usize = 5;

/// Smallest logistic scale, in encoder frames.
pub const MIN_SCALE: f64 = 0.05;

/// Stand-in for an infinite bin edge.
const EDGE: f64 = 1e6;

/// Lower and upper bin edges of every encoder position; the outer edges
/// extend to infinity so the mixture mass all lands on the sequence.
fn bin_edges(n: usize) -> (Vec<f64>, Vec<f64>) {
    let lo = (0..n).map(|j| if j == 0 { -EDGE } else { j as f64 - 0.5 }).collect();
    let hi = (0..n).map(|j| if j + 1 == n { EDGE } else { j as f64 + 0.5 }).collect();
    (lo, hi)
}

/// One attention step from raw head outputs `[delta(K), scale(K), weight(K)]`.
///
/// Means move forward by `softplus(delta) >= 0`. Returns the attention
/// weights over `encoder_length` positions and the new means.
pub fn mol_attention_step(raw: &[f64], prev_means: &[f64], encoder_length: usize) -> (Vec<f64>, Vec<f64>) {
    let k = prev_means.len();
    assert_eq!(raw.len(), 3 * k, "raw head output must hold 3 values per component");
    if encoder_length == 0 {
        return (Vec::new(), prev_means.to_vec());
    }
    let means: Vec<f64> = (0..k).map(|i| prev_means[i] + softplus(raw[i])).collect();
    let scales: Vec<f64> = (0..k).map(|i| softplus(raw[k + i]) + MIN_SCALE).collect();
    let wmax = raw[2 * k..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let wexp: Vec<f64> = raw[2 * k..].iter().map(|w| (w - wmax).exp()).collect();
    let wsum: f64 = wexp.iter().sum();
    let (lo, hi) = bin_edges(encoder_length);
    let mut weights: Vec<f64> = (0..encoder_length)
        .map(|j| {
            (0..k)
                .map(|i| wexp[i] / wsum * (sigmoid((hi[j] - means[i]) / scales[i]) - sigmoid((lo[j] - means[i]) / scales[i])))
                .sum()
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        weights.iter_mut().for_each(|w| *w /= total);
    }
    (weights, means)
}

/// Differentiable version: `raw [1, 3K]`, `prev_means [1, K]` to
/// `(weights [1, N], means [1, K], mixture mean position [1, 1])`.
pub fn mol_attention<'g, T: Scalar>(
    raw: Var<'g, T>,
    prev_means: Var<'g, T>,
    encoder_length: usize,
) -> (Var<'g, T>, Var<'g, T>, Var<'g, T>) {
    let g = raw.graph();
    let k = prev_means.shape()[1];
    let means = prev_means + raw.narrow(1, 0, k).softplus();
    let scales = raw.narrow(1, k, k).softplus().add_scalar(MIN_SCALE);
    let mix = raw.narrow(1, 2 * k, k).softmax();
    let (lo, hi) = bin_edges(encoder_length);
    let lo = g.constant(Array::from_f64(&[encoder_length, 1], &lo));
    let hi = g.constant(Array::from_f64(&[encoder_length, 1], &hi));
    let cdf_hi = ((hi - means) / scales).sigmoid();
    let cdf_lo = ((lo - means) / scales).sigmoid();
    let per_pos = (cdf_hi - cdf_lo).matmul(mix.t()).reshape(&[1, encoder_length]);
    let weights = per_pos / per_pos.sum();
    let position = (means * mix).sum_axis(1, true);
    (weights, means, position)
}
