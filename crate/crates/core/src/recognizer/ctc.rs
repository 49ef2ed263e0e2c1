//! Connectionist temporal classification over a blank-augmented label path.

use avatarkit_tensor::{Array, Scalar, Var};

use crate::error::{invalid, Result};
use crate::syndata::BLANK_ID;

fn logsumexp2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `blank, y1, blank, y2, ..., yL, blank`.
fn extend(labels: &[usize]) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(BLANK_ID);
    for &l in labels {
        ext.push(l);
        ext.push(BLANK_ID);
    }
    ext
}

/// Fewest frames that can emit `labels`: one per label plus a blank between
/// each pair of equal neighbours.
pub fn min_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Whether state `s` may be entered from `s - 2` (skip over a blank).
fn can_skip(ext: &[usize], s: usize) -> bool {
    s >= 2 && ext[s] != BLANK_ID && ext[s] != ext[s - 2]
}

/// Forward variables, `alpha[t * S + s]`, each including the emission at `t`.
fn forward(lp: &[f64], t_len: usize, v: usize, ext: &[usize]) -> Vec<f64> {
    let s_len = ext.len();
    let mut alpha = vec![f64::NEG_INFINITY; t_len * s_len];
    alpha[0] = lp[ext[0]];
    if s_len > 1 {
        alpha[1] = lp[ext[1]];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut acc = prev[s];
            if s >= 1 {
                acc = logsumexp2(acc, prev[s - 1]);
            }
            if can_skip(ext, s) {
                acc = logsumexp2(acc, prev[s - 2]);
            }
            alpha[t * s_len + s] = if acc == f64::NEG_INFINITY { acc } else { acc + lp[t * v + ext[s]] };
        }
    }
    alpha
}

/// Backward variables, `beta[t * S + s]`, excluding the emission at `t`.
fn backward(lp: &[f64], t_len: usize, v: usize, ext: &[usize]) -> Vec<f64> {
    let s_len = ext.len();
    let mut beta = vec![f64::NEG_INFINITY; t_len * s_len];
    let last = (t_len - 1) * s_len;
    beta[last + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[last + s_len - 2] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let next = |s2: usize| beta[(t + 1) * s_len + s2] + lp[(t + 1) * v + ext[s2]];
            let mut acc = next(s);
            if s + 1 < s_len {
                acc = logsumexp2(acc, next(s + 1));
            }
            if s + 2 < s_len && can_skip(ext, s + 2) {
                acc = logsumexp2(acc, next(s + 2));
            }
            beta[t * s_len + s] = acc;
        }
    }
    beta
}

fn validate(shape: &[usize], labels: &[usize]) -> Result<(usize, usize)> {
    let [t_len, v] = shape else {
        return Err(invalid(format!("log-posteriors must be [T, V], got {shape:?}")));
    };
    if *t_len == 0 {
        return Err(invalid("log-posteriors have no frames"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l == BLANK_ID || l >= *v) {
        return Err(invalid(format!("label {bad} is the blank or outside the {v}-symbol output")));
    }
    Ok((*t_len, *v))
}

fn log_prob_f64(lp: &[f64], t_len: usize, v: usize, labels: &[usize]) -> f64 {
    if min_frames(labels) > t_len {
        return f64::NEG_INFINITY;
    }
    let ext = extend(labels);
    let s_len = ext.len();
    let alpha = forward(lp, t_len, v, &ext);
    let last = (t_len - 1) * s_len;
    let end = if s_len > 1 { logsumexp2(alpha[last + s_len - 1], alpha[last + s_len - 2]) } else { alpha[last] };
    end.min(0.0)
}

/// `log P_ctc(labels | x)` from per-frame log-posteriors `[T, V]`.
///
/// Labels that cannot fit into `T` frames give `-inf` rather than an error.
/// Blank is id 0 and may not appear in `labels`.
pub fn ctc_log_prob<T: Scalar>(log_posteriors: &Array<T>, labels: &[usize]) -> Result<T> {
    let (t_len, v) = validate(log_posteriors.shape(), labels)?;
    let lp = log_posteriors.to_f64_vec();
    Ok(T::of(log_prob_f64(&lp, t_len, v, labels)))
}

/// Differentiable `-log P_ctc`, gradient taken with respect to the
/// log-posteriors (which are expected to come from a log-softmax).
pub fn ctc_nll<'g, T: Scalar>(log_posteriors: Var<'g, T>, labels: &[usize]) -> Result<Var<'g, T>> {
    let shape = log_posteriors.shape();
    let (t_len, v) = validate(&shape, labels)?;
    let lp = log_posteriors.value().to_f64_vec();
    let logp = log_prob_f64(&lp, t_len, v, labels);
    let labels = labels.to_vec();
    let g = log_posteriors.graph();
    Ok(g.custom(Array::scalar(T::of(-logp)), &[log_posteriors], move |grad| {
        let mut out = vec![0.0; t_len * v];
        if logp.is_finite() {
            let ext = extend(&labels);
            let s_len = ext.len();
            let alpha = forward(&lp, t_len, v, &ext);
            let beta = backward(&lp, t_len, v, &ext);
            for t in 0..t_len {
                for (s, &k) in ext.iter().enumerate() {
                    let occ = alpha[t * s_len + s] + beta[t * s_len + s] - logp;
                    if occ > f64::NEG_INFINITY {
                        out[t * v + k] -= occ.exp();
                    }
                }
            }
        }
        let gs = grad.item().f64();
        vec![Some(Array::new(&[t_len, v], out.into_iter().map(|x| T::of(x * gs)).collect()))]
    }))
}

/// Best-path decoding: per-frame argmax, merge repeats, drop blanks.
pub fn greedy_decode<T: Scalar>(log_posteriors: &Array<T>) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for k in log_posteriors.argmax_rows() {
        if Some(k) != prev && k != BLANK_ID {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}
