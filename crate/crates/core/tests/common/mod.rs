//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use avatarkit::Array;
use avatarkit_tensor::seeded_rng;
use rand::Rng;

pub fn random(shape: &[usize], seed: u64) -> Array<f64> {
    let mut rng = seeded_rng(seed);
    let n = shape.iter().product();
    Array::new(shape, (0..n).map(|_| rng.random_range(0.0..1.0)).collect())
}

/// Sum over all `V^T` alignment strings that collapse to `labels`.
pub fn brute_force(lp: &[Vec<f64>], labels: &[usize]) -> f64 {
    let (t_len, v) = (lp.len(), lp[0].len());
    let mut total = 0.0;
    let mut path = vec![0usize; t_len];
    for code in 0..v.pow(t_len as u32) {
        let mut c = code;
        for p in path.iter_mut() {
            *p = c % v;
            c /= v;
        }
        let mut collapsed = Vec::new();
        let mut prev = None;
        for &k in &path {
            if Some(k) != prev && k != 0 {
                collapsed.push(k);
            }
            prev = Some(k);
        }
        if collapsed == labels {
            total += path.iter().enumerate().map(|(t, &k)| lp[t][k].exp()).product::<f64>();
        }
    }
    total.ln()
}

pub fn random_log_posteriors(rng: &mut impl Rng, t: usize, v: usize) -> Vec<Vec<f64>> {
    (0..t)
        .map(|_| {
            let raw: Vec<f64> = (0..v).map(|_| rng.random_range(0.05..1.0)).collect();
            let z: f64 = raw.iter().sum();
            raw.iter().map(|x| (x / z).ln()).collect()
        })
        .collect()
}

/// Direct-formula PSNR on flat slices.
pub fn psnr_oracle(a: &[f64], b: &[f64], peak: f64) -> f64 {
    let mut se = 0.0;
    for i in 0..a.len() {
        se += (a[i] - b[i]) * (a[i] - b[i]);
    }
    20.0 * peak.log10() - 10.0 * (se / a.len() as f64).log10()
}

/// Windowed SSIM computed pixel by pixel with two-pass local moments.
pub fn ssim_oracle(a: &Array<f64>, b: &Array<f64>, n: usize, sigma: f64, peak: f64) -> f64 {
    let s = a.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let planes = a.len() / (h * w);
    let half = (n / 2) as f64;
    let mut weights = vec![vec![0.0; n]; n];
    let mut norm = 0.0;
    for (i, row) in weights.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (-((i as f64 - half).powi(2) + (j as f64 - half).powi(2)) / (2.0 * sigma * sigma)).exp();
            norm += *v;
        }
    }
    let (c1, c2) = ((0.01 * peak).powi(2), (0.03 * peak).powi(2));
    let (mut total, mut count) = (0.0, 0);
    for p in 0..planes {
        let at = |m: &Array<f64>, y: usize, x: usize| m.data()[p * h * w + y * w + x];
        for y0 in 0..=h - n {
            for x0 in 0..=w - n {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        mx += weights[i][j] / norm * at(a, y0 + i, x0 + j);
                        my += weights[i][j] / norm * at(b, y0 + i, x0 + j);
                    }
                }
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let wt = weights[i][j] / norm;
                        let (dx, dy) = (at(a, y0 + i, x0 + j) - mx, at(b, y0 + i, x0 + j) - my);
                        vx += wt * dx * dx;
                        vy += wt * dy * dy;
                        cxy += wt * dx * dy;
                    }
                }
                total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    total / count as f64
}
