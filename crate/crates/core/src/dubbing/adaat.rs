//! Per-channel similarity warps of feature maps with bilinear resampling.

use avatarkit_tensor::{Array, Scalar, Var};

use crate::error::{invalid, Result};

/// Number of warp parameters per channel: scale, rotation, tx, ty.
pub const ADAAT_PARAMS: usize = 4;

/// Per-channel warp parameters of one sample, in normalised coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaATParams {
    pub scale: Vec<f64>,
    pub rotation: Vec<f64>,
    pub tx: Vec<f64>,
    pub ty: Vec<f64>,
}

impl AdaATParams {
    pub fn identity(channels: usize) -> Self {
        Self { scale: vec![1.0; channels], rotation: vec![0.0; channels], tx: vec![0.0; channels], ty: vec![0.0; channels] }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    /// `[1, C, 4]` array accepted by [`adaat_transform`].
    pub fn to_array<T: Scalar>(&self) -> Result<Array<T>> {
        let c = self.channels();
        if self.rotation.len() != c || self.tx.len() != c || self.ty.len() != c {
            return Err(invalid("AdaAT parameter vectors differ in length"));
        }
        let data: Vec<f64> =
            (0..c).flat_map(|k| [self.scale[k], self.rotation[k], self.tx[k], self.ty[k]]).collect();
        Ok(Array::from_f64(&[1, c, ADAAT_PARAMS], &data))
    }
}

/// Sampling geometry of one output pixel.
struct Tap {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: f64,
    fy: f64,
    /// Whether the coordinate was inside the image (else clamped, zero slope).
    in_x: bool,
    in_y: bool,
}

fn norm_coord(i: usize, n: usize) -> f64 {
    if n > 1 {
        -1.0 + 2.0 * i as f64 / (n - 1) as f64
    } else {
        0.0
    }
}

fn tap(p: f64, n: usize) -> (usize, usize, f64, bool) {
    let hi = (n - 1) as f64;
    let inside = (0.0..=hi).contains(&p);
    let pc = p.clamp(0.0, hi);
    if n == 1 {
        return (0, 0, 0.0, inside);
    }
    let i0 = (pc.floor() as usize).min(n - 2);
    (i0, i0 + 1, pc - i0 as f64, inside)
}

fn warp(x: f64, y: f64, p: &[f64], w: usize, h: usize) -> Tap {
    let (s, th, tx, ty) = (p[0], p[1], p[2], p[3]);
    let (sin, cos) = th.sin_cos();
    let xm = s * cos * x - s * sin * y + tx;
    let ym = s * sin * x + s * cos * y + ty;
    let px = (xm + 1.0) * (w - 1) as f64 / 2.0;
    let py = (ym + 1.0) * (h - 1) as f64 / 2.0;
    let (x0, x1, fx, in_x) = tap(px, w);
    let (y0, y1, fy, in_y) = tap(py, h);
    Tap { x0, x1, y0, y1, fx, fy, in_x, in_y }
}

/// Warps every channel of `features [B, C, H, W]` by its own similarity
/// transform. `params [B, C, 4]` holds `(s, theta, t_x, t_y)`; output pixel
/// `(x, y)` in corner-aligned `[-1, 1]^2` samples the input at
/// `(s cos x - s sin y + t_x, s sin x + s cos y + t_y)`, clamped to the edge.
/// Differentiable in both arguments.
pub fn adaat_transform<'g, T: Scalar>(features: Var<'g, T>, params: Var<'g, T>) -> Result<Var<'g, T>> {
    let fs = features.shape();
    let ps = params.shape();
    let [b, c, h, w] = fs[..] else {
        return Err(invalid(format!("AdaAT features must be [B, C, H, W], got {fs:?}")));
    };
    if ps != [b, c, ADAAT_PARAMS] {
        return Err(invalid(format!("AdaAT params must be [{b}, {c}, {ADAAT_PARAMS}] for features {fs:?}, got {ps:?}")));
    }
    let fv = features.value();
    let pv = params.value();
    if pv.data().chunks(ADAAT_PARAMS).any(|p| !(p[0].f64() > 0.0)) {
        return Err(invalid("AdaAT scale must be positive"));
    }
    let plane = h * w;
    let mut out = vec![T::zero(); b * c * plane];
    for bc in 0..b * c {
        let p: Vec<f64> = pv.data()[bc * ADAAT_PARAMS..(bc + 1) * ADAAT_PARAMS].iter().map(|v| v.f64()).collect();
        let src = &fv.data()[bc * plane..(bc + 1) * plane];
        for i in 0..h {
            let y = norm_coord(i, h);
            for j in 0..w {
                let t = warp(norm_coord(j, w), y, &p, w, h);
                let v = |yy: usize, xx: usize| src[yy * w + xx].f64();
                let top = (1.0 - t.fx) * v(t.y0, t.x0) + t.fx * v(t.y0, t.x1);
                let bot = (1.0 - t.fx) * v(t.y1, t.x0) + t.fx * v(t.y1, t.x1);
                out[bc * plane + i * w + j] = T::of((1.0 - t.fy) * top + t.fy * bot);
            }
        }
    }
    let g = features.graph();
    Ok(g.custom(Array::new(&fs, out), &[features, params], move |grad| {
        let gd = grad.data();
        let mut gf = vec![T::zero(); b * c * plane];
        let mut gp = vec![T::zero(); b * c * ADAAT_PARAMS];
        let sx = (w - 1) as f64 / 2.0;
        let sy = (h - 1) as f64 / 2.0;
        for bc in 0..b * c {
            let p: Vec<f64> = pv.data()[bc * ADAAT_PARAMS..(bc + 1) * ADAAT_PARAMS].iter().map(|v| v.f64()).collect();
            let (sin, cos) = p[1].sin_cos();
            let s = p[0];
            let src = &fv.data()[bc * plane..(bc + 1) * plane];
            let dst = &mut gf[bc * plane..(bc + 1) * plane];
            let mut acc = [0.0; ADAAT_PARAMS];
            for i in 0..h {
                let y = norm_coord(i, h);
                for j in 0..w {
                    let x = norm_coord(j, w);
                    let go = gd[bc * plane + i * w + j].f64();
                    if go == 0.0 {
                        continue;
                    }
                    let t = warp(x, y, &p, w, h);
                    let weights = [
                        (t.y0, t.x0, (1.0 - t.fy) * (1.0 - t.fx)),
                        (t.y0, t.x1, (1.0 - t.fy) * t.fx),
                        (t.y1, t.x0, t.fy * (1.0 - t.fx)),
                        (t.y1, t.x1, t.fy * t.fx),
                    ];
                    for (yy, xx, wt) in weights {
                        dst[yy * w + xx] += T::of(go * wt);
                    }
                    let v = |yy: usize, xx: usize| src[yy * w + xx].f64();
                    let dpx = if t.in_x && w > 1 {
                        ((1.0 - t.fy) * (v(t.y0, t.x1) - v(t.y0, t.x0)) + t.fy * (v(t.y1, t.x1) - v(t.y1, t.x0))) * sx
                    } else {
                        0.0
                    };
                    let dpy = if t.in_y && h > 1 {
                        ((1.0 - t.fx) * (v(t.y1, t.x0) - v(t.y0, t.x0)) + t.fx * (v(t.y1, t.x1) - v(t.y0, t.x1))) * sy
                    } else {
                        0.0
                    };
                    // d(xm, ym) / d(s, theta, tx, ty)
                    acc[0] += go * (dpx * (cos * x - sin * y) + dpy * (sin * x + cos * y));
                    acc[1] += go * (dpx * (-s * sin * x - s * cos * y) + dpy * (s * cos * x - s * sin * y));
                    acc[2] += go * dpx;
                    acc[3] += go * dpy;
                }
            }
            for (k, a) in acc.iter().enumerate() {
                gp[bc * ADAAT_PARAMS + k] = T::of(*a);
            }
        }
        vec![Some(Array::new(&[b, c, h, w], gf)), Some(Array::new(&[b, c, ADAAT_PARAMS], gp))]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use avatarkit_tensor::Graph64;

    #[test]
    fn identity_is_exact() {
        let data: Vec<f64> = (0..2 * 5 * 7).map(|i| ((i * 13) % 11) as f64 / 11.0).collect();
        let f = Array::from_f64(&[1, 2, 5, 7], &data);
        let g = Graph64::new();
        let out = adaat_transform(g.constant(f.clone()), g.constant(AdaATParams::identity(2).to_array().unwrap())).unwrap();
        for (a, b) in out.value().data().iter().zip(f.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_shapes_and_scales() {
        let g = Graph64::new();
        let f = g.constant(Array::zeros(&[1, 3, 4, 4]));
        assert!(adaat_transform(f, g.constant(AdaATParams::identity(2).to_array().unwrap())).is_err());
        let mut p = AdaATParams::identity(3);
        p.scale[1] = 0.0;
        assert!(adaat_transform(f, g.constant(p.to_array().unwrap())).is_err());
    }
}
