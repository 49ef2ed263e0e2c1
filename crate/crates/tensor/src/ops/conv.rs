use crate::{Array, Scalar, Var};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col<T: Scalar>(x: &[T], geo: &Geometry, cols: &mut [T]) {
    let p = geo.cols();
    for c in 0..geo.c {
        for ki in 0..geo.kh {
            for kj in 0..geo.kw {
                let row = (c * geo.kh + ki) * geo.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..geo.ho {
                    let iy = (oy * geo.stride + ki) as isize - geo.pad as isize;
                    for ox in 0..geo.wo {
                        let ix = (ox * geo.stride + kj) as isize - geo.pad as isize;
                        dst[oy * geo.wo + ox] = if iy >= 0 && ix >= 0 && (iy as usize) < geo.h && (ix as usize) < geo.w {
                            x[(c * geo.h + iy as usize) * geo.w + ix as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], geo: &Geometry, dx: &mut [T]) {
    let p = geo.cols();
    for c in 0..geo.c {
        for ki in 0..geo.kh {
            for kj in 0..geo.kw {
                let row = (c * geo.kh + ki) * geo.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..geo.ho {
                    let iy = (oy * geo.stride + ki) as isize - geo.pad as isize;
                    if iy < 0 || iy as usize >= geo.h {
                        continue;
                    }
                    for ox in 0..geo.wo {
                        let ix = (ox * geo.stride + kj) as isize - geo.pad as isize;
                        if ix < 0 || ix as usize >= geo.w {
                            continue;
                        }
                        dx[(c * geo.h + iy as usize) * geo.w + ix as usize] += src[oy * geo.wo + ox];
                    }
                }
            }
        }
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    /// 2-D cross-correlation, NCHW input and OIHW weight, zero padding.
    pub fn conv2d(self, weight: Var<'g, T>, bias: Option<Var<'g, T>>, stride: usize, pad: usize) -> Var<'g, T> {
        let x = self.value();
        let wv = weight.value();
        let (xs, ws) = (x.shape(), wv.shape());
        assert_eq!(xs.len(), 4, "conv2d input must be NCHW, got {xs:?}");
        assert_eq!(ws.len(), 4, "conv2d weight must be OIHW, got {ws:?}");
        assert_eq!(xs[1], ws[1], "conv2d channel mismatch: input {xs:?} weight {ws:?}");
        let (n, o) = (xs[0], ws[0]);
        let (kh, kw) = (ws[2], ws[3]);
        assert!(xs[2] + 2 * pad >= kh && xs[3] + 2 * pad >= kw, "kernel larger than padded input");
        let geo = Geometry {
            c: xs[1],
            h: xs[2],
            w: xs[3],
            kh,
            kw,
            stride,
            pad,
            ho: (xs[2] + 2 * pad - kh) / stride + 1,
            wo: (xs[3] + 2 * pad - kw) / stride + 1,
        };
        let (rows, p) = (geo.rows(), geo.cols());
        let in_len = geo.c * geo.h * geo.w;
        let mut out = vec![T::zero(); n * o * p];
        let mut cols = vec![T::zero(); rows * p];
        for b in 0..n {
            im2col(&x.data()[b * in_len..(b + 1) * in_len], &geo, &mut cols);
            let dst = &mut out[b * o * p..(b + 1) * o * p];
            T::gemm(o, rows, p, T::one(), wv.data(), rows as isize, 1, &cols, p as isize, 1, T::zero(), dst, p as isize, 1);
        }
        let bias_v = bias.map(|b| b.value());
        if let Some(bv) = &bias_v {
            assert_eq!(bv.len(), o, "conv2d bias length");
            for b in 0..n {
                for oc in 0..o {
                    let bval = bv.data()[oc];
                    for v in &mut out[(b * o + oc) * p..(b * o + oc + 1) * p] {
                        *v += bval;
                    }
                }
            }
        }
        let out = Array::new(&[n, o, geo.ho, geo.wo], out);
        let mut parents = vec![self, weight];
        if let Some(b) = bias {
            parents.push(b);
        }
        let (x_rg, w_rg) = (self.requires_grad(), weight.requires_grad());
        let has_bias = bias.is_some();
        let (x_shape, w_shape) = (xs.to_vec(), ws.to_vec());
        self.op(out, &parents, move |g| {
            let gd = g.data();
            let mut gx = x_rg.then(|| Array::zeros(&x_shape));
            let mut gw = w_rg.then(|| Array::zeros(&w_shape));
            let mut cols = vec![T::zero(); rows * p];
            let mut dcols = vec![T::zero(); rows * p];
            for b in 0..n {
                let gb = &gd[b * o * p..(b + 1) * o * p];
                if let Some(gw) = gw.as_mut() {
                    im2col(&x.data()[b * in_len..(b + 1) * in_len], &geo, &mut cols);
                    // gW += g_b [o,p] @ cols^T [p,rows]
                    T::gemm(o, p, rows, T::one(), gb, p as isize, 1, &cols, 1, p as isize, T::one(), gw.data_mut(), rows as isize, 1);
                }
                if let Some(gx) = gx.as_mut() {
                    // dcols = W^T [rows,o] @ g_b [o,p]
                    T::gemm(rows, o, p, T::one(), wv.data(), 1, rows as isize, gb, p as isize, 1, T::zero(), &mut dcols, p as isize, 1);
                    col2im(&dcols, &geo, &mut gx.data_mut()[b * in_len..(b + 1) * in_len]);
                }
            }
            let mut res = vec![gx, gw];
            if has_bias {
                let mut gbias = vec![T::zero(); o];
                for b in 0..n {
                    for (oc, acc) in gbias.iter_mut().enumerate() {
                        *acc += gd[(b * o + oc) * p..(b * o + oc + 1) * p].iter().copied().sum::<T>();
                    }
                }
                res.push(Some(Array::new(&[o], gbias)));
            }
            res
        })
    }

    /// Non-overlapping average pooling with a `kh x kw` window on NCHW input.
    /// Spatial dims must be divisible by the window.
    pub fn avg_pool2d(self, kh: usize, kw: usize) -> Var<'g, T> {
        let x = self.value();
        let s = x.shape().to_vec();
        assert_eq!(s.len(), 4, "avg_pool2d expects NCHW");
        let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
        assert!(h % kh == 0 && w % kw == 0, "avg_pool2d: {h}x{w} not divisible by {kh}x{kw}");
        let (ho, wo) = (h / kh, w / kw);
        let norm = T::of(1.0 / (kh * kw) as f64);
        let mut out = vec![T::zero(); nc * ho * wo];
        let d = x.data();
        for c in 0..nc {
            for y in 0..h {
                for xx in 0..w {
                    out[(c * ho + y / kh) * wo + xx / kw] += d[(c * h + y) * w + xx] * norm;
                }
            }
        }
        let shape_in = s.clone();
        self.op(Array::new(&[s[0], s[1], ho, wo], out), &[self], move |g| {
            let gd = g.data();
            let mut r = vec![T::zero(); nc * h * w];
            for c in 0..nc {
                for y in 0..h {
                    for xx in 0..w {
                        r[(c * h + y) * w + xx] = gd[(c * ho + y / kh) * wo + xx / kw] * norm;
                    }
                }
            }
            vec![Some(Array::new(&shape_in, r))]
        })
    }

    /// Nearest-neighbour upsampling of NCHW input by an integer factor.
    pub fn upsample_nearest(self, factor: usize) -> Var<'g, T> {
        let x = self.value();
        let s = x.shape().to_vec();
        assert_eq!(s.len(), 4, "upsample expects NCHW");
        let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
        let (ho, wo) = (h * factor, w * factor);
        let d = x.data();
        let mut out = Vec::with_capacity(nc * ho * wo);
        for c in 0..nc {
            for y in 0..ho {
                for xx in 0..wo {
                    out.push(d[(c * h + y / factor) * w + xx / factor]);
                }
            }
        }
        let shape_in = s.clone();
        self.op(Array::new(&[s[0], s[1], ho, wo], out), &[self], move |g| {
            let gd = g.data();
            let mut r = vec![T::zero(); nc * h * w];
            for c in 0..nc {
                for y in 0..ho {
                    for xx in 0..wo {
                        r[(c * h + y / factor) * w + xx / factor] += gd[(c * ho + y) * wo + xx];
                    }
                }
            }
            vec![Some(Array::new(&shape_in, r))]
        })
    }
}

#[cfg(test)]
mod tests {
    use crate::{Array, Graph};

    /// Direct nested-loop convolution used as the reference.
    fn naive(x: &Array<f64>, w: &Array<f64>, stride: usize, pad: usize) -> Array<f64> {
        let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (o, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        let mut out = Array::zeros(&[n, o, ho, wo]);
        for b in 0..n {
            for oc in 0..o {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ic in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let iy = (oy * stride + i) as isize - pad as isize;
                                    let ix = (ox * stride + j) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += x.at(&[b, ic, iy as usize, ix as usize]) * w.at(&[oc, ic, i, j]);
                                    }
                                }
                            }
                        }
                        out.set(&[b, oc, oy, ox], acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive() {
        let xd: Vec<f64> = (0..2 * 3 * 5 * 6).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let wd: Vec<f64> = (0..4 * 3 * 3 * 3).map(|i| ((i * 13 % 7) as f64 - 3.0) / 5.0).collect();
        let x = Array::from_f64(&[2, 3, 5, 6], &xd);
        let w = Array::from_f64(&[4, 3, 3, 3], &wd);
        for (stride, pad) in [(1, 1), (2, 1), (1, 0), (2, 0)] {
            let g = Graph::new();
            let y = g.constant(x.clone()).conv2d(g.constant(w.clone()), None, stride, pad);
            let expect = naive(&x, &w, stride, pad);
            assert_eq!(y.value().shape(), expect.shape());
            for (a, b) in y.value().data().iter().zip(expect.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pool_then_upsample_shapes() {
        let g = Graph::<f32>::new();
        let x = g.leaf(Array::ones(&[1, 2, 4, 6]));
        let p = x.avg_pool2d(2, 2);
        assert_eq!(p.shape(), vec![1, 2, 2, 3]);
        let u = p.upsample_nearest(2);
        assert_eq!(u.shape(), vec![1, 2, 4, 6]);
        assert!(u.value().data().iter().all(|&v| (v - 1.0).abs() < 1e-7));
    }
}
