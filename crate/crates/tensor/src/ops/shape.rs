use std::rc::Rc;

use crate::array::{numel, strides};
use crate::{Array, Scalar, Var};

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
fn split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

impl<'g, T: Scalar> Var<'g, T> {
    /// Sum of all elements, as a 0-d array.
    pub fn sum(self) -> Var<'g, T> {
        let v = self.value();
        let shape = v.shape().to_vec();
        self.op(Array::scalar(v.sum()), &[self], move |g| vec![Some(Array::full(&shape, g.item()))])
    }

    pub fn mean(self) -> Var<'g, T> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn sum_axis(self, axis: usize, keepdim: bool) -> Var<'g, T> {
        let v = self.value();
        let in_shape = v.shape().to_vec();
        let (outer, len, inner) = split(&in_shape, axis);
        let mut out = vec![T::zero(); outer * inner];
        let d = v.data();
        for o in 0..outer {
            for k in 0..len {
                let base = (o * len + k) * inner;
                for i in 0..inner {
                    out[o * inner + i] += d[base + i];
                }
            }
        }
        let mut shape = in_shape.clone();
        if keepdim {
            shape[axis] = 1;
        } else {
            shape.remove(axis);
        }
        self.op(Array::new(&shape, out), &[self], move |g| {
            let gd = g.data();
            let mut r = vec![T::zero(); outer * len * inner];
            for o in 0..outer {
                for k in 0..len {
                    let base = (o * len + k) * inner;
                    r[base..base + inner].copy_from_slice(&gd[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(Array::new(&in_shape, r))]
        })
    }

    pub fn mean_axis(self, axis: usize, keepdim: bool) -> Var<'g, T> {
        let n = self.value().shape()[axis] as f64;
        self.sum_axis(axis, keepdim).scale(1.0 / n)
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'g, T> {
        let v = self.value();
        let old = v.shape().to_vec();
        self.op(v.reshape(shape), &[self], move |g| vec![Some(g.reshape(&old))])
    }

    /// General axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(self, perm: &[usize]) -> Var<'g, T> {
        let v = self.value();
        let (out, inverse) = permute_array(&v, perm);
        self.op(out, &[self], move |g| vec![Some(permute_array(g, &inverse).0)])
    }

    /// Transpose of a 2-D array.
    pub fn t(self) -> Var<'g, T> {
        assert_eq!(self.value().ndim(), 2, "t() expects a matrix");
        self.permute(&[1, 0])
    }

    /// Contiguous sub-range `[start, start + len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Var<'g, T> {
        let v = self.value();
        let in_shape = v.shape().to_vec();
        let (outer, full, inner) = split(&in_shape, axis);
        assert!(start + len <= full, "narrow {start}+{len} exceeds axis size {full}");
        let d = v.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut shape = in_shape.clone();
        shape[axis] = len;
        self.op(Array::new(&shape, out), &[self], move |g| {
            let mut r = Array::zeros(&in_shape);
            let rd = r.data_mut();
            let gd = g.data();
            for o in 0..outer {
                let base = (o * full + start) * inner;
                rd[base..base + len * inner].copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(r)]
        })
    }

    /// Gathers sub-arrays along axis 0; indices may repeat.
    pub fn index_select0(self, indices: &[usize]) -> Var<'g, T> {
        let v = self.value();
        let in_shape = v.shape().to_vec();
        let inner = numel(&in_shape[1..]);
        let mut out = Vec::with_capacity(indices.len() * inner);
        for &i in indices {
            assert!(i < in_shape[0], "index {i} out of range {}", in_shape[0]);
            out.extend_from_slice(&v.data()[i * inner..(i + 1) * inner]);
        }
        let mut shape = in_shape.clone();
        shape[0] = indices.len();
        let idx = indices.to_vec();
        self.op(Array::new(&shape, out), &[self], move |g| {
            let mut r = Array::zeros(&in_shape);
            let rd = r.data_mut();
            for (k, &i) in idx.iter().enumerate() {
                for j in 0..inner {
                    rd[i * inner + j] += g.data()[k * inner + j];
                }
            }
            vec![Some(r)]
        })
    }

    /// 2-D matrix product.
    pub fn matmul(self, other: Var<'g, T>) -> Var<'g, T> {
        let (a, b) = (self.value(), other.value());
        let out = a.matmul(&b);
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let (a_rg, b_rg) = (self.requires_grad(), other.requires_grad());
        self.op(out, &[self, other], move |g| {
            let ga = a_rg.then(|| {
                // g [m,n] @ b^T [n,k]
                let mut r = Array::zeros(&[m, k]);
                T::gemm(m, n, k, T::one(), g.data(), n as isize, 1, b.data(), 1, n as isize, T::zero(), r.data_mut(), k as isize, 1);
                r
            });
            let gb = b_rg.then(|| {
                // a^T [k,m] @ g [m,n]
                let mut r = Array::zeros(&[k, n]);
                T::gemm(k, m, n, T::one(), a.data(), 1, k as isize, g.data(), n as isize, 1, T::zero(), r.data_mut(), n as isize, 1);
                r
            });
            vec![ga, gb]
        })
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(self) -> Var<'g, T> {
        let v = self.value();
        let w = *v.shape().last().expect("log_softmax on scalar");
        let mut out = Vec::with_capacity(v.len());
        for row in v.data().chunks(w) {
            let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<T>().ln();
            out.extend(row.iter().map(|&x| x - lse));
        }
        let out = Array::new(v.shape(), out);
        let keep = Rc::new(out.clone());
        self.op(out, &[self], move |g| {
            let mut r = Vec::with_capacity(g.len());
            for (grow, yrow) in g.data().chunks(w).zip(keep.data().chunks(w)) {
                let s: T = grow.iter().copied().sum();
                r.extend(grow.iter().zip(yrow).map(|(&gi, &y)| gi - y.exp() * s));
            }
            vec![Some(Array::new(g.shape(), r))]
        })
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Var<'g, T> {
        self.log_softmax().exp()
    }
}

fn permute_array<T: Scalar>(v: &Array<T>, perm: &[usize]) -> (Array<T>, Vec<usize>) {
    let shape = v.shape();
    assert_eq!(perm.len(), shape.len(), "permutation rank");
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = v.len();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; shape.len()];
    let mut cur = 0usize;
    let d = v.data();
    for _ in 0..total {
        out.push(d[cur]);
        for ax in (0..idx.len()).rev() {
            idx[ax] += 1;
            cur += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            cur -= src_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    let mut inverse = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inverse[p] = i;
    }
    (Array::new(&out_shape, out), inverse)
}

/// Concatenation along `axis`. All inputs must agree on the other axes.
pub fn concat<'g, T: Scalar>(items: &[Var<'g, T>], axis: usize) -> Var<'g, T> {
    assert!(!items.is_empty(), "concat of nothing");
    let values: Vec<Rc<Array<T>>> = items.iter().map(|v| v.value()).collect();
    let first = values[0].shape().to_vec();
    let (outer, _, inner) = split(&first, axis);
    let lens: Vec<usize> = values
        .iter()
        .map(|v| {
            let s = v.shape();
            assert_eq!(s.len(), first.len(), "concat rank mismatch");
            for (d, (&x, &y)) in s.iter().zip(&first).enumerate() {
                assert!(d == axis || x == y, "concat shape mismatch {s:?} vs {first:?} on axis {axis}");
            }
            s[axis]
        })
        .collect();
    let total: usize = lens.iter().sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (v, &l) in values.iter().zip(&lens) {
            out.extend_from_slice(&v.data()[o * l * inner..(o + 1) * l * inner]);
        }
    }
    let mut shape = first.clone();
    shape[axis] = total;
    let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
    items[0].op(Array::new(&shape, out), items, move |g| {
        let gd = g.data();
        let mut res: Vec<Vec<T>> = lens.iter().map(|&l| Vec::with_capacity(outer * l * inner)).collect();
        let mut pos = 0;
        for _ in 0..outer {
            for (k, &l) in lens.iter().enumerate() {
                res[k].extend_from_slice(&gd[pos..pos + l * inner]);
                pos += l * inner;
            }
        }
        res.into_iter().zip(&shapes).map(|(d, s)| Some(Array::new(s, d))).collect()
    })
}

/// Stacks equally shaped values along a new leading axis.
pub fn stack<'g, T: Scalar>(items: &[Var<'g, T>]) -> Var<'g, T> {
    let expanded: Vec<Var<'g, T>> = items
        .iter()
        .map(|v| {
            let mut s = vec![1];
            s.extend(v.shape());
            v.reshape(&s)
        })
        .collect();
    concat(&expanded, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Graph;

    #[test]
    fn permute_matches_index_formula() {
        let data: Vec<f64> = (0..24).map(|x| x as f64).collect();
        let a = Array::<f64>::from_f64(&[2, 3, 4], &data);
        let (p, inv) = permute_array(&a, &[2, 0, 1]);
        assert_eq!(p.shape(), &[4, 2, 3]);
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    assert_eq!(p.at(&[k, i, j]), a.at(&[i, j, k]));
                }
            }
        }
        assert_eq!(permute_array(&p, &inv).0, a);
    }

    #[test]
    fn concat_and_narrow_are_inverse() {
        let g = Graph::<f64>::new();
        let a = g.leaf(Array::from_f64(&[2, 2], &[1., 2., 3., 4.]));
        let b = g.leaf(Array::from_f64(&[2, 1], &[5., 6.]));
        let c = concat(&[a, b], 1);
        assert_eq!(c.value().data(), &[1., 2., 5., 3., 4., 6.]);
        let back = c.narrow(1, 2, 1);
        assert_eq!(back.value().data(), &[5., 6.]);
        let grads = g.backward(back.sum());
        assert_eq!(grads.wrt(a).data(), &[0., 0., 0., 0.]);
        assert_eq!(grads.wrt(b).data(), &[1., 1.]);
    }

    #[test]
    fn log_softmax_rows_normalize() {
        let g = Graph::<f64>::new();
        let a = g.leaf(Array::from_f64(&[2, 3], &[1., 2., 3., -5., 0., 5.]));
        let y = a.log_softmax().value();
        for row in y.data().chunks(3) {
            let s: f64 = row.iter().map(|x| x.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
