use std::ops;
use std::rc::Rc;

use crate::array::{numel, strides};
use crate::{Array, Scalar, Var};

/// Numpy-style broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => panic!("cannot broadcast {a:?} with {b:?}"),
        };
    }
    out
}

/// For every flat index of `out_shape`, the flat index into an array of
/// `in_shape` that broadcasts to it. `None` when the shapes are identical.
fn broadcast_map(out_shape: &[usize], in_shape: &[usize]) -> Option<Rc<Vec<usize>>> {
    if out_shape == in_shape {
        return None;
    }
    let n = out_shape.len();
    let offset = n - in_shape.len();
    let in_strides = strides(in_shape);
    let mut eff = vec![0usize; n];
    for i in 0..in_shape.len() {
        eff[offset + i] = if in_shape[i] == 1 { 0 } else { in_strides[i] };
    }
    let total = numel(out_shape);
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    let mut cur = 0usize;
    for _ in 0..total {
        map.push(cur);
        for d in (0..n).rev() {
            idx[d] += 1;
            cur += eff[d];
            if idx[d] < out_shape[d] {
                break;
            }
            cur -= eff[d] * idx[d];
            idx[d] = 0;
        }
    }
    Some(Rc::new(map))
}

#[inline]
fn at(map: &Option<Rc<Vec<usize>>>, i: usize) -> usize {
    match map {
        Some(m) => m[i],
        None => i,
    }
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

fn binary<'g, T: Scalar>(a: Var<'g, T>, b: Var<'g, T>, op: BinOp) -> Var<'g, T> {
    let av = a.value();
    let bv = b.value();
    let shape = broadcast_shape(av.shape(), bv.shape());
    let ma = broadcast_map(&shape, av.shape());
    let mb = broadcast_map(&shape, bv.shape());
    let (ad, bd) = (av.data(), bv.data());
    let out: Vec<T> = (0..numel(&shape))
        .map(|i| {
            let (x, y) = (ad[at(&ma, i)], bd[at(&mb, i)]);
            match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => x / y,
            }
        })
        .collect();
    let (a_shape, b_shape) = (av.shape().to_vec(), bv.shape().to_vec());
    let (a_rg, b_rg) = (a.requires_grad(), b.requires_grad());
    a.op(Array::new(&shape, out), &[a, b], move |g| {
        let gd = g.data();
        let ga = a_rg.then(|| {
            let mut ga = Array::zeros(&a_shape);
            let gad = ga.data_mut();
            for (i, &gi) in gd.iter().enumerate() {
                let d = match op {
                    BinOp::Add | BinOp::Sub => gi,
                    BinOp::Mul => gi * bv.data()[at(&mb, i)],
                    BinOp::Div => gi / bv.data()[at(&mb, i)],
                };
                gad[at(&ma, i)] += d;
            }
            ga
        });
        let gb = b_rg.then(|| {
            let mut gb = Array::zeros(&b_shape);
            let gbd = gb.data_mut();
            for (i, &gi) in gd.iter().enumerate() {
                let d = match op {
                    BinOp::Add => gi,
                    BinOp::Sub => -gi,
                    BinOp::Mul => gi * av.data()[at(&ma, i)],
                    BinOp::Div => {
                        let y = bv.data()[at(&mb, i)];
                        -gi * av.data()[at(&ma, i)] / (y * y)
                    }
                };
                gbd[at(&mb, i)] += d;
            }
            gb
        });
        vec![ga, gb]
    })
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn add(self, other: Var<'g, T>) -> Var<'g, T> {
        binary(self, other, BinOp::Add)
    }

    pub fn sub(self, other: Var<'g, T>) -> Var<'g, T> {
        binary(self, other, BinOp::Sub)
    }

    pub fn mul(self, other: Var<'g, T>) -> Var<'g, T> {
        binary(self, other, BinOp::Mul)
    }

    pub fn div(self, other: Var<'g, T>) -> Var<'g, T> {
        binary(self, other, BinOp::Div)
    }

    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    pub fn unary(
        self,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Var<'g, T> {
        let xv = self.value();
        let yv = Rc::new(xv.map(f));
        let y_keep = yv.clone();
        let value = (*yv).clone();
        self.op(value, &[self], move |g| {
            let data = g
                .data()
                .iter()
                .zip(xv.data())
                .zip(y_keep.data())
                .map(|((&gi, &x), &y)| gi * df(x, y))
                .collect();
            vec![Some(Array::new(g.shape(), data))]
        })
    }

    pub fn neg(self) -> Var<'g, T> {
        self.unary(|x| -x, |_, _| -T::one())
    }

    pub fn scale(self, c: f64) -> Var<'g, T> {
        let c = T::of(c);
        self.unary(move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(self, c: f64) -> Var<'g, T> {
        let c = T::of(c);
        self.unary(move |x| x + c, |_, _| T::one())
    }

    pub fn exp(self) -> Var<'g, T> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn ln(self) -> Var<'g, T> {
        self.unary(|x| x.ln(), |x, _| x.recip())
    }

    pub fn tanh(self) -> Var<'g, T> {
        self.unary(|x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sigmoid(self) -> Var<'g, T> {
        self.unary(sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn relu(self) -> Var<'g, T> {
        self.unary(|x| x.max(T::zero()), |x, _| if x > T::zero() { T::one() } else { T::zero() })
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'g, T> {
        let s = T::of(slope);
        self.unary(
            move |x| if x > T::zero() { x } else { x * s },
            move |x, _| if x > T::zero() { T::one() } else { s },
        )
    }

    /// `ln(1 + e^x)`, computed stably.
    pub fn softplus(self) -> Var<'g, T> {
        self.unary(softplus, |x, _| sigmoid(x))
    }

    pub fn square(self) -> Var<'g, T> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    pub fn sqrt(self) -> Var<'g, T> {
        self.unary(|x| x.sqrt(), |_, y| T::of(0.5) / y)
    }

    pub fn abs(self) -> Var<'g, T> {
        self.unary(|x| x.abs(), |x, _| x.signum() * if x == T::zero() { T::zero() } else { T::one() })
    }

    pub fn sin(self) -> Var<'g, T> {
        self.unary(|x| x.sin(), |x, _| x.cos())
    }

    pub fn cos(self) -> Var<'g, T> {
        self.unary(|x| x.cos(), |x, _| -x.sin())
    }

    /// Clamps to `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'g, T> {
        let (lo, hi) = (T::of(lo), T::of(hi));
        self.unary(
            move |x| x.max(lo).min(hi),
            move |x, _| if x >= lo && x <= hi { T::one() } else { T::zero() },
        )
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    if x > T::of(30.0) {
        x
    } else {
        x.max(T::zero()) + (-x.abs()).exp().ln_1p()
    }
}

impl<'g, T: Scalar> ops::Add for Var<'g, T> {
    type Output = Var<'g, T>;
    fn add(self, rhs: Self) -> Self::Output {
        Var::add(self, rhs)
    }
}

impl<'g, T: Scalar> ops::Sub for Var<'g, T> {
    type Output = Var<'g, T>;
    fn sub(self, rhs: Self) -> Self::Output {
        Var::sub(self, rhs)
    }
}

impl<'g, T: Scalar> ops::Mul for Var<'g, T> {
    type Output = Var<'g, T>;
    fn mul(self, rhs: Self) -> Self::Output {
        Var::mul(self, rhs)
    }
}

impl<'g, T: Scalar> ops::Div for Var<'g, T> {
    type Output = Var<'g, T>;
    fn div(self, rhs: Self) -> Self::Output {
        Var::div(self, rhs)
    }
}

impl<'g, T: Scalar> ops::Neg for Var<'g, T> {
    type Output = Var<'g, T>;
    fn neg(self) -> Self::Output {
        Var::neg(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Graph;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]), vec![2, 3]);
        assert_eq!(broadcast_shape(&[4, 1, 5], &[3, 1]), vec![4, 3, 5]);
        assert_eq!(broadcast_shape(&[], &[2]), vec![2]);
    }

    #[test]
    fn broadcast_add_and_grad() {
        let g = Graph::<f64>::new();
        let a = g.leaf(Array::from_f64(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let b = g.leaf(Array::from_f64(&[3], &[10., 20., 30.]));
        let c = (a * b).sum();
        assert_eq!(c.item(), 10. + 40. + 90. + 40. + 100. + 180.);
        let grads = g.backward(c);
        assert_eq!(grads.wrt(b).data(), &[5., 7., 9.]);
        assert_eq!(grads.wrt(a).data(), &[10., 20., 30., 10., 20., 30.]);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(100.0f64) - 100.0).abs() < 1e-12);
        assert!(softplus(-100.0f64) > 0.0);
        assert!((softplus(0.0f64) - 2f64.ln()).abs() < 1e-12);
    }
}
