//! Parameterised building blocks. Layers only hold [`ParamId`]s, so the same
//! layer value drives `f32` and `f64` stores alike.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::{concat, Array, ParamId, ParamStore, Scalar, Session, Var};

/// Glorot-uniform initialisation.
pub fn xavier<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Array<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, shape, bound)
}

pub fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Array<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.random_range(-bound..=bound))).collect();
    Array::new(shape, data)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let w = store.add(format!("{name}.w"), xavier(rng, &[fan_in, fan_out], fan_in, fan_out));
        let b = Some(store.add(format!("{name}.b"), Array::zeros(&[fan_out])));
        Self { w, b, fan_in, fan_out }
    }

    /// Zero weights and the given bias; the layer starts out as a constant.
    pub fn zeroed<T: Scalar>(store: &mut ParamStore<T>, name: &str, fan_in: usize, bias: Array<T>) -> Self {
        let fan_out = bias.len();
        let w = store.add(format!("{name}.w"), Array::zeros(&[fan_in, fan_out]));
        let b = Some(store.add(format!("{name}.b"), bias));
        Self { w, b, fan_in, fan_out }
    }

    /// `x [rows, fan_in] -> [rows, fan_out]`.
    pub fn forward<'g, T: Scalar>(&self, s: &Session<'g, '_, T>, x: Var<'g, T>) -> Var<'g, T> {
        let y = x.matmul(s.param(self.w));
        match self.b {
            Some(b) => y + s.param(b),
            None => y,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        Self::rect(store, rng, name, cin, cout, (k, k), stride, pad)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn rect<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        (kh, kw): (usize, usize),
        stride: usize,
        pad: usize,
    ) -> Self {
        let w = store.add(format!("{name}.w"), xavier(rng, &[cout, cin, kh, kw], cin * kh * kw, cout * kh * kw));
        let b = store.add(format!("{name}.b"), Array::zeros(&[cout]));
        Self { w, b, stride, pad }
    }

    pub fn forward<'g, T: Scalar>(&self, s: &Session<'g, '_, T>, x: Var<'g, T>) -> Var<'g, T> {
        x.conv2d(s.param(self.w), Some(s.param(self.b)), self.stride, self.pad)
    }
}

/// Gated recurrent unit, PyTorch gate layout (reset, update, new).
#[derive(Clone, Debug)]
pub struct GruCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, input: usize, hidden: usize) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            w_ih: store.add(format!("{name}.w_ih"), uniform(rng, &[input, 3 * hidden], bound)),
            w_hh: store.add(format!("{name}.w_hh"), uniform(rng, &[hidden, 3 * hidden], bound)),
            b_ih: store.add(format!("{name}.b_ih"), Array::zeros(&[3 * hidden])),
            b_hh: store.add(format!("{name}.b_hh"), Array::zeros(&[3 * hidden])),
            hidden,
        }
    }

    /// Input projection for a whole sequence, `[T, in] -> [T, 3h]`.
    pub fn project<'g, T: Scalar>(&self, s: &Session<'g, '_, T>, xs: Var<'g, T>) -> Var<'g, T> {
        xs.matmul(s.param(self.w_ih)) + s.param(self.b_ih)
    }

    /// One step from a precomputed input projection row `[1, 3h]`.
    pub fn step_projected<'g, T: Scalar>(&self, s: &Session<'g, '_, T>, gi: Var<'g, T>, h: Var<'g, T>) -> Var<'g, T> {
        let n = self.hidden;
        let gh = h.matmul(s.param(self.w_hh)) + s.param(self.b_hh);
        let r = (gi.narrow(1, 0, n) + gh.narrow(1, 0, n)).sigmoid();
        let z = (gi.narrow(1, n, n) + gh.narrow(1, n, n)).sigmoid();
        let cand = (gi.narrow(1, 2 * n, n) + r * gh.narrow(1, 2 * n, n)).tanh();
        // (1 - z) * cand + z * h
        cand + z * (h - cand)
    }

    pub fn step<'g, T: Scalar>(&self, s: &Session<'g, '_, T>, x: Var<'g, T>, h: Var<'g, T>) -> Var<'g, T> {
        let gi = self.project(s, x);
        self.step_projected(s, gi, h)
    }

    /// Runs over `[T, in]`, returning `[T, h]`, optionally right-to-left.
    pub fn run<'g, T: Scalar>(&self, s: &Session<'g, '_, T>, xs: Var<'g, T>, reverse: bool) -> Var<'g, T> {
        let len = xs.shape()[0];
        let gi = self.project(s, xs);
        let mut h = s.constant(Array::zeros(&[1, self.hidden]));
        let mut outs = vec![h; len];
        let order: Vec<usize> = if reverse { (0..len).rev().collect() } else { (0..len).collect() };
        for t in order {
            h = self.step_projected(s, gi.narrow(0, t, 1), h);
            outs[t] = h;
        }
        concat(&outs, 0)
    }
}

/// Long short-term memory cell, gate layout (input, forget, cell, output).
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, input: usize, hidden: usize) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        // forget-gate bias of 1
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].iter_mut().for_each(|x| *x = 1.0);
        Self {
            w_ih: store.add(format!("{name}.w_ih"), uniform(rng, &[input, 4 * hidden], bound)),
            w_hh: store.add(format!("{name}.w_hh"), uniform(rng, &[hidden, 4 * hidden], bound)),
            b: store.add(format!("{name}.b"), Array::from_f64(&[4 * hidden], &b)),
            hidden,
        }
    }

    pub fn project<'g, T: Scalar>(&self, s: &Session<'g, '_, T>, xs: Var<'g, T>) -> Var<'g, T> {
        xs.matmul(s.param(self.w_ih)) + s.param(self.b)
    }

    /// One step from a projected input row; returns `(h, c)`.
    pub fn step_projected<'g, T: Scalar>(
        &self,
        s: &Session<'g, '_, T>,
        gi: Var<'g, T>,
        (h, c): (Var<'g, T>, Var<'g, T>),
    ) -> (Var<'g, T>, Var<'g, T>) {
        let n = self.hidden;
        let gates = gi + h.matmul(s.param(self.w_hh));
        let i = gates.narrow(1, 0, n).sigmoid();
        let f = gates.narrow(1, n, n).sigmoid();
        let g = gates.narrow(1, 2 * n, n).tanh();
        let o = gates.narrow(1, 3 * n, n).sigmoid();
        let c = f * c + i * g;
        (o * c.tanh(), c)
    }

    pub fn zero_state<'g, T: Scalar>(&self, s: &Session<'g, '_, T>) -> (Var<'g, T>, Var<'g, T>) {
        let z = s.constant(Array::zeros(&[1, self.hidden]));
        (z, z)
    }

    pub fn run<'g, T: Scalar>(&self, s: &Session<'g, '_, T>, xs: Var<'g, T>, reverse: bool) -> Var<'g, T> {
        let len = xs.shape()[0];
        let gi = self.project(s, xs);
        let mut state = self.zero_state(s);
        let mut outs = vec![state.0; len];
        let order: Vec<usize> = if reverse { (0..len).rev().collect() } else { (0..len).collect() };
        for t in order {
            state = self.step_projected(s, gi.narrow(0, t, 1), state);
            outs[t] = state.0;
        }
        concat(&outs, 0)
    }
}

/// Which recurrent cell a [`BiRnn`] uses.
#[derive(Clone, Debug)]
pub enum Cell {
    Gru(GruCell),
    Lstm(LstmCell),
}

impl Cell {
    fn run<'g, T: Scalar>(&self, s: &Session<'g, '_, T>, xs: Var<'g, T>, reverse: bool) -> Var<'g, T> {
        match self {
            Cell::Gru(c) => c.run(s, xs, reverse),
            Cell::Lstm(c) => c.run(s, xs, reverse),
        }
    }
}

/// Bidirectional recurrent layer: `[T, in] -> [T, 2h]`.
#[derive(Clone, Debug)]
pub struct BiRnn {
    pub fwd: Cell,
    pub bwd: Cell,
}

impl BiRnn {
    pub fn gru<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, input: usize, hidden: usize) -> Self {
        Self {
            fwd: Cell::Gru(GruCell::new(store, rng, &format!("{name}.fwd"), input, hidden)),
            bwd: Cell::Gru(GruCell::new(store, rng, &format!("{name}.bwd"), input, hidden)),
        }
    }

    pub fn lstm<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, input: usize, hidden: usize) -> Self {
        Self {
            fwd: Cell::Lstm(LstmCell::new(store, rng, &format!("{name}.fwd"), input, hidden)),
            bwd: Cell::Lstm(LstmCell::new(store, rng, &format!("{name}.bwd"), input, hidden)),
        }
    }

    pub fn forward<'g, T: Scalar>(&self, s: &Session<'g, '_, T>, xs: Var<'g, T>) -> Var<'g, T> {
        concat(&[self.fwd.run(s, xs, false), self.bwd.run(s, xs, true)], 1)
    }
}
