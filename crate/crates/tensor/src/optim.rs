use crate::{Array, ParamGrads, ParamId, ParamStore, Scalar};

/// Adam over a fixed subset of a store's parameters.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    ids: Vec<ParamId>,
    step: u64,
    m: Vec<Array<T>>,
    v: Vec<Array<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, ids: Vec<ParamId>, lr: f64) -> Self {
        let m: Vec<Array<T>> = ids.iter().map(|&id| Array::zeros(store.get(id).shape())).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, v: m.clone(), m, ids, step: 0 }
    }

    pub fn all(store: &ParamStore<T>, lr: f64) -> Self {
        Self::new(store, store.ids().collect(), lr)
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &ParamGrads<T>) {
        self.step += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(self.step as i32));
        let c2 = T::of(1.0 - self.beta2.powi(self.step as i32));
        let (lr, eps) = (T::of(self.lr), T::of(self.eps));
        for (k, &id) in self.ids.iter().enumerate() {
            let Some(g) = grads.get(id) else { continue };
            let p = store.get_mut(id);
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mh = *mi / c1;
                let vh = *vi / c2;
                *x -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}
