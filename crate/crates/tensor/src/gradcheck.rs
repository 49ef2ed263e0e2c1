//! Central finite-difference verification of analytic gradients.

use crate::{Array, Graph, ParamId, ParamStore, Scalar, Session, Var};

/// Outcome of a gradient check.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||)` over every checked coordinate.
    pub rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
    pub analytic_norm: f64,
}

impl GradCheck {
    fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        let mut diff = 0.0;
        let mut na = 0.0;
        let mut nn = 0.0;
        let mut max_abs: f64 = 0.0;
        for &(a, n) in pairs {
            diff += (a - n) * (a - n);
            na += a * a;
            nn += n * n;
            max_abs = max_abs.max((a - n).abs());
        }
        let denom = na.sqrt().max(nn.sqrt());
        let rel_err = if denom == 0.0 { 0.0 } else { diff.sqrt() / denom };
        Self { rel_err, max_abs_err: max_abs, checked: pairs.len(), analytic_norm: na.sqrt() }
    }
}

/// Coordinates to probe: all of them, or an evenly strided subset.
fn probe_indices(len: usize, limit: usize) -> Vec<usize> {
    if len <= limit {
        (0..len).collect()
    } else {
        let step = len as f64 / limit as f64;
        (0..limit).map(|i| (i as f64 * step) as usize).collect()
    }
}

/// Checks d(loss)/d(params) for the listed parameters, probing at most
/// `limit` coordinates per parameter.
pub fn check_params<T, F>(store: &ParamStore<T>, ids: &[ParamId], eps: f64, limit: usize, loss: F) -> GradCheck
where
    T: Scalar,
    F: for<'g, 's> Fn(&Session<'g, 's, T>) -> Var<'g, T>,
{
    let analytic = {
        let g = Graph::new();
        let s = Session::new(&g, store);
        let out = loss(&s);
        let grads = s.param_grads(&g.backward(out));
        ids.iter()
            .map(|&id| grads.get(id).cloned().unwrap_or_else(|| Array::zeros(store.get(id).shape())))
            .collect::<Vec<_>>()
    };
    let eval = |st: &ParamStore<T>| -> f64 {
        let g = Graph::new();
        let s = Session::new(&g, st);
        loss(&s).item().f64()
    };
    let mut work = store.clone();
    let mut pairs = Vec::new();
    for (&id, grad) in ids.iter().zip(&analytic) {
        for i in probe_indices(grad.len(), limit) {
            let orig = work.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + T::of(eps);
            let up = eval(&work);
            work.get_mut(id).data_mut()[i] = orig - T::of(eps);
            let down = eval(&work);
            work.get_mut(id).data_mut()[i] = orig;
            pairs.push((grad.data()[i].f64(), (up - down) / (2.0 * eps)));
        }
    }
    GradCheck::from_pairs(&pairs)
}

/// Checks d(loss)/d(inputs) for a function of plain arrays.
pub fn check_inputs<T, F>(inputs: &[Array<T>], eps: f64, limit: usize, loss: F) -> GradCheck
where
    T: Scalar,
    F: for<'g> Fn(&'g Graph<T>, &[Var<'g, T>]) -> Var<'g, T>,
{
    let analytic: Vec<Array<T>> = {
        let g = Graph::new();
        let vars: Vec<Var<'_, T>> = inputs.iter().map(|a| g.leaf(a.clone())).collect();
        let out = loss(&g, &vars);
        let grads = g.backward(out);
        vars.iter().map(|&v| grads.wrt(v)).collect()
    };
    let eval = |xs: &[Array<T>]| -> f64 {
        let g = Graph::new();
        let vars: Vec<Var<'_, T>> = xs.iter().map(|a| g.constant(a.clone())).collect();
        loss(&g, &vars).item().f64()
    };
    let mut work = inputs.to_vec();
    let mut pairs = Vec::new();
    for k in 0..inputs.len() {
        for i in probe_indices(inputs[k].len(), limit) {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + T::of(eps);
            let up = eval(&work);
            work[k].data_mut()[i] = orig - T::of(eps);
            let down = eval(&work);
            work[k].data_mut()[i] = orig;
            pairs.push((analytic[k].data()[i].f64(), (up - down) / (2.0 * eps)));
        }
    }
    GradCheck::from_pairs(&pairs)
}
