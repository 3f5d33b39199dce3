//! Central finite-difference gradient checking.

use crate::graph::{Graph, NodeId};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// `||a - n|| / max(||a||, ||n||)`, or the absolute difference when both
/// norms vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Relative error of every parameter tensor's gradient of the scalar built
/// by `f`, against central differences with step `eps`.
pub fn parameter_errors(
    store: &ParamStore,
    eps: f64,
    f: &dyn Fn(&mut Graph, &ParamStore) -> NodeId,
) -> Vec<(String, f64)> {
    let eval = |store: &ParamStore| {
        let mut g = Graph::new();
        let out = f(&mut g, store);
        g.value(out).item()
    };
    let mut g = Graph::new();
    let out = f(&mut g, store);
    let mut analytic = store.clone();
    analytic.zero_grads();
    if g.backward(out).is_ok() {
        g.accumulate_param_grads(&mut analytic);
    }
    let mut work = store.clone();
    let mut errors = Vec::new();
    for (pid, p) in store.iter() {
        let mut numeric = vec![0.0; p.value.len()];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let x = p.value.data()[k];
            work.value_mut(pid).data_mut()[k] = x + eps;
            let plus = eval(&work);
            work.value_mut(pid).data_mut()[k] = x - eps;
            let minus = eval(&work);
            work.value_mut(pid).data_mut()[k] = x;
            *slot = (plus - minus) / (2.0 * eps);
        }
        errors.push((p.name.clone(), relative_error(analytic.grad(pid).data(), &numeric)));
    }
    errors
}

/// Reduces `out` to a scalar as a weighted sum with fixed weights, so that
/// every entry contributes to the checked gradient.
pub fn weighted_sum(g: &mut Graph, out: NodeId, weights: &Tensor) -> NodeId {
    let w = g.input(weights.clone());
    let p = g.mul(out, w).expect("weights match the output shape");
    g.sum_all(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_correct_and_a_wrong_gradient() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::row_vector(&[0.3, -1.2]));
        let id = store.find("x").unwrap();
        let good = parameter_errors(&store, 1e-5, &|g, s| {
            let x = g.param(s, id);
            let y = g.square(x);
            g.sum_all(y)
        });
        assert!(good[0].1 < 1e-8);
        assert!(relative_error(&[1.0, 0.0], &[0.0, 1.0]) > 0.5);
    }
}
