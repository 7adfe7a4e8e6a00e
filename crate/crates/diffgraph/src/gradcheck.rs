//! Central finite-difference checks against reverse-mode gradients.
//!
//! The finite-difference side only ever evaluates forward values, so it stays
//! independent of every adjoint rule it checks.

use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::GraphError;

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

/// Checks gradients with respect to leaf inputs. Returns one relative error per input.
pub fn check_inputs<F>(inputs: &[Tensor], step: f64, f: F) -> Result<Vec<f64>, GraphError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, GraphError>,
{
    let eval = |values: &[Tensor]| -> Result<f64, GraphError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.input(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).item())
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let mut errors = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        let mut numeric = vec![0.0; inputs[k].len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + step;
            let up = eval(&work)?;
            work[k].data_mut()[i] = orig - step;
            let down = eval(&work)?;
            work[k].data_mut()[i] = orig;
            *slot = (up - down) / (2.0 * step);
        }
        errors.push(relative_error(&analytic, &numeric));
    }
    Ok(errors)
}

/// Checks gradients with respect to every parameter in `store`.
///
/// `f` builds the loss from the store's current values. At most `max_elements` evenly
/// spaced entries of each parameter are probed. Returns `(name, relative error)` pairs.
pub fn check_params<F>(
    store: &mut ParamStore,
    step: f64,
    max_elements: usize,
    f: F,
) -> Result<Vec<(String, f64)>, GraphError>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, GraphError>,
{
    store.zero_grads();
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    let grads = g.backward(loss)?;
    g.accumulate_into(&grads, store);

    let ids: Vec<_> = store.ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let len = store.value(id).len();
        let stride = len.div_ceil(max_elements.max(1)).max(1);
        let probe: Vec<usize> = (0..len).step_by(stride).collect();
        let analytic: Vec<f64> = probe.iter().map(|&i| store.grad(id).data()[i]).collect();
        let mut numeric = Vec::with_capacity(probe.len());
        for &i in &probe {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + step;
            let mut g = Graph::new();
            let l = f(&mut g, store)?;
            let up = g.value(l).item();
            store.value_mut(id).data_mut()[i] = orig - step;
            let mut g = Graph::new();
            let l = f(&mut g, store)?;
            let down = g.value(l).item();
            store.value_mut(id).data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * step));
        }
        out.push((
            store.name(id).to_string(),
            relative_error(&analytic, &numeric),
        ));
    }
    store.zero_grads();
    Ok(out)
}
