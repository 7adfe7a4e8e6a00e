use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::GraphError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
struct Param {
    name: String,
    value: Tensor,
    grad: Tensor,
}

/// Named trainable tensors with accumulated gradients.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, ParamId>,
}

/// A parameter as it appears in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter; panics on a duplicate name since that is a model-construction bug.
    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter {name}"
        );
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    /// Uniform initialization in `[-scale, scale]`.
    pub fn add_uniform(
        &mut self,
        name: &str,
        shape: &[usize],
        scale: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-scale..=scale)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data).expect("shape"))
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].grad
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.grad.norm_sq())
            .sum::<f64>()
            .sqrt()
    }

    pub fn grads_finite(&self) -> bool {
        self.params.iter().all(|p| p.grad.is_finite())
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn to_named(&self) -> Vec<NamedTensor> {
        self.params
            .iter()
            .map(|p| NamedTensor {
                name: p.name.clone(),
                tensor: p.value.clone(),
            })
            .collect()
    }

    /// Overwrites values by name. Every stored parameter must be present with a matching shape.
    pub fn load_named(&mut self, named: &[NamedTensor]) -> Result<(), GraphError> {
        let lookup: BTreeMap<&str, &Tensor> =
            named.iter().map(|n| (n.name.as_str(), &n.tensor)).collect();
        for p in &mut self.params {
            let t = lookup
                .get(p.name.as_str())
                .ok_or_else(|| GraphError::Checkpoint(format!("missing parameter {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(GraphError::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = (*t).clone();
        }
        Ok(())
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if norm > max_norm && norm.is_finite() {
        store.scale_grads(max_norm / norm);
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn lr(&self) -> f64 {
        match self {
            OptimizerConfig::Sgd { lr } | OptimizerConfig::Adam { lr, .. } => *lr,
        }
    }

    pub fn set_lr(&mut self, value: f64) {
        match self {
            OptimizerConfig::Sgd { lr } | OptimizerConfig::Adam { lr, .. } => *lr = value,
        }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam(1e-3)
    }
}

/// Per-parameter optimizer moments, serializable with a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub step: u64,
    pub first_moment: Vec<NamedTensor>,
    pub second_moment: Vec<NamedTensor>,
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store
            .params
            .iter()
            .map(|p| Tensor::zeros(p.value.shape()))
            .collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.set_lr(lr);
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update and clears the gradients.
    ///
    /// A non-finite gradient aborts the step: parameters stay untouched, gradients are cleared
    /// and the error is returned.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), GraphError> {
        if !store.grads_finite() {
            store.zero_grads();
            return Err(GraphError::NonFiniteGradient);
        }
        self.step += 1;
        match self.config {
            OptimizerConfig::Sgd { lr } => {
                for p in &mut store.params {
                    for (w, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                        *w -= lr * g;
                    }
                }
            }
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let bc1 = 1.0 - beta1.powi(self.step as i32);
                let bc2 = 1.0 - beta2.powi(self.step as i32);
                for ((p, m), v) in store.params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
                    let grads = p.grad.data();
                    let (m, v) = (m.data_mut(), v.data_mut());
                    for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                        let g = grads[i];
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                        let mhat = m[i] / bc1;
                        let vhat = v[i] / bc2;
                        *w -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        store.zero_grads();
        Ok(())
    }

    pub fn state(&self, store: &ParamStore) -> OptimizerState {
        let named = |ts: &[Tensor]| {
            store
                .params
                .iter()
                .zip(ts)
                .map(|(p, t)| NamedTensor {
                    name: p.name.clone(),
                    tensor: t.clone(),
                })
                .collect()
        };
        OptimizerState {
            config: self.config.clone(),
            step: self.step,
            first_moment: named(&self.m),
            second_moment: named(&self.v),
        }
    }

    pub fn from_state(state: &OptimizerState, store: &ParamStore) -> Result<Self, GraphError> {
        let mut opt = Self::new(state.config.clone(), store);
        opt.step = state.step;
        for (slot, moments) in [
            (&mut opt.m, &state.first_moment),
            (&mut opt.v, &state.second_moment),
        ] {
            if moments.len() != store.len() {
                return Err(GraphError::Checkpoint(
                    "optimizer state size mismatch".into(),
                ));
            }
            for ((dst, src), p) in slot.iter_mut().zip(moments).zip(&store.params) {
                if src.name != p.name || src.tensor.shape() != p.value.shape() {
                    return Err(GraphError::Checkpoint(format!(
                        "optimizer state for {}",
                        p.name
                    )));
                }
                *dst = src.tensor.clone();
            }
        }
        Ok(opt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_store(x0: f64) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::vector(vec![x0]));
        (store, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        for cfg in [OptimizerConfig::Sgd { lr: 0.1 }, OptimizerConfig::adam(0.1)] {
            let (mut store, id) = quadratic_store(3.0);
            let mut opt = Optimizer::new(cfg, &store);
            opt.step(&mut store).unwrap();
            assert_eq!(store.value(id).item(), 3.0);
        }
    }

    #[test]
    fn sgd_on_quadratic_matches_closed_form() {
        // f(x) = x², x_{k+1} = x_k - lr·2x_k = (1 - 2 lr) x_k
        let (mut store, id) = quadratic_store(1.0);
        let lr = 0.1;
        let mut opt = Optimizer::new(OptimizerConfig::Sgd { lr }, &store);
        for k in 1..=10 {
            let x = store.value(id).item();
            store.grad_mut(id).data_mut()[0] = 2.0 * x;
            opt.step(&mut store).unwrap();
            let expected = 0.8f64.powi(k);
            assert!((store.value(id).item() - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_gradient_aborts_step() {
        let (mut store, id) = quadratic_store(1.0);
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.1), &store);
        store.grad_mut(id).data_mut()[0] = f64::NAN;
        assert!(matches!(
            opt.step(&mut store),
            Err(GraphError::NonFiniteGradient)
        ));
        assert_eq!(store.value(id).item(), 1.0);
        assert_eq!(store.grad(id).item(), 0.0);
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::vector(vec![0.0, 0.0]));
        store.grad_mut(a).data_mut().copy_from_slice(&[3.0, 4.0]);
        let before = clip_grad_norm(&mut store, 1.0);
        assert_eq!(before, 5.0);
        assert!((store.grad_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adam_runs_are_identical() {
        let run = || {
            let (mut store, id) = quadratic_store(2.0);
            let mut opt = Optimizer::new(OptimizerConfig::adam(0.05), &store);
            let mut trace = vec![];
            for _ in 0..50 {
                let x = store.value(id).item();
                store.grad_mut(id).data_mut()[0] = 2.0 * x;
                opt.step(&mut store).unwrap();
                trace.push(store.value(id).item().to_bits());
            }
            trace
        };
        assert_eq!(run(), run());
    }
}
