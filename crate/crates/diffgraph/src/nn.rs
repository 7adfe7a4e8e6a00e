//! Layers built from graph primitives: affine maps and recurrent cells.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::GraphError;

/// `y = x·W + b` with `W: in × out`.
#[derive(Clone, Debug)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    pub w: Var,
    pub b: Var,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let scale = 1.0 / (in_dim as f64).sqrt();
        let w = store.add_uniform(&format!("{name}.w"), &[in_dim, out_dim], scale, rng);
        let b = store.add_zeros(&format!("{name}.b"), &[1, out_dim]);
        Self {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn bind(&self, g: &mut Graph, store: &ParamStore) -> BoundLinear {
        BoundLinear {
            w: g.param(store, self.w),
            b: g.param(store, self.b),
        }
    }

    pub fn bias_id(&self) -> ParamId {
        self.b
    }
}

impl BoundLinear {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, GraphError> {
        let xw = g.matmul(x, self.w)?;
        g.add_bias(xw, self.b)
    }
}

/// Recurrent cell family.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    /// Gated recurrent unit with update and reset gates.
    #[default]
    Gru,
    /// Plain `tanh` recurrence.
    Elman,
}

impl CellKind {
    fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Elman => 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RnnCell {
    pub kind: CellKind,
    pub input: usize,
    pub hidden: usize,
    w: ParamId,
    u: ParamId,
    b: ParamId,
    bu: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundCell {
    kind: CellKind,
    hidden: usize,
    w: Var,
    u: Var,
    b: Var,
    bu: Var,
}

impl RnnCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        kind: CellKind,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let gates = kind.gates() * hidden;
        let scale = 1.0 / (hidden as f64).sqrt();
        let w = store.add_uniform(&format!("{name}.w"), &[input, gates], scale, rng);
        let u = store.add_uniform(&format!("{name}.u"), &[hidden, gates], scale, rng);
        let b = store.add_zeros(&format!("{name}.b"), &[1, gates]);
        let bu = store.add_zeros(&format!("{name}.bu"), &[1, gates]);
        Self {
            kind,
            input,
            hidden,
            w,
            u,
            b,
            bu,
        }
    }

    pub fn bind(&self, g: &mut Graph, store: &ParamStore) -> BoundCell {
        BoundCell {
            kind: self.kind,
            hidden: self.hidden,
            w: g.param(store, self.w),
            u: g.param(store, self.u),
            b: g.param(store, self.b),
            bu: g.param(store, self.bu),
        }
    }
}

impl BoundCell {
    pub fn hidden(&self) -> usize {
        self.hidden
    }
}

/// One recurrent step on a batch: `input` is `B × in`, `state` is `B × h`.
pub fn rnn_cell(
    g: &mut Graph,
    input: Var,
    state: Var,
    cell: &BoundCell,
) -> Result<Var, GraphError> {
    let h = cell.hidden;
    let gx = g.matmul(input, cell.w)?;
    let gx = g.add_bias(gx, cell.b)?;
    let gh = g.matmul(state, cell.u)?;
    let gh = g.add_bias(gh, cell.bu)?;
    match cell.kind {
        CellKind::Elman => {
            let pre = g.add(gx, gh)?;
            Ok(g.tanh(pre))
        }
        CellKind::Gru => {
            let zr_x = g.slice(gx, 1, 0, 2 * h)?;
            let zr_h = g.slice(gh, 1, 0, 2 * h)?;
            let zr = g.add(zr_x, zr_h)?;
            let zr = g.sigmoid(zr);
            let z = g.slice(zr, 1, 0, h)?;
            let r = g.slice(zr, 1, h, h)?;
            let n_x = g.slice(gx, 1, 2 * h, h)?;
            let n_h = g.slice(gh, 1, 2 * h, h)?;
            let gated = g.mul(r, n_h)?;
            let pre = g.add(n_x, gated)?;
            let n = g.tanh(pre);
            // h' = n + z ⊙ (h - n)
            let keep = g.sub(state, n)?;
            let keep = g.mul(z, keep)?;
            g.add(n, keep)
        }
    }
}

/// Step that leaves the state untouched where `mask` is 0 (padded positions).
pub fn masked_step(
    g: &mut Graph,
    input: Var,
    state: Var,
    mask: Option<Var>,
    cell: &BoundCell,
) -> Result<Var, GraphError> {
    let cand = rnn_cell(g, input, state, cell)?;
    match mask {
        None => Ok(cand),
        Some(m) => {
            let delta = g.sub(cand, state)?;
            let delta = g.mul(m, delta)?;
            g.add(state, delta)
        }
    }
}

pub struct BiOutputs {
    /// Per step `[forward; backward]` states, `B × 2h`.
    pub steps: Vec<Var>,
    /// `[forward final; backward final]`, `B × 2h`.
    pub last: Var,
}

/// Runs a forward and a backward cell over padded sequences.
///
/// `inputs[t]` is `B × in`; `masks[t]` is `B × h` with 1 where step `t` is inside the
/// sequence. With held states on padding, the forward final state is each sequence's
/// own last state and the backward pass starts from zero at each sequence's end.
pub fn run_bidirectional(
    g: &mut Graph,
    fwd: &BoundCell,
    bwd: &BoundCell,
    inputs: &[Var],
    masks: &[Option<Var>],
    keep_steps: bool,
) -> Result<BiOutputs, GraphError> {
    if inputs.is_empty() || inputs.len() != masks.len() {
        return Err(GraphError::Shape(
            "bidirectional run needs aligned inputs and masks".into(),
        ));
    }
    let batch = g.value(inputs[0]).rows();
    let mut state = g.input(Tensor::zeros(&[batch, fwd.hidden]));
    let mut fwd_states = Vec::with_capacity(inputs.len());
    for (x, m) in inputs.iter().zip(masks) {
        state = masked_step(g, *x, state, *m, fwd)?;
        fwd_states.push(state);
    }
    let fwd_last = state;
    let mut state = g.input(Tensor::zeros(&[batch, bwd.hidden]));
    let mut bwd_states = vec![state; inputs.len()];
    for t in (0..inputs.len()).rev() {
        state = masked_step(g, inputs[t], state, masks[t], bwd)?;
        bwd_states[t] = state;
    }
    let bwd_last = state;
    let mut steps = Vec::new();
    if keep_steps {
        for (f, b) in fwd_states.iter().zip(&bwd_states) {
            steps.push(g.concat(&[*f, *b], 1)?);
        }
    }
    let last = g.concat(&[fwd_last, bwd_last], 1)?;
    Ok(BiOutputs { steps, last })
}
