//! Tape of primitive applications and their adjoint rules.
//!
//! A [`Graph`] records every primitive in application order, so the node list
//! is already topologically sorted; [`Graph::backward`] walks it once in
//! reverse.

use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm_acc, Tensor};
use crate::GraphError;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    SqDiff(Var, Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    LogSumExp(Var, usize),
    CumSum(Var, usize),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    Sum(Var),
    SumAxis(Var, usize),
    Gather(Var, Vec<usize>),
    Reshape(Var),
    Transpose(Var),
    Bezier(Var, Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the node does not influence the loss.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }
}

/// A single-threaded tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn check_axis(axis: usize) -> Result<(), GraphError> {
    if axis > 1 {
        return Err(GraphError::Shape(format!("axis {axis} out of range")));
    }
    Ok(())
}

/// Values of all degree-`n` Bernstein polynomials at `t`, written into `out[0..=n]`.
pub(crate) fn bernstein_all(n: usize, t: f64, out: &mut [f64]) {
    let s = 1.0 - t;
    out[0] = 1.0;
    for k in 1..=n {
        let mut prev = 0.0;
        for j in 0..k {
            let cur = out[j];
            out[j] = s * cur + prev;
            prev = t * cur;
        }
        out[k] = prev;
    }
}

/// Iterates the 1-D lanes of a `rows × cols` buffer along `axis`, as
/// `(start offset, stride, lane length)`.
fn lanes(rows: usize, cols: usize, axis: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    let (count, stride, len) = if axis == 1 {
        (rows, 1, cols)
    } else {
        (cols, cols, rows)
    };
    (0..count).map(move |l| {
        let start = if axis == 1 { l * cols } else { l };
        (start, stride, len)
    })
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A constant leaf. Its gradient is computed but never stored anywhere.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    /// A trainable leaf bound to `id` in `store`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        let (m, k) = self.value(a).dims();
        let (k2, n) = self.value(b).dims();
        if k != k2 {
            return Err(GraphError::Shape(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(
            m,
            k,
            n,
            1.0,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
        );
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b)))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, GraphError> {
        let (va, vb) = (self.value(a), self.value(b));
        if !va.same_dims(vb) {
            return Err(GraphError::Shape(format!(
                "{name} {:?} vs {:?}",
                va.dims(),
                vb.dims()
            )));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let (r, c) = va.dims();
        Ok(self.push(Tensor::matrix(r, c, data), op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise `(a - b)²`.
    pub fn sq_diff(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.binary(a, b, "sq_diff", |x, y| (x - y) * (x - y), Op::SqDiff(a, b))
    }

    /// Adds the `1 × n` row `bias` to every row of `a`. This is the only broadcast.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, GraphError> {
        let (m, n) = self.value(a).dims();
        if self.value(bias).dims() != (1, n) {
            return Err(GraphError::Shape(format!(
                "bias {:?} for {m}x{n}",
                self.value(bias).dims()
            )));
        }
        let b = self.value(bias).data();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        Ok(self.push(Tensor::matrix(m, n, out), Op::AddBias(a, bias)))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.value(a).dims();
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        self.push(Tensor::matrix(r, c, data), op)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.unary(a, |x| x * factor, Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// Overflow yields `inf`; the caller checks finiteness of the loss.
    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    /// Non-positive inputs yield `-inf`/`NaN`, flagged by [`Tensor::is_finite`].
    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, GraphError> {
        check_axis(axis)?;
        let v = self.value(a);
        let (r, c) = v.dims();
        let mut out = v.data().to_vec();
        for (start, stride, len) in lanes(r, c, axis) {
            let idx = |j: usize| start + j * stride;
            let max = (0..len)
                .map(|j| out[idx(j)])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..len {
                let e = (out[idx(j)] - max).exp();
                out[idx(j)] = e;
                total += e;
            }
            for j in 0..len {
                out[idx(j)] /= total;
            }
        }
        Ok(self.push(Tensor::matrix(r, c, out), Op::Softmax(a, axis)))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var, GraphError> {
        check_axis(axis)?;
        let v = self.value(a);
        let (r, c) = v.dims();
        let mut out = v.data().to_vec();
        for (start, stride, len) in lanes(r, c, axis) {
            let idx = |j: usize| start + j * stride;
            let lse = logsumexp((0..len).map(|j| out[idx(j)]));
            for j in 0..len {
                out[idx(j)] -= lse;
            }
        }
        Ok(self.push(Tensor::matrix(r, c, out), Op::LogSoftmax(a, axis)))
    }

    /// Reduces `axis`: `axis = 1` gives `rows × 1`, `axis = 0` gives `1 × cols`.
    pub fn logsumexp(&mut self, a: Var, axis: usize) -> Result<Var, GraphError> {
        check_axis(axis)?;
        let v = self.value(a);
        let (r, c) = v.dims();
        let data = v.data();
        let out: Vec<f64> = lanes(r, c, axis)
            .map(|(start, stride, len)| logsumexp((0..len).map(|j| data[start + j * stride])))
            .collect();
        let shape = if axis == 1 { (r, 1) } else { (1, c) };
        Ok(self.push(
            Tensor::matrix(shape.0, shape.1, out),
            Op::LogSumExp(a, axis),
        ))
    }

    pub fn cumsum(&mut self, a: Var, axis: usize) -> Result<Var, GraphError> {
        check_axis(axis)?;
        let v = self.value(a);
        let (r, c) = v.dims();
        let mut out = v.data().to_vec();
        for (start, stride, len) in lanes(r, c, axis) {
            for j in 1..len {
                out[start + j * stride] += out[start + (j - 1) * stride];
            }
        }
        Ok(self.push(Tensor::matrix(r, c, out), Op::CumSum(a, axis)))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, GraphError> {
        check_axis(axis)?;
        if parts.is_empty() {
            return Err(GraphError::Shape("concat of nothing".into()));
        }
        let dims: Vec<(usize, usize)> = parts.iter().map(|&p| self.value(p).dims()).collect();
        let value = if axis == 1 {
            let rows = dims[0].0;
            if dims.iter().any(|d| d.0 != rows) {
                return Err(GraphError::Shape(format!("concat cols {dims:?}")));
            }
            let cols: usize = dims.iter().map(|d| d.1).sum();
            let mut out = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for (&p, d) in parts.iter().zip(&dims) {
                    out.extend_from_slice(&self.value(p).data()[r * d.1..(r + 1) * d.1]);
                }
            }
            Tensor::matrix(rows, cols, out)
        } else {
            let cols = dims[0].1;
            if dims.iter().any(|d| d.1 != cols) {
                return Err(GraphError::Shape(format!("concat rows {dims:?}")));
            }
            let rows: usize = dims.iter().map(|d| d.0).sum();
            let mut out = Vec::with_capacity(rows * cols);
            for &p in parts {
                out.extend_from_slice(self.value(p).data());
            }
            Tensor::matrix(rows, cols, out)
        };
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis)))
    }

    /// Columns (`axis = 1`) or rows (`axis = 0`) `start..start + len`.
    pub fn slice(
        &mut self,
        a: Var,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<Var, GraphError> {
        check_axis(axis)?;
        let v = self.value(a);
        let (r, c) = v.dims();
        let extent = if axis == 1 { c } else { r };
        if start + len > extent || len == 0 {
            return Err(GraphError::Shape(format!(
                "slice {start}+{len} of {extent}"
            )));
        }
        let value = if axis == 1 {
            let mut out = Vec::with_capacity(r * len);
            for row in v.data().chunks(c) {
                out.extend_from_slice(&row[start..start + len]);
            }
            Tensor::matrix(r, len, out)
        } else {
            Tensor::matrix(len, c, v.data()[start * c..(start + len) * c].to_vec())
        };
        Ok(self.push(value, Op::Slice(a, axis, start)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var, GraphError> {
        check_axis(axis)?;
        let v = self.value(a);
        let (r, c) = v.dims();
        let data = v.data();
        let out: Vec<f64> = lanes(r, c, axis)
            .map(|(start, stride, len)| (0..len).map(|j| data[start + j * stride]).sum())
            .collect();
        let shape = if axis == 1 { (r, 1) } else { (1, c) };
        Ok(self.push(Tensor::matrix(shape.0, shape.1, out), Op::SumAxis(a, axis)))
    }

    /// Reinterprets the row-major data with new dimensions.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, GraphError> {
        let v = self.value(a);
        if rows * cols != v.len() {
            return Err(GraphError::Shape(format!(
                "reshape {:?} to {rows}x{cols}",
                v.dims()
            )));
        }
        let value = Tensor::matrix(rows, cols, v.data().to_vec());
        Ok(self.push(value, Op::Reshape(a)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let (r, c) = v.dims();
        let d = v.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        self.push(Tensor::matrix(c, r, out), Op::Transpose(a))
    }

    /// Picks elements by flat row-major index into a `1 × k` row.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var, GraphError> {
        let v = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= v.len()) {
            return Err(GraphError::Shape(format!(
                "gather index {bad} of {}",
                v.len()
            )));
        }
        let out: Vec<f64> = indices.iter().map(|&i| v.data()[i]).collect();
        Ok(self.push(
            Tensor::matrix(1, indices.len(), out),
            Op::Gather(a, indices.to_vec()),
        ))
    }

    /// Batched Bézier evaluation.
    ///
    /// `t` is `B × T` curve parameters, `ctrl` is `B × 2(n+1)` control points in
    /// planar layout `[x_0..x_n, y_0..y_n]`. The result is `B × 2T`, planar as
    /// `[x(t_0)..x(t_{T-1}), y(t_0)..y(t_{T-1})]`.
    pub fn bezier(&mut self, t: Var, ctrl: Var) -> Result<Var, GraphError> {
        let (b, steps) = self.value(t).dims();
        let (b2, width) = self.value(ctrl).dims();
        if b != b2 || width < 4 || width % 2 != 0 {
            return Err(GraphError::Shape(format!(
                "bezier t {b}x{steps}, ctrl {b2}x{width}"
            )));
        }
        let n1 = width / 2;
        let tv = self.value(t).data();
        let cv = self.value(ctrl).data();
        let mut out = vec![0.0; b * 2 * steps];
        let mut basis = vec![0.0; n1];
        for row in 0..b {
            let px = &cv[row * width..row * width + n1];
            let py = &cv[row * width + n1..(row + 1) * width];
            for s in 0..steps {
                bernstein_all(n1 - 1, tv[row * steps + s], &mut basis);
                let (mut x, mut y) = (0.0, 0.0);
                for i in 0..n1 {
                    x += basis[i] * px[i];
                    y += basis[i] * py[i];
                }
                out[row * 2 * steps + s] = x;
                out[row * 2 * steps + steps + s] = y;
            }
        }
        Ok(self.push(Tensor::matrix(b, 2 * steps, out), Op::Bezier(t, ctrl)))
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, GraphError> {
        if self.value(loss).len() != 1 {
            return Err(GraphError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            self.adjoint(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn adjoint(&self, i: usize, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            let slot = grads[v.0].get_or_insert_with(|| {
                let (r, c) = self.nodes[v.0].value.dims();
                Tensor::matrix(r, c, vec![0.0; r * c])
            });
            f(slot.data_mut());
        };
        let dyd = dy.data();
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims();
                let n = self.value(*b).cols();
                let bv = self.value(*b).data();
                let av = self.value(*a).data();
                acc(*a, &|g| gemm_acc(m, n, k, 1.0, dyd, false, bv, true, g));
                acc(*b, &|g| gemm_acc(k, m, n, 1.0, av, true, dyd, false, g));
            }
            Op::Add(a, b) => {
                acc(*a, &|g| zip_add(g, dyd, |d| d));
                acc(*b, &|g| zip_add(g, dyd, |d| d));
            }
            Op::Sub(a, b) => {
                acc(*a, &|g| zip_add(g, dyd, |d| d));
                acc(*b, &|g| zip_add(g, dyd, |d| -d));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &|g| {
                    for ((g, d), x) in g.iter_mut().zip(dyd).zip(bv) {
                        *g += d * x;
                    }
                });
                acc(*b, &|g| {
                    for ((g, d), x) in g.iter_mut().zip(dyd).zip(av) {
                        *g += d * x;
                    }
                });
            }
            Op::SqDiff(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let diff: Vec<f64> = av
                    .iter()
                    .zip(bv)
                    .zip(dyd)
                    .map(|((x, z), d)| 2.0 * (x - z) * d)
                    .collect();
                acc(*a, &|g| zip_add(g, &diff, |d| d));
                acc(*b, &|g| zip_add(g, &diff, |d| -d));
            }
            Op::AddBias(a, bias) => {
                acc(*a, &|g| zip_add(g, dyd, |d| d));
                let n = y.cols();
                acc(*bias, &|g| {
                    for row in dyd.chunks(n) {
                        for (g, d) in g.iter_mut().zip(row) {
                            *g += d;
                        }
                    }
                });
            }
            Op::Scale(a, f) => acc(*a, &|g| zip_add(g, dyd, |d| d * f)),
            Op::AddScalar(a) => acc(*a, &|g| zip_add(g, dyd, |d| d)),
            Op::Tanh(a) => acc(*a, &|g| {
                for ((g, d), y) in g.iter_mut().zip(dyd).zip(y.data()) {
                    *g += d * (1.0 - y * y);
                }
            }),
            Op::Sigmoid(a) => acc(*a, &|g| {
                for ((g, d), y) in g.iter_mut().zip(dyd).zip(y.data()) {
                    *g += d * y * (1.0 - y);
                }
            }),
            Op::Exp(a) => acc(*a, &|g| {
                for ((g, d), y) in g.iter_mut().zip(dyd).zip(y.data()) {
                    *g += d * y;
                }
            }),
            Op::Log(a) => {
                let x = self.value(*a).data();
                acc(*a, &|g| {
                    for ((g, d), x) in g.iter_mut().zip(dyd).zip(x) {
                        *g += d / x;
                    }
                })
            }
            Op::Square(a) => {
                let x = self.value(*a).data();
                acc(*a, &|g| {
                    for ((g, d), x) in g.iter_mut().zip(dyd).zip(x) {
                        *g += 2.0 * d * x;
                    }
                })
            }
            Op::Softmax(a, axis) => {
                let (r, c) = y.dims();
                let yd = y.data();
                acc(*a, &|g| {
                    for (start, stride, len) in lanes(r, c, *axis) {
                        let idx = |j: usize| start + j * stride;
                        let dot: f64 = (0..len).map(|j| dyd[idx(j)] * yd[idx(j)]).sum();
                        for j in 0..len {
                            g[idx(j)] += yd[idx(j)] * (dyd[idx(j)] - dot);
                        }
                    }
                })
            }
            Op::LogSoftmax(a, axis) => {
                let (r, c) = y.dims();
                let yd = y.data();
                acc(*a, &|g| {
                    for (start, stride, len) in lanes(r, c, *axis) {
                        let idx = |j: usize| start + j * stride;
                        let total: f64 = (0..len).map(|j| dyd[idx(j)]).sum();
                        for j in 0..len {
                            g[idx(j)] += dyd[idx(j)] - yd[idx(j)].exp() * total;
                        }
                    }
                })
            }
            Op::LogSumExp(a, axis) => {
                let x = self.value(*a);
                let (r, c) = x.dims();
                let xd = x.data();
                let yd = y.data();
                acc(*a, &|g| {
                    for (l, (start, stride, len)) in lanes(r, c, *axis).enumerate() {
                        for j in 0..len {
                            let k = start + j * stride;
                            g[k] += dyd[l] * (xd[k] - yd[l]).exp();
                        }
                    }
                })
            }
            Op::CumSum(a, axis) => {
                let (r, c) = y.dims();
                acc(*a, &|g| {
                    for (start, stride, len) in lanes(r, c, *axis) {
                        let mut run = 0.0;
                        for j in (0..len).rev() {
                            run += dyd[start + j * stride];
                            g[start + j * stride] += run;
                        }
                    }
                })
            }
            Op::Concat(parts, axis) => {
                let cols = y.cols();
                let mut offset = 0;
                for &p in parts {
                    let (pr, pc) = self.value(p).dims();
                    if *axis == 1 {
                        acc(p, &|g| {
                            for row in 0..pr {
                                let src = &dyd[row * cols + offset..row * cols + offset + pc];
                                zip_add(&mut g[row * pc..(row + 1) * pc], src, |d| d);
                            }
                        });
                        offset += pc;
                    } else {
                        acc(p, &|g| {
                            zip_add(g, &dyd[offset * cols..(offset + pr) * cols], |d| d)
                        });
                        offset += pr;
                    }
                }
            }
            Op::Slice(a, axis, start) => {
                let (_, c) = self.value(*a).dims();
                let (yr, yc) = y.dims();
                acc(*a, &|g| {
                    if *axis == 1 {
                        for row in 0..yr {
                            zip_add(
                                &mut g[row * c + start..row * c + start + yc],
                                &dyd[row * yc..(row + 1) * yc],
                                |d| d,
                            );
                        }
                    } else {
                        zip_add(&mut g[start * c..(start + yr) * c], dyd, |d| d);
                    }
                })
            }
            Op::Sum(a) => {
                let d = dyd[0];
                acc(*a, &|g| g.iter_mut().for_each(|g| *g += d));
            }
            Op::SumAxis(a, axis) => {
                let (r, c) = self.value(*a).dims();
                acc(*a, &|g| {
                    for (l, (start, stride, len)) in lanes(r, c, *axis).enumerate() {
                        for j in 0..len {
                            g[start + j * stride] += dyd[l];
                        }
                    }
                })
            }
            Op::Gather(a, indices) => acc(*a, &|g| {
                for (&i, d) in indices.iter().zip(dyd) {
                    g[i] += d;
                }
            }),
            Op::Reshape(a) => acc(*a, &|g| zip_add(g, dyd, |d| d)),
            Op::Transpose(a) => {
                let (r, c) = self.value(*a).dims();
                acc(*a, &|g| {
                    for i in 0..r {
                        for j in 0..c {
                            g[i * c + j] += dyd[j * r + i];
                        }
                    }
                })
            }
            Op::Bezier(t, ctrl) => {
                let (b, steps) = self.value(*t).dims();
                let width = self.value(*ctrl).cols();
                let n1 = width / 2;
                let n = n1 - 1;
                let tv = self.value(*t).data();
                let cv = self.value(*ctrl).data();
                let mut basis = vec![0.0; n1];
                let mut lower = vec![0.0; n1];
                let mut dt = vec![0.0; b * steps];
                let mut dctrl = vec![0.0; b * width];
                for row in 0..b {
                    let px = &cv[row * width..row * width + n1];
                    let py = &cv[row * width + n1..(row + 1) * width];
                    for s in 0..steps {
                        let tt = tv[row * steps + s];
                        let gx = dyd[row * 2 * steps + s];
                        let gy = dyd[row * 2 * steps + steps + s];
                        bernstein_all(n, tt, &mut basis);
                        for i in 0..n1 {
                            dctrl[row * width + i] += gx * basis[i];
                            dctrl[row * width + n1 + i] += gy * basis[i];
                        }
                        bernstein_all(n - 1, tt, &mut lower);
                        let (mut vx, mut vy) = (0.0, 0.0);
                        for i in 0..n {
                            vx += lower[i] * (px[i + 1] - px[i]);
                            vy += lower[i] * (py[i + 1] - py[i]);
                        }
                        dt[row * steps + s] = n as f64 * (gx * vx + gy * vy);
                    }
                }
                acc(*t, &|g| zip_add(g, &dt, |d| d));
                acc(*ctrl, &|g| zip_add(g, &dctrl, |d| d));
            }
        }
    }

    /// Adds the gradient of every parameter leaf into `store`.
    pub fn accumulate_into(&self, grads: &Gradients, store: &mut ParamStore) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) =
                (&node.op, grads.grads.get(i).and_then(|g| g.as_ref()))
            {
                store.grad_mut(*id).add_assign(g);
            }
        }
    }
}

fn zip_add(g: &mut [f64], src: &[f64], f: impl Fn(f64) -> f64) {
    for (g, &d) in g.iter_mut().zip(src) {
        *g += f(d);
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `log Σ exp(x)`.
pub fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}
