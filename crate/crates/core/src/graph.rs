//! Define-then-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] is an append-only list of primitive operations. Building it
//! records structure only; [`Graph::forward`] evaluates every node in
//! insertion order (which is a topological order by construction) against a
//! [`ParamStore`] and a set of named inputs, and [`Graph::backward`] pushes
//! gradients from a scalar loss into every parameter whose tensor has
//! `requires_grad` set.
//!
//! Binary elementwise ops broadcast their right operand into the shape of
//! the left one (numpy rules, right operand only).

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tensor};

/// Lower bound applied to the argument of [`Graph::log`].
pub const LOG_FLOOR: f64 = 1e-12;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input(String),
    Param(ParamId),
    Const,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Abs(Var),
    Sqrt(Var),
    Clamp(Var, f64, f64),
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    SumLastAxis(Var),
    Concat(Vec<Var>),
    Column(Var, usize),
    Element(Var, usize),
    Reshape(Var, Vec<usize>),
    GradMask(Var, Vec<bool>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param(_) => "param",
            Op::Const => "const",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Log(_) => "log",
            Op::Abs(_) => "abs",
            Op::Sqrt(_) => "sqrt",
            Op::Clamp(..) => "clamp",
            Op::Softmax(_) => "softmax",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumLastAxis(_) => "sum_last_axis",
            Op::Concat(_) => "concat",
            Op::Column(..) => "column",
            Op::Element(..) => "element",
            Op::Reshape(..) => "reshape",
            Op::GradMask(..) => "grad_mask",
        }
    }

    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Input(_) | Op::Param(_) | Op::Const => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                vec![*a, *b]
            }
            Op::Concat(parts) => parts.clone(),
            Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Log(a)
            | Op::Abs(a)
            | Op::Sqrt(a)
            | Op::Clamp(a, ..)
            | Op::Softmax(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumLastAxis(a)
            | Op::Column(a, _)
            | Op::Element(a, _)
            | Op::Reshape(a, _)
            | Op::GradMask(a, _) => vec![*a],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Option<Tensor>,
}

/// Named tensors bound to [`Graph::input`] nodes.
pub type Inputs = BTreeMap<String, Tensor>;

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    outputs: Vec<(String, Var)>,
    evaluated: bool,
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

    fn push(&mut self, op: Op) -> Var {
        self.evaluated = false;
        self.nodes.push(Node {
            op,
            value: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, name: impl Into<String>) -> Var {
        self.push(Op::Input(name.into()))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(Op::Param(id))
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        let v = self.push(Op::Const);
        let mut value = value;
        value.set_requires_grad(false);
        value.clear_grad();
        self.nodes[v.0].value = Some(value);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.push(Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.push(Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.push(Op::AddScalar(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.push(Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.push(Op::Sigmoid(a))
    }

    /// Natural log of `max(a, LOG_FLOOR)`.
    pub fn log(&mut self, a: Var) -> Var {
        self.push(Op::Log(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.push(Op::Abs(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.push(Op::Sqrt(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.push(Op::Clamp(a, lo, hi))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        self.push(Op::Softmax(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        self.push(Op::Mean(a))
    }

    /// Sums over the last axis, keeping it with size 1.
    pub fn sum_last_axis(&mut self, a: Var) -> Var {
        self.push(Op::SumLastAxis(a))
    }

    /// Concatenates along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        self.push(Op::Concat(parts.to_vec()))
    }

    /// Column `j` of a matrix, as a `[rows, 1]` matrix.
    pub fn column(&mut self, a: Var, j: usize) -> Var {
        self.push(Op::Column(a, j))
    }

    /// Flat element `i` of any tensor, as a `[1]` scalar.
    pub fn element(&mut self, a: Var, i: usize) -> Var {
        self.push(Op::Element(a, i))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        self.push(Op::Reshape(a, shape))
    }

    /// Identity in the forward pass; zeroes the gradient of every element
    /// whose mask entry is `false`.
    pub fn grad_mask(&mut self, a: Var, mask: Vec<bool>) -> Var {
        self.push(Op::GradMask(a, mask))
    }

    /// Marks `var` as a named output returned by [`Graph::forward_eval`].
    pub fn mark_output(&mut self, name: impl Into<String>, var: Var) {
        self.outputs.push((name.into(), var));
    }

    /// The value of `var` from the last forward pass.
    pub fn value(&self, var: Var) -> Result<&Tensor> {
        if !self.evaluated {
            return Err(Error::NotEvaluated);
        }
        self.nodes[var.0].value.as_ref().ok_or(Error::NotEvaluated)
    }

    /// Evaluates the graph and returns the tensors marked as outputs.
    pub fn forward_eval(
        &mut self,
        store: &ParamStore,
        inputs: &Inputs,
    ) -> Result<BTreeMap<String, Tensor>> {
        self.forward(store, inputs)?;
        let mut out = BTreeMap::new();
        for (name, var) in &self.outputs {
            out.insert(name.clone(), self.value(*var)?.clone());
        }
        Ok(out)
    }

    /// Evaluates every node in insertion order, caching values for backward.
    pub fn forward(&mut self, store: &ParamStore, inputs: &Inputs) -> Result<()> {
        self.evaluated = false;
        for i in 0..self.nodes.len() {
            if let Some(v) = self.eval_node(i, store, inputs)? {
                self.nodes[i].value = Some(v);
            }
        }
        self.evaluated = true;
        Ok(())
    }

    fn val(&self, v: Var) -> &Tensor {
        self.nodes[v.0]
            .value
            .as_ref()
            .expect("parents are evaluated before children")
    }

    fn shape_err(&self, node: usize, expected: impl Into<String>, actual: impl Into<String>) -> Error {
        Error::Shape {
            node,
            op: self.nodes[node].op.name(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    fn eval_node(
        &self,
        i: usize,
        store: &ParamStore,
        inputs: &Inputs,
    ) -> Result<Option<Tensor>> {
        let op = &self.nodes[i].op;
        let value = match op {
            Op::Const => return Ok(None),
            Op::Input(name) => {
                let t = inputs
                    .get(name)
                    .ok_or_else(|| Error::UnboundInput(name.clone()))?;
                return Ok(Some(Tensor::from_parts(t.shape().to_vec(), t.data().to_vec())));
            }
            Op::Param(id) => {
                if id.0 >= store.len() {
                    return Err(Error::OutOfRange(format!("parameter {} at node {i}", id.0)));
                }
                let t = store.get(*id);
                return Ok(Some(Tensor::from_parts(t.shape().to_vec(), t.data().to_vec())));
            }
            Op::MatMul(a, b) => {
                let (a, b) = (self.val(*a), self.val(*b));
                let (m, k) = a
                    .dims2()
                    .map_err(|_| self.shape_err(i, "matrix lhs", format!("{:?}", a.shape())))?;
                let (k2, n) = b
                    .dims2()
                    .map_err(|_| self.shape_err(i, "matrix rhs", format!("{:?}", b.shape())))?;
                if k != k2 {
                    return Err(self.shape_err(
                        i,
                        format!("rhs with {k} rows"),
                        format!("{:?} · {:?}", a.shape(), b.shape()),
                    ));
                }
                let mut out = vec![0.0; m * n];
                gemm(m, k, n, a.data(), (k, 1), b.data(), (n, 1), &mut out);
                Tensor::from_parts(vec![m, n], out)
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                let (a, b) = (self.val(*a), self.val(*b));
                let map = Broadcast::new(a.shape(), b.shape()).ok_or_else(|| {
                    self.shape_err(
                        i,
                        format!("rhs broadcastable to {:?}", a.shape()),
                        format!("{:?}", b.shape()),
                    )
                })?;
                let bd = b.data();
                let f: fn(f64, f64) -> f64 = match op {
                    Op::Add(..) => |x, y| x + y,
                    Op::Sub(..) => |x, y| x - y,
                    Op::Mul(..) => |x, y| x * y,
                    _ => |x, y| x / y,
                };
                if matches!(op, Op::Div(..)) && bd.contains(&0.0) {
                    return Err(Error::DivisionByZero(i));
                }
                let out = a
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(j, &x)| f(x, bd[map.index(j)]))
                    .collect();
                Tensor::from_parts(a.shape().to_vec(), out)
            }
            Op::Scale(a, c) => map_unary(self.val(*a), |x| x * c),
            Op::AddScalar(a, c) => map_unary(self.val(*a), |x| x + c),
            Op::Relu(a) => map_unary(self.val(*a), |x| if x > 0.0 { x } else { 0.0 }),
            Op::Sigmoid(a) => map_unary(self.val(*a), logistic),
            Op::Log(a) => map_unary(self.val(*a), |x| x.max(LOG_FLOOR).ln()),
            Op::Abs(a) => map_unary(self.val(*a), f64::abs),
            Op::Sqrt(a) => {
                let a = self.val(*a);
                if a.data().iter().any(|&x| x < 0.0) {
                    return Err(Error::NonFinite(format!("sqrt of a negative value at node {i}")));
                }
                map_unary(a, f64::sqrt)
            }
            Op::Clamp(a, lo, hi) => map_unary(self.val(*a), |x| x.clamp(*lo, *hi)),
            Op::Softmax(a) => {
                let a = self.val(*a);
                let cols = *a.shape().last().unwrap();
                let mut out = a.data().to_vec();
                for row in out.chunks_mut(cols) {
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for x in row.iter_mut() {
                        *x = (*x - max).exp();
                        z += *x;
                    }
                    row.iter_mut().for_each(|x| *x /= z);
                }
                Tensor::from_parts(a.shape().to_vec(), out)
            }
            Op::Sum(a) => Tensor::scalar(self.val(*a).data().iter().sum()),
            Op::Mean(a) => {
                let a = self.val(*a);
                Tensor::scalar(a.data().iter().sum::<f64>() / a.len() as f64)
            }
            Op::SumLastAxis(a) => {
                let a = self.val(*a);
                let cols = *a.shape().last().unwrap();
                let out = a.data().chunks(cols).map(|r| r.iter().sum()).collect();
                let mut shape = a.shape().to_vec();
                *shape.last_mut().unwrap() = 1;
                Tensor::from_parts(shape, out)
            }
            Op::Concat(parts) => {
                if parts.is_empty() {
                    return Err(self.shape_err(i, "at least one part", "none"));
                }
                let first = self.val(parts[0]).shape();
                let lead = &first[..first.len() - 1];
                let mut widths = Vec::with_capacity(parts.len());
                for p in parts {
                    let s = self.val(*p).shape();
                    if s.len() != first.len() || &s[..s.len() - 1] != lead {
                        return Err(self.shape_err(
                            i,
                            format!("leading dims {lead:?}"),
                            format!("{s:?}"),
                        ));
                    }
                    widths.push(*s.last().unwrap());
                }
                let total: usize = widths.iter().sum();
                let rows: usize = lead.iter().product();
                let mut out = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for (p, w) in parts.iter().zip(&widths) {
                        out.extend_from_slice(&self.val(*p).data()[r * w..(r + 1) * w]);
                    }
                }
                let mut shape = lead.to_vec();
                shape.push(total);
                Tensor::from_parts(shape, out)
            }
            Op::Column(a, j) => {
                let a = self.val(*a);
                let (rows, cols) = a
                    .dims2()
                    .map_err(|_| self.shape_err(i, "matrix", format!("{:?}", a.shape())))?;
                if *j >= cols {
                    return Err(self.shape_err(i, format!("more than {j} columns"), format!("{cols}")));
                }
                let out = (0..rows).map(|r| a.data()[r * cols + j]).collect();
                Tensor::from_parts(vec![rows, 1], out)
            }
            Op::Element(a, j) => {
                let a = self.val(*a);
                if *j >= a.len() {
                    return Err(self.shape_err(i, format!("more than {j} elements"), format!("{}", a.len())));
                }
                Tensor::scalar(a.data()[*j])
            }
            Op::Reshape(a, shape) => {
                let a = self.val(*a);
                let numel: usize = shape.iter().product();
                if numel != a.len() || shape.contains(&0) {
                    return Err(self.shape_err(i, format!("{} elements", a.len()), format!("{shape:?}")));
                }
                Tensor::from_parts(shape.clone(), a.data().to_vec())
            }
            Op::GradMask(a, mask) => {
                let a = self.val(*a);
                if mask.len() != a.len() {
                    return Err(self.shape_err(i, format!("mask of {}", a.len()), format!("{}", mask.len())));
                }
                Tensor::from_parts(a.shape().to_vec(), a.data().to_vec())
            }
        };
        Ok(Some(value))
    }

    /// Accumulates d(loss)/d(param) into every parameter of `store` that has
    /// `requires_grad` set. Parameters the loss does not reach receive a zero
    /// gradient.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if !self.evaluated {
            return Err(Error::NotEvaluated);
        }
        let lv = self.val(loss);
        if lv.len() != 1 {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        for id in store.ids().collect::<Vec<_>>() {
            if store.get(id).requires_grad() {
                store.get_mut(id).ensure_grad();
            }
        }
        // which nodes lead back to a parameter that currently wants a gradient
        let mut needs = vec![false; loss.0 + 1];
        for i in 0..=loss.0 {
            needs[i] = match &self.nodes[i].op {
                Op::Param(id) => store.get(*id).requires_grad(),
                op => op.parents().iter().any(|p| needs[p.0]),
            };
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(grad) = grads[i].take() else { continue };
            if !needs[i] {
                continue;
            }
            self.backprop_node(i, &grad, &needs, &mut grads, store);
        }
        Ok(())
    }

    fn backprop_node(
        &self,
        i: usize,
        grad: &[f64],
        needs: &[bool],
        grads: &mut [Option<Vec<f64>>],
        store: &mut ParamStore,
    ) {
        let node = &self.nodes[i];
        let out = node.value.as_ref().unwrap();
        let wants = |v: &Var| needs[v.0];
        macro_rules! parent_grad {
            ($v:expr) => {{
                let v: Var = $v;
                let n = self.val(v).len();
                grads[v.0].get_or_insert_with(|| vec![0.0; n])
            }};
        }
        match &node.op {
            Op::Input(_) | Op::Const => {}
            Op::Param(id) => store.get_mut(*id).accumulate_grad(grad),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (m, k) = av.dims2().unwrap();
                let n = bv.shape()[1];
                if wants(a) {
                    // dA = dC · Bᵀ
                    let ga = parent_grad!(*a);
                    gemm(m, n, k, grad, (n, 1), bv.data(), (1, n), ga);
                }
                if wants(b) {
                    // dB = Aᵀ · dC
                    let gb = parent_grad!(*b);
                    gemm(k, m, n, av.data(), (1, k), grad, (n, 1), gb);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let map = Broadcast::new(av.shape(), bv.shape()).unwrap();
                if wants(a) {
                    let ga = parent_grad!(*a);
                    match &node.op {
                        Op::Add(..) | Op::Sub(..) => {
                            ga.iter_mut().zip(grad).for_each(|(g, d)| *g += d)
                        }
                        Op::Mul(..) => {
                            for (j, g) in ga.iter_mut().enumerate() {
                                *g += grad[j] * bv.data()[map.index(j)];
                            }
                        }
                        _ => {
                            for (j, g) in ga.iter_mut().enumerate() {
                                *g += grad[j] / bv.data()[map.index(j)];
                            }
                        }
                    }
                }
                if wants(b) {
                    let gb = parent_grad!(*b);
                    for (j, d) in grad.iter().enumerate() {
                        let bj = map.index(j);
                        gb[bj] += match &node.op {
                            Op::Add(..) => *d,
                            Op::Sub(..) => -d,
                            Op::Mul(..) => d * av.data()[j],
                            _ => -d * out.data()[j] / bv.data()[bj],
                        };
                    }
                }
            }
            Op::Scale(a, c) => {
                if wants(a) {
                    let ga = parent_grad!(*a);
                    ga.iter_mut().zip(grad).for_each(|(g, d)| *g += d * c);
                }
            }
            Op::AddScalar(a, _) | Op::Reshape(a, _) => {
                if wants(a) {
                    let ga = parent_grad!(*a);
                    ga.iter_mut().zip(grad).for_each(|(g, d)| *g += d);
                }
            }
            Op::GradMask(a, mask) => {
                if wants(a) {
                    let ga = parent_grad!(*a);
                    for ((g, d), keep) in ga.iter_mut().zip(grad).zip(mask) {
                        if *keep {
                            *g += d;
                        }
                    }
                }
            }
            Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Log(a)
            | Op::Abs(a)
            | Op::Sqrt(a)
            | Op::Clamp(a, ..) => {
                if wants(a) {
                    let x = self.val(*a).data();
                    let y = out.data();
                    let ga = parent_grad!(*a);
                    let local: &dyn Fn(usize) -> f64 = match &node.op {
                        Op::Relu(_) => &|j| if x[j] > 0.0 { 1.0 } else { 0.0 },
                        Op::Sigmoid(_) => &|j| y[j] * (1.0 - y[j]),
                        Op::Log(_) => &|j| if x[j] >= LOG_FLOOR { 1.0 / x[j] } else { 0.0 },
                        Op::Abs(_) => &|j| {
                            if x[j] > 0.0 {
                                1.0
                            } else if x[j] < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        },
                        Op::Sqrt(_) => &|j| if y[j] > 0.0 { 0.5 / y[j] } else { 0.0 },
                        Op::Clamp(_, lo, hi) => {
                            let (lo, hi) = (*lo, *hi);
                            &move |j| if x[j] >= lo && x[j] <= hi { 1.0 } else { 0.0 }
                        }
                        _ => unreachable!(),
                    };
                    for (j, g) in ga.iter_mut().enumerate() {
                        *g += grad[j] * local(j);
                    }
                }
            }
            Op::Softmax(a) => {
                if wants(a) {
                    let cols = *out.shape().last().unwrap();
                    let ga = parent_grad!(*a);
                    for ((y, d), g) in out
                        .data()
                        .chunks(cols)
                        .zip(grad.chunks(cols))
                        .zip(ga.chunks_mut(cols))
                    {
                        let dot: f64 = y.iter().zip(d).map(|(y, d)| y * d).sum();
                        for j in 0..cols {
                            g[j] += y[j] * (d[j] - dot);
                        }
                    }
                }
            }
            Op::Sum(a) | Op::Mean(a) => {
                if wants(a) {
                    let n = self.val(*a).len();
                    let d = match node.op {
                        Op::Mean(_) => grad[0] / n as f64,
                        _ => grad[0],
                    };
                    let ga = parent_grad!(*a);
                    ga.iter_mut().for_each(|g| *g += d);
                }
            }
            Op::SumLastAxis(a) => {
                if wants(a) {
                    let cols = *self.val(*a).shape().last().unwrap();
                    let ga = parent_grad!(*a);
                    for (row, d) in ga.chunks_mut(cols).zip(grad) {
                        row.iter_mut().for_each(|g| *g += d);
                    }
                }
            }
            Op::Concat(parts) => {
                let total = *out.shape().last().unwrap();
                let rows = out.len() / total;
                let mut offset = 0;
                for p in parts {
                    let w = *self.val(*p).shape().last().unwrap();
                    if wants(p) {
                        let gp = parent_grad!(*p);
                        for r in 0..rows {
                            for c in 0..w {
                                gp[r * w + c] += grad[r * total + offset + c];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::Column(a, j) => {
                if wants(a) {
                    let cols = self.val(*a).shape()[1];
                    let ga = parent_grad!(*a);
                    for (r, d) in grad.iter().enumerate() {
                        ga[r * cols + j] += d;
                    }
                }
            }
            Op::Element(a, j) => {
                if wants(a) {
                    let ga = parent_grad!(*a);
                    ga[*j] += grad[0];
                }
            }
        }
    }
}

/// Numerically stable logistic function.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn map_unary(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect())
}

/// `c += a · b` for row-major-addressable `a` (m×k) and `b` (k×n), each given
/// with explicit (row, column) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: bounds asserted above; strides address within the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Maps flat indices of the left operand to flat indices of a broadcast
/// right operand.
enum Broadcast {
    Same,
    Scalar,
    /// Right operand repeats every `period` elements (trailing-dims match).
    Cyclic(usize),
    /// Right operand is constant along the trailing `run` elements.
    Runs(usize),
    General(Vec<usize>),
}

impl Broadcast {
    fn new(lhs: &[usize], rhs: &[usize]) -> Option<Self> {
        if lhs == rhs {
            return Some(Broadcast::Same);
        }
        let rn: usize = rhs.iter().product();
        if rn == 1 {
            return Some(Broadcast::Scalar);
        }
        if rhs.len() > lhs.len() {
            return None;
        }
        let mut padded = vec![1; lhs.len() - rhs.len()];
        padded.extend_from_slice(rhs);
        if padded.iter().zip(lhs).any(|(r, l)| r != l && *r != 1) {
            return None;
        }
        // Leading broadcast dims followed by exact trailing dims.
        let first_match = padded.iter().zip(lhs).position(|(r, l)| r == l && *r != 1);
        if let Some(f) = first_match {
            if padded[..f].iter().all(|&d| d == 1) && padded[f..] == lhs[f..] {
                return Some(Broadcast::Cyclic(rn));
            }
        }
        // Exact leading dims followed by broadcast trailing dims.
        let last_match = padded.iter().rposition(|&r| r != 1);
        if let Some(l) = last_match {
            if padded[..=l] == lhs[..=l] {
                return Some(Broadcast::Runs(lhs[l + 1..].iter().product()));
            }
        }
        let ln: usize = lhs.iter().product();
        let mut rstrides = vec![0; lhs.len()];
        let mut acc = 1;
        for d in (0..lhs.len()).rev() {
            rstrides[d] = if padded[d] == 1 { 0 } else { acc };
            acc *= padded[d];
        }
        let map = (0..ln)
            .map(|mut flat| {
                let mut idx = 0;
                for d in (0..lhs.len()).rev() {
                    idx += (flat % lhs[d]) * rstrides[d];
                    flat /= lhs[d];
                }
                idx
            })
            .collect();
        Some(Broadcast::General(map))
    }

    #[inline]
    fn index(&self, j: usize) -> usize {
        match self {
            Broadcast::Same => j,
            Broadcast::Scalar => 0,
            Broadcast::Cyclic(p) => j % p,
            Broadcast::Runs(r) => j / r,
            Broadcast::General(map) => map[j],
        }
    }
}

/// Compares analytic gradients from [`Graph::backward`] against central
/// finite differences for every coordinate of `params`.
///
/// Returns the maximum over coordinates of
/// `|analytic − numeric| / max(1, |analytic|)`. Parameter values are
/// restored on return; their gradients are cleared.
pub fn finite_diff_check(
    graph: &mut Graph,
    store: &mut ParamStore,
    inputs: &Inputs,
    loss: Var,
    params: &[ParamId],
    h: f64,
) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::InvalidArgument(format!("step {h} outside [1e-7, 1e-3]")));
    }
    let saved_flags: Vec<bool> = store.ids().map(|id| store.get(id).requires_grad()).collect();
    store.clear_grads();
    for id in store.ids().collect::<Vec<_>>() {
        store.get_mut(id).set_requires_grad(params.contains(&id));
    }
    let result = (|| {
        let base = eval_loss(graph, store, inputs, loss)?;
        if !base.is_finite() {
            return Err(Error::NonFinite(format!("loss {base} at probe point")));
        }
        graph.backward(loss, store)?;
        let mut worst: f64 = 0.0;
        for &id in params {
            let analytic = store.get_mut(id).take_grad().unwrap_or_default();
            for (j, a) in analytic.iter().enumerate() {
                let orig = store.get(id).data()[j];
                store.get_mut(id).data_mut()[j] = orig + h;
                let up = eval_loss(graph, store, inputs, loss);
                store.get_mut(id).data_mut()[j] = orig - h;
                let down = eval_loss(graph, store, inputs, loss);
                store.get_mut(id).data_mut()[j] = orig;
                let (up, down) = (up?, down?);
                if !up.is_finite() || !down.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss at probe of `{}`[{j}]",
                        store.name(id)
                    )));
                }
                let numeric = (up - down) / (2.0 * h);
                worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
            }
        }
        Ok(worst)
    })();
    store.clear_grads();
    for (id, flag) in store.ids().collect::<Vec<_>>().into_iter().zip(saved_flags) {
        store.get_mut(id).set_requires_grad(flag);
    }
    result
}

fn eval_loss(graph: &mut Graph, store: &ParamStore, inputs: &Inputs, loss: Var) -> Result<f64> {
    graph.forward(store, inputs)?;
    graph.value(loss)?.item()
}
