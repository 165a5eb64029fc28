use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use super::kernels::{self, sigmoid, softplus};
use super::{check_finite, Param, ParamId, Tensor};
use crate::error::{Error, Result};

/// Elementwise nonlinearities with registered gradient rules.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Relu,
    Tanh,
    Softplus,
    Sigmoid,
    Exp,
    Log,
    Square,
    Neg,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Relu => "relu",
            Unary::Tanh => "tanh",
            Unary::Softplus => "softplus",
            Unary::Sigmoid => "sigmoid",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Square => "square",
            Unary::Neg => "neg",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Relu => kernels::relu(x),
            Unary::Tanh => x.tanh(),
            Unary::Softplus => softplus(x),
            Unary::Sigmoid => sigmoid(x),
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Square => x * x,
            Unary::Neg => -x,
        }
    }

    /// Local derivative from the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Tanh => 1.0 - y * y,
            Unary::Softplus => sigmoid(x),
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Square => 2.0 * x,
            Unary::Neg => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    None,
    Lhs,
    Rhs,
}

#[derive(Debug)]
enum Op {
    Constant,
    Leaf,
    Param(ParamId),
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Add(usize, usize, Bcast),
    Sub(usize, usize, Bcast),
    Mul(usize, usize, Bcast),
    AddRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Unary(usize, Unary),
    Clamp(usize, f64, f64),
    SumAll(usize),
    SumAxis(usize, usize),
    Reshape(usize),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    tracked: bool,
}

/// Records one forward pass. Build a fresh tape per pass and drop it after
/// [`Tape::backward`].
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    frozen: RefCell<Vec<ParamId>>,
}

/// A value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, tracked: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, tracked });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn tracked(&self, id: usize) -> bool {
        self.nodes.borrow()[id].tracked
    }

    /// An untracked input; no gradient flows to it.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Constant, false)
    }

    /// A tracked input whose gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a parameter. Binding the same parameter twice sums its gradients.
    /// Inside [`Tape::frozen`] the listed parameters bind as constants.
    pub fn param(&self, p: &Param) -> Var<'_> {
        if self.frozen.borrow().contains(&p.id()) {
            return self.constant(p.value().clone());
        }
        self.push(p.value().clone(), Op::Param(p.id()), true)
    }

    /// Runs `f` with the given parameters bound as constants, so no gradient
    /// reaches them from anything recorded inside.
    pub fn frozen<R>(&self, ids: impl IntoIterator<Item = ParamId>, f: impl FnOnce() -> R) -> R {
        let before = self.frozen.borrow().len();
        self.frozen.borrow_mut().extend(ids);
        let out = f();
        self.frozen.borrow_mut().truncate(before);
        out
    }

    /// Reverse accumulation from a scalar root.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[root.id].value.len() != 1 {
            return Err(Error::contract(
                "backward",
                format!("root must be a scalar, got shape {:?}", nodes[root.id].value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.id + 1];
        grads[root.id] = Some(Tensor::ones(nodes[root.id].value.shape()));
        let mut out = Gradients { leaves: HashMap::new(), params: HashMap::new() };

        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.tracked {
                continue;
            }
            let mut send = |to: usize, delta: Tensor| {
                if !nodes[to].tracked {
                    return;
                }
                match &mut grads[to] {
                    Some(acc) => acc.data_mut().iter_mut().zip(delta.data()).for_each(|(a, d)| *a += d),
                    slot @ None => *slot = Some(delta),
                }
            };
            let val = |i: usize| -> &Tensor { &nodes[i].value };
            match node.op {
                Op::Constant => {}
                Op::Leaf => {
                    out.leaves.insert(id, g);
                }
                Op::Param(pid) => match out.params.get_mut(&pid) {
                    Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, d)| *a += d),
                    None => {
                        out.params.insert(pid, g);
                    }
                },
                Op::MatMul(a, b) => {
                    if nodes[a].tracked {
                        send(a, kernels::matmul_nt(&g, val(b))?);
                    }
                    if nodes[b].tracked {
                        send(b, kernels::matmul_tn(val(a), &g)?);
                    }
                }
                Op::MatMulT(a, b) => {
                    // c = a · bᵀ
                    if nodes[a].tracked {
                        send(a, kernels::matmul(&g, val(b))?);
                    }
                    if nodes[b].tracked {
                        send(b, kernels::matmul_tn(&g, val(a))?);
                    }
                }
                Op::Add(a, b, bc) => {
                    send(a, reduce_bcast(&g, bc == Bcast::Lhs, 1.0));
                    send(b, reduce_bcast(&g, bc == Bcast::Rhs, 1.0));
                }
                Op::Sub(a, b, bc) => {
                    send(a, reduce_bcast(&g, bc == Bcast::Lhs, 1.0));
                    send(b, reduce_bcast(&g, bc == Bcast::Rhs, -1.0));
                }
                Op::Mul(a, b, bc) => {
                    let (va, vb) = (val(a), val(b));
                    if nodes[a].tracked {
                        let d = mul_bcast(&g, vb, bc == Bcast::Rhs);
                        send(a, reduce_bcast(&d, bc == Bcast::Lhs, 1.0));
                    }
                    if nodes[b].tracked {
                        let d = mul_bcast(&g, va, bc == Bcast::Lhs);
                        send(b, reduce_bcast(&d, bc == Bcast::Rhs, 1.0));
                    }
                }
                Op::AddRow(x, r) => {
                    if nodes[r].tracked {
                        send(r, kernels::sum_axis(&g, 0)?);
                    }
                    send(x, g);
                }
                Op::Scale(x, c) => {
                    let d: Vec<f64> = g.data().iter().map(|v| v * c).collect();
                    send(x, Tensor::from_parts(g.shape().to_vec(), d));
                }
                Op::AddScalar(x) => send(x, g),
                Op::Unary(x, f) => {
                    let (vx, vy) = (val(x), &node.value);
                    let d: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(vx.data().iter().zip(vy.data()))
                        .map(|(gi, (&xi, &yi))| gi * f.derivative(xi, yi))
                        .collect();
                    send(x, Tensor::from_parts(g.shape().to_vec(), d));
                }
                Op::Clamp(x, lo, hi) => {
                    let d: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(val(x).data())
                        .map(|(gi, &xi)| if xi >= lo && xi <= hi { *gi } else { 0.0 })
                        .collect();
                    send(x, Tensor::from_parts(g.shape().to_vec(), d));
                }
                Op::SumAll(x) => {
                    let gv = g.data()[0];
                    send(x, Tensor::full(val(x).shape(), gv));
                }
                Op::SumAxis(x, axis) => {
                    send(x, kernels::broadcast_axis(&g, val(x).shape(), axis, 1.0));
                }
                Op::Reshape(x) => {
                    send(x, Tensor::from_parts(val(x).shape().to_vec(), g.into_data()));
                }
            }
        }
        Ok(out)
    }
}

fn reduce_bcast(g: &Tensor, was_broadcast: bool, sign: f64) -> Tensor {
    if was_broadcast {
        Tensor::scalar(sign * g.sum())
    } else if sign == 1.0 {
        g.clone()
    } else {
        Tensor::from_parts(g.shape().to_vec(), g.data().iter().map(|v| sign * v).collect())
    }
}

fn mul_bcast(g: &Tensor, other: &Tensor, other_is_scalar: bool) -> Tensor {
    let d = if other_is_scalar {
        let s = other.data()[0];
        g.data().iter().map(|v| v * s).collect()
    } else {
        g.data().iter().zip(other.data()).map(|(a, b)| a * b).collect()
    };
    Tensor::from_parts(g.shape().to_vec(), d)
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients {
    leaves: HashMap<usize, Tensor>,
    params: HashMap<ParamId, Tensor>,
}

impl Gradients {
    /// Gradient of the root w.r.t. a leaf created by [`Tape::leaf`].
    pub fn wrt(&self, v: Var<'_>) -> Option<&Tensor> {
        self.leaves.get(&v.id)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    /// Adds this pass's gradient into `p.grad`; parameters the root did not
    /// reach are left untouched.
    pub fn accumulate_into(&self, p: &mut Param) -> Result<()> {
        match self.params.get(&p.id()) {
            Some(g) => p.accumulate_grad(g),
            None => Ok(()),
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Scalar value of a one-element var.
    pub fn item(&self) -> Result<f64> {
        self.value().item()
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t> {
        let v = (*self.value()).clone();
        self.tape.constant(v)
    }

    fn same_tape(&self, other: &Var<'_>, op: &'static str) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::contract(op, "operands recorded on different tapes"))
        }
    }

    fn emit(&self, op_name: &'static str, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var<'t>> {
        check_finite(op_name, value.data())?;
        let tracked = inputs.iter().any(|&i| self.tape.tracked(i));
        Ok(self.tape.push(value, op, tracked))
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other, "matmul")?;
        let v = kernels::matmul(&self.value(), &other.value())?;
        self.emit("matmul", v, Op::MatMul(self.id, other.id), &[self.id, other.id])
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other, "matmul_t")?;
        let v = kernels::matmul_nt(&self.value(), &other.value())?;
        self.emit("matmul_t", v, Op::MatMulT(self.id, other.id), &[self.id, other.id])
    }

    fn binary(
        &self,
        other: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        mk: impl Fn(usize, usize, Bcast) -> Op,
    ) -> Result<Var<'t>> {
        self.same_tape(&other, name)?;
        let (a, b) = (self.value(), other.value());
        let (bc, shape) = if a.shape() == b.shape() {
            (Bcast::None, a.shape().to_vec())
        } else if b.len() == 1 {
            (Bcast::Rhs, a.shape().to_vec())
        } else if a.len() == 1 {
            (Bcast::Lhs, b.shape().to_vec())
        } else {
            return Err(Error::shape(
                name,
                format!("{:?} vs {:?}: only scalar broadcasting is supported", a.shape(), b.shape()),
            ));
        };
        let data: Vec<f64> = match bc {
            Bcast::None => a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect(),
            Bcast::Rhs => a.data().iter().map(|x| f(*x, b.data()[0])).collect(),
            Bcast::Lhs => b.data().iter().map(|y| f(a.data()[0], *y)).collect(),
        };
        self.emit(name, Tensor::from_parts(shape, data), mk(self.id, other.id, bc), &[self.id, other.id])
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", |x, y| x * y, Op::Mul)
    }

    /// Adds a length-`n` row vector to every row of an `m×n` matrix.
    pub fn add_row(&self, row: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&row, "add_row")?;
        let (x, r) = (self.value(), row.value());
        let n = r.len();
        if x.rank() != 2 || x.shape()[1] != n || r.rank() != 1 {
            return Err(Error::shape("add_row", format!("{:?} + row {:?}", x.shape(), r.shape())));
        }
        let data: Vec<f64> =
            x.data().iter().enumerate().map(|(i, v)| v + r.data()[i % n]).collect();
        self.emit("add_row", Tensor::from_parts(x.shape().to_vec(), data), Op::AddRow(self.id, row.id), &[
            self.id, row.id,
        ])
    }

    pub fn scale(&self, c: f64) -> Result<Var<'t>> {
        let x = self.value();
        let data = x.data().iter().map(|v| v * c).collect();
        self.emit("scale", Tensor::from_parts(x.shape().to_vec(), data), Op::Scale(self.id, c), &[self.id])
    }

    pub fn add_scalar(&self, c: f64) -> Result<Var<'t>> {
        let x = self.value();
        let data = x.data().iter().map(|v| v + c).collect();
        self.emit("add_scalar", Tensor::from_parts(x.shape().to_vec(), data), Op::AddScalar(self.id), &[self.id])
    }

    pub fn unary(&self, f: Unary) -> Result<Var<'t>> {
        let x = self.value();
        if f == Unary::Log {
            if let Some(bad) = x.data().iter().find(|v| **v <= 0.0) {
                return Err(Error::domain("log", format!("non-positive input {}", bad)));
            }
        }
        let data = x.data().iter().map(|v| f.apply(*v)).collect();
        self.emit(f.name(), Tensor::from_parts(x.shape().to_vec(), data), Op::Unary(self.id, f), &[self.id])
    }

    pub fn relu(&self) -> Result<Var<'t>> {
        self.unary(Unary::Relu)
    }

    pub fn tanh(&self) -> Result<Var<'t>> {
        self.unary(Unary::Tanh)
    }

    pub fn softplus(&self) -> Result<Var<'t>> {
        self.unary(Unary::Softplus)
    }

    pub fn sigmoid(&self) -> Result<Var<'t>> {
        self.unary(Unary::Sigmoid)
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        self.unary(Unary::Exp)
    }

    pub fn log(&self) -> Result<Var<'t>> {
        self.unary(Unary::Log)
    }

    pub fn square(&self) -> Result<Var<'t>> {
        self.unary(Unary::Square)
    }

    pub fn neg(&self) -> Result<Var<'t>> {
        self.unary(Unary::Neg)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Var<'t>> {
        let x = self.value();
        let data = x.data().iter().map(|v| v.clamp(lo, hi)).collect();
        self.emit("clamp", Tensor::from_parts(x.shape().to_vec(), data), Op::Clamp(self.id, lo, hi), &[self.id])
    }

    pub fn sum(&self) -> Result<Var<'t>> {
        let s = self.value().sum();
        self.emit("sum", Tensor::scalar(s), Op::SumAll(self.id), &[self.id])
    }

    pub fn mean(&self) -> Result<Var<'t>> {
        let n = self.value().len();
        if n == 0 {
            return Err(Error::domain("mean", "mean of empty tensor"));
        }
        self.sum()?.scale(1.0 / n as f64)
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t>> {
        let v = kernels::sum_axis(&self.value(), axis)?;
        self.emit("sum", v, Op::SumAxis(self.id, axis), &[self.id])
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Var<'t>> {
        let shape = self.shape();
        let (_, len, _) = kernels::axis_split("mean", &shape, axis)?;
        if len == 0 {
            return Err(Error::domain("mean", "mean over an empty axis"));
        }
        self.sum_axis(axis)?.scale(1.0 / len as f64)
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Var<'t>> {
        let v = self.value().reshape(shape)?;
        self.emit("reshape", v, Op::Reshape(self.id), &[self.id])
    }
}
