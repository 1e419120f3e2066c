//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node to the [`Tape`]; [`Var`] is a cheap copyable
//! handle into it. Calling [`Var::backward`] on a scalar walks the tape in
//! reverse insertion order (a valid reverse topological order, since a node
//! can only reference earlier nodes) and accumulates gradients into every node
//! that requires them. Gradients accumulate across calls until
//! [`Tape::zero_grad`].
//!
//! Shape errors inside the graph are programming errors and panic. Non-finite
//! results do not panic: the tape remembers the first offending op and
//! [`Tape::check_finite`] / [`Var::backward`] report it.

use std::cell::RefCell;
use std::fmt;

use super::tensor::{matmul_nt_raw, matmul_raw, matmul_tn_raw, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    ScaleBy(usize, usize),
    MatMul(usize, usize),
    MatMulNT(usize, usize),
    Relu(usize),
    Tanh(usize),
    Sum(usize),
    SumRows(usize),
    NormalizeRows(usize),
    SoftmaxRows(usize),
    CrossEntropyRows(usize, Vec<usize>),
    Reshape(usize),
    GatherRows(usize, Vec<usize>),
    ConcatRows(Vec<usize>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::ScaleBy(..) => "scale_by",
            Op::MatMul(..) => "matmul",
            Op::MatMulNT(..) => "matmul_nt",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Sum(..) => "sum",
            Op::SumRows(..) => "sum_rows",
            Op::NormalizeRows(..) => "normalize_rows",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::CrossEntropyRows(..) => "cross_entropy_rows",
            Op::Reshape(..) => "reshape",
            Op::GatherRows(..) => "gather_rows",
            Op::ConcatRows(..) => "concat_rows",
        }
    }
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    first_non_finite: RefCell<Option<String>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.len())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that accumulates gradient.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn zero_grad(&self) {
        for n in self.nodes.borrow_mut().iter_mut() {
            n.grad = None;
        }
    }

    /// Errors if any forward op produced NaN or an infinity.
    pub fn check_finite(&self) -> Result<()> {
        match &*self.first_non_finite.borrow() {
            Some(op) => Err(Error::NonFinite(op.clone())),
            None => Ok(()),
        }
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        if !value.is_finite() {
            let mut slot = self.first_non_finite.borrow_mut();
            if slot.is_none() {
                *slot = Some(op.name().to_string());
            }
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn with_value<R>(&self, id: usize, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }

    fn unary(&self, a: usize, op: Op, f: impl FnOnce(&Tensor) -> Tensor) -> Var<'_> {
        let value = self.with_value(a, f);
        let rg = self.needs(&[a]);
        self.push(value, op, rg)
    }

    fn binary(
        &self,
        a: usize,
        b: usize,
        op: Op,
        f: impl FnOnce(&Tensor, &Tensor) -> Tensor,
    ) -> Var<'_> {
        let value = {
            let nodes = self.nodes.borrow();
            f(&nodes[a].value, &nodes[b].value)
        };
        let rg = self.needs(&[a, b]);
        self.push(value, op, rg)
    }

    fn backward_from(&self, root: usize) -> Result<()> {
        self.check_finite()?;
        let mut nodes = self.nodes.borrow_mut();
        if nodes[root].value.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[root].value.shape()
            )));
        }
        if !nodes[root].requires_grad {
            return Ok(());
        }
        // Seed locally so repeated calls accumulate into leaves without
        // double-counting interior nodes.
        let mut local: Vec<Option<Tensor>> = vec![None; root + 1];
        local[root] = Some(Tensor::full(nodes[root].value.shape(), 1.0));
        for id in (0..=root).rev() {
            let Some(g) = local[id].take() else { continue };
            let contributions = node_vjp(&nodes, id, &g);
            for (pid, pg) in contributions {
                if !nodes[pid].requires_grad {
                    continue;
                }
                match &mut local[pid] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
            let node = &mut nodes[id];
            match &mut node.grad {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch");
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::new(a.shape(), data).expect("shape preserved")
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(a.shape(), a.data().iter().map(|x| f(*x)).collect()).expect("shape preserved")
}

fn with_shape(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape, data).expect("shape preserved")
}

fn softmax_rows_raw(x: &Tensor) -> Tensor {
    let (r, c) = x.dims2();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let row = x.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.into_iter().map(|v| v / s));
    }
    with_shape(x.shape(), out)
}

/// Vector-Jacobian products of node `id` with upstream gradient `g`.
fn node_vjp(nodes: &[Node], id: usize, g: &Tensor) -> Vec<(usize, Tensor)> {
    let val = |i: usize| &nodes[i].value;
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf => vec![],
        Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
        Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scaled(-1.0))],
        Op::Mul(a, b) => vec![
            (*a, zip_map(g, val(*b), |x, y| x * y)),
            (*b, zip_map(g, val(*a), |x, y| x * y)),
        ],
        Op::AddRow(m, v) => {
            let (r, c) = g.dims2();
            let mut dv = vec![0.0; c];
            for i in 0..r {
                for (d, x) in dv.iter_mut().zip(g.row(i)) {
                    *d += x;
                }
            }
            vec![(*m, g.clone()), (*v, with_shape(val(*v).shape(), dv))]
        }
        Op::Scale(a, s) => vec![(*a, g.scaled(*s))],
        Op::AddScalar(a) => vec![(*a, g.clone())],
        Op::ScaleBy(t, s) => {
            let sv = val(*s).data()[0];
            let ds: f64 = g.data().iter().zip(val(*t).data()).map(|(x, y)| x * y).sum();
            vec![(*t, g.scaled(sv)), (*s, with_shape(val(*s).shape(), vec![ds]))]
        }
        Op::MatMul(a, b) => {
            let (r, k) = val(*a).dims2();
            let (_, c) = val(*b).dims2();
            let da = matmul_nt_raw(g.data(), val(*b).data(), r, c, k);
            let db = matmul_tn_raw(val(*a).data(), g.data(), r, k, c);
            vec![
                (*a, with_shape(val(*a).shape(), da)),
                (*b, with_shape(val(*b).shape(), db)),
            ]
        }
        Op::MatMulNT(a, b) => {
            let (r, k) = val(*a).dims2();
            let (c, _) = val(*b).dims2();
            let da = matmul_raw(g.data(), val(*b).data(), r, c, k);
            let db = matmul_tn_raw(g.data(), val(*a).data(), r, c, k);
            vec![
                (*a, with_shape(val(*a).shape(), da)),
                (*b, with_shape(val(*b).shape(), db)),
            ]
        }
        Op::Relu(a) => vec![(*a, zip_map(g, val(*a), |x, y| if y > 0.0 { x } else { 0.0 }))],
        Op::Tanh(a) => vec![(*a, zip_map(g, out, |x, y| x * (1.0 - y * y)))],
        Op::Sum(a) => vec![(*a, Tensor::full(val(*a).shape(), g.data()[0]))],
        Op::SumRows(a) => {
            let (r, _) = val(*a).dims2();
            let data = (0..r).flat_map(|_| g.data().iter().copied()).collect();
            vec![(*a, with_shape(val(*a).shape(), data))]
        }
        Op::NormalizeRows(a) => {
            let x = val(*a);
            let (r, c) = x.dims2();
            let mut dx = Vec::with_capacity(r * c);
            for i in 0..r {
                let xr = x.row(i);
                let yr = out.row(i);
                let gr = g.row(i);
                let n = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                let yg: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                dx.extend(yr.iter().zip(gr).map(|(y, g)| (g - y * yg) / n));
            }
            vec![(*a, with_shape(x.shape(), dx))]
        }
        Op::SoftmaxRows(a) => {
            let (r, c) = out.dims2();
            let mut dx = Vec::with_capacity(r * c);
            for i in 0..r {
                let yr = out.row(i);
                let gr = g.row(i);
                let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                dx.extend(yr.iter().zip(gr).map(|(y, g)| y * (g - dot)));
            }
            vec![(*a, with_shape(out.shape(), dx))]
        }
        Op::CrossEntropyRows(a, targets) => {
            let x = val(*a);
            let (r, _) = x.dims2();
            let mut p = softmax_rows_raw(x);
            let scale = g.data()[0] / r as f64;
            let (_, c) = x.dims2();
            for (i, &t) in targets.iter().enumerate() {
                p.data_mut()[i * c + t] -= 1.0;
            }
            vec![(*a, p.scaled(scale))]
        }
        Op::Reshape(a) => vec![(*a, with_shape(val(*a).shape(), g.data().to_vec()))],
        Op::GatherRows(a, idx) => {
            let x = val(*a);
            let (r, c) = x.dims2();
            let mut dx = vec![0.0; r * c];
            for (k, &i) in idx.iter().enumerate() {
                for (d, v) in dx[i * c..(i + 1) * c].iter_mut().zip(g.row(k)) {
                    *d += v;
                }
            }
            vec![(*a, with_shape(x.shape(), dx))]
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            let mut res = Vec::with_capacity(parts.len());
            for &p in parts {
                let n = val(p).len();
                res.push((p, with_shape(val(p).shape(), g.data()[offset..offset + n].to_vec())));
                offset += n;
            }
            res
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

// `add`/`sub`/`mul` are by-value builder methods that record onto the tape;
// operator overloading would hide that and needs the trait in scope.
#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.with_value(self.id, Clone::clone)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.with_value(self.id, |t| t.shape().to_vec())
    }

    pub fn dims2(&self) -> (usize, usize) {
        self.tape.with_value(self.id, Tensor::dims2)
    }

    /// Value of a single-element node.
    pub fn item(&self) -> f64 {
        self.tape.with_value(self.id, |t| {
            assert_eq!(t.len(), 1, "item() on non-scalar");
            t.data()[0]
        })
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.tape.nodes.borrow()[self.id].grad.clone()
    }

    pub fn backward(&self) -> Result<()> {
        self.tape.backward_from(self.id)
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        self.tape.binary(self.id, other.id, Op::Add(self.id, other.id), |a, b| {
            same_shape(a, b, "add");
            zip_map(a, b, |x, y| x + y)
        })
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        self.tape.binary(self.id, other.id, Op::Sub(self.id, other.id), |a, b| {
            same_shape(a, b, "sub");
            zip_map(a, b, |x, y| x - y)
        })
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        self.tape.binary(self.id, other.id, Op::Mul(self.id, other.id), |a, b| {
            same_shape(a, b, "mul");
            zip_map(a, b, |x, y| x * y)
        })
    }

    /// Adds a length-`c` vector to every row of an `r×c` matrix.
    pub fn add_row(self, row: Var<'t>) -> Var<'t> {
        self.tape.binary(self.id, row.id, Op::AddRow(self.id, row.id), |m, v| {
            let (r, c) = m.dims2();
            assert_eq!(v.len(), c, "add_row: row length {} vs {} columns", v.len(), c);
            let mut data = m.data().to_vec();
            for i in 0..r {
                for (d, x) in data[i * c..(i + 1) * c].iter_mut().zip(v.data()) {
                    *d += x;
                }
            }
            with_shape(m.shape(), data)
        })
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.tape.unary(self.id, Op::Scale(self.id, s), |a| a.scaled(s))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.tape.unary(self.id, Op::AddScalar(self.id), |a| map(a, |x| x + c))
    }

    /// Multiplies every entry by a single-element node.
    pub fn scale_by(self, s: Var<'t>) -> Var<'t> {
        self.tape.binary(self.id, s.id, Op::ScaleBy(self.id, s.id), |t, s| {
            assert_eq!(s.len(), 1, "scale_by: scalar expected");
            t.scaled(s.data()[0])
        })
    }

    /// `self (r×k) · other (k×c)`.
    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        self.tape.binary(self.id, other.id, Op::MatMul(self.id, other.id), |a, b| {
            let (r, k) = a.dims2();
            let (k2, c) = b.dims2();
            assert_eq!(k, k2, "matmul: inner dims {k} vs {k2}");
            with_shape(&[r, c], matmul_raw(a.data(), b.data(), r, k, c))
        })
    }

    /// `self (r×k) · otherᵀ` with `other` stored `c×k`; linear maps keep
    /// their weights as `out×in`.
    pub fn matmul_t(self, other: Var<'t>) -> Var<'t> {
        self.tape.binary(self.id, other.id, Op::MatMulNT(self.id, other.id), |a, b| {
            let (r, k) = a.dims2();
            let (c, k2) = b.dims2();
            assert_eq!(k, k2, "matmul_t: inner dims {k} vs {k2}");
            with_shape(&[r, c], matmul_nt_raw(a.data(), b.data(), r, k, c))
        })
    }

    pub fn relu(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Relu(self.id), |a| map(a, |x| x.max(0.0)))
    }

    pub fn tanh(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Tanh(self.id), |a| map(a, f64::tanh))
    }

    pub fn sum(self) -> Var<'t> {
        self.tape.unary(self.id, Op::Sum(self.id), |a| {
            Tensor::scalar(a.data().iter().sum())
        })
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.tape.with_value(self.id, Tensor::len) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Column sums of an `r×c` matrix, as a length-`c` vector.
    pub fn sum_rows(self) -> Var<'t> {
        self.tape.unary(self.id, Op::SumRows(self.id), |a| {
            let (r, c) = a.dims2();
            let mut out = vec![0.0; c];
            for i in 0..r {
                for (o, x) in out.iter_mut().zip(a.row(i)) {
                    *o += x;
                }
            }
            Tensor::vector(out)
        })
    }

    pub fn mean_rows(self) -> Var<'t> {
        let (r, _) = self.dims2();
        self.sum_rows().scale(1.0 / r as f64)
    }

    /// Scales each row to unit L2 norm. A zero row poisons the tape.
    pub fn normalize_rows(self) -> Var<'t> {
        self.tape.unary(self.id, Op::NormalizeRows(self.id), |a| {
            let (r, c) = a.dims2();
            let mut out = Vec::with_capacity(r * c);
            for i in 0..r {
                let row = a.row(i);
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                out.extend(row.iter().map(|v| v / n));
            }
            with_shape(a.shape(), out)
        })
    }

    pub fn softmax_rows(self) -> Var<'t> {
        self.tape.unary(self.id, Op::SoftmaxRows(self.id), softmax_rows_raw)
    }

    /// Mean over rows of `-log softmax(row)[target]`, via log-sum-exp.
    pub fn cross_entropy_rows(self, targets: &[usize]) -> Var<'t> {
        let targets = targets.to_vec();
        let t2 = targets.clone();
        self.tape.unary(self.id, Op::CrossEntropyRows(self.id, targets), move |a| {
            let (r, c) = a.dims2();
            assert_eq!(r, t2.len(), "cross_entropy_rows: {} rows vs {} targets", r, t2.len());
            let mut total = 0.0;
            for (i, &t) in t2.iter().enumerate() {
                assert!(t < c, "cross_entropy_rows: target {t} >= {c}");
                total += super::functional::log_sum_exp(a.row(i)) - a.get2(i, t);
            }
            Tensor::scalar(total / r as f64)
        })
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let shape = shape.to_vec();
        self.tape.unary(self.id, Op::Reshape(self.id), |a| {
            a.reshape(&shape).expect("reshape: element count mismatch")
        })
    }

    pub fn gather_rows(self, idx: &[usize]) -> Var<'t> {
        let idx_v = idx.to_vec();
        self.tape.unary(self.id, Op::GatherRows(self.id, idx.to_vec()), |a| {
            let (r, c) = a.dims2();
            let mut data = Vec::with_capacity(idx_v.len() * c);
            for &i in &idx_v {
                assert!(i < r, "gather_rows: row {i} >= {r}");
                data.extend_from_slice(a.row(i));
            }
            with_shape(&[idx_v.len(), c], data)
        })
    }

    /// Stacks the rows of several same-width parts.
    pub fn concat_rows(parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat_rows: no parts");
        let tape = parts[0].tape;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let value = {
            let nodes = tape.nodes.borrow();
            let c = nodes[ids[0]].value.dims2().1;
            let mut rows = 0;
            let mut data = Vec::new();
            for &i in &ids {
                let (r, ci) = nodes[i].value.dims2();
                assert_eq!(ci, c, "concat_rows: width mismatch");
                rows += r;
                data.extend_from_slice(nodes[i].value.data());
            }
            with_shape(&[rows, c], data)
        };
        let rg = tape.needs(&ids);
        tape.push(value, Op::ConcatRows(ids), rg)
    }
}
