//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation of one forward pass. Values live on
//! the tape, handles are plain indices ([`Var`]), and [`Graph::backward`]
//! consumes the tape to produce [`Gradients`] for parameters and for any
//! leaf created with [`Graph::input_grad`].
//!
//! Elementwise and matrix primitives panic on shape mismatch, like slice
//! indexing does. Operations whose failure depends on data (axis choice,
//! vocabulary ids, parameter names) return `Result`.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use crate::error::{NnError, Result};
use crate::params::ParamStore;
use crate::tensor::{dot, matvec, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(String),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    MatVec(Var, Var),
    MatVecT(Var, Var),
    MatMulNt(Var, Var),
    AddRowVec(Var, Var),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    Slice(Var, usize),
    Index(Var, usize),
    Sum(Var),
    AddN(Vec<Var>),
    Dot(Var, Var),
    Softmax { x: Var, outer: usize, n: usize, inner: usize },
    LogSoftmax(Var),
    Gather { table: Var, ids: Vec<usize> },
    BceLogits { logits: Var, targets: Vec<f64>, weights: Vec<f64> },
    CrossEntropy { logits: Var, target: usize },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// One recorded forward pass.
pub struct Graph<'s> {
    store: Option<&'s ParamStore>,
    track_params: bool,
    nodes: RefCell<Vec<Node>>,
    bound: RefCell<HashMap<String, Var>>,
}

impl<'s> Graph<'s> {
    /// A graph whose parameters are differentiable.
    pub fn new(store: &'s ParamStore) -> Self {
        Graph {
            store: Some(store),
            track_params: true,
            nodes: RefCell::new(Vec::new()),
            bound: RefCell::new(HashMap::new()),
        }
    }

    /// A graph that reads parameters as constants; backward yields no parameter gradients.
    pub fn inference(store: &'s ParamStore) -> Self {
        Graph {
            track_params: false,
            ..Graph::new(store)
        }
    }

    /// A graph with no parameter store, for free-standing computations.
    pub fn detached() -> Graph<'static> {
        Graph {
            store: None,
            track_params: false,
            nodes: RefCell::new(Vec::new()),
            bound: RefCell::new(HashMap::new()),
        }
    }

    /// The parameter store this graph reads from, if any.
    pub fn store(&self) -> Option<&'s ParamStore> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].value.item()
    }

    /// A constant leaf.
    pub fn input(&self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input_grad(&self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn constant_vec(&self, data: Vec<f64>) -> Var {
        self.input(Tensor::vector(data))
    }

    /// Binds a stored parameter; repeated calls return the same node.
    pub fn param(&self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.borrow().get(name) {
            return Ok(v);
        }
        let store = self
            .store
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))?;
        let t = store
            .get(name)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))?
            .clone();
        let v = self.push(t, Op::Param(name.to_string()), self.track_params);
        self.bound.borrow_mut().insert(name.to_string(), v);
        Ok(v)
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::from_parts(av.shape().to_vec(), data);
        self.push(t, op, self.rg(a))
    }

    fn binary(&self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "{name}: shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::from_parts(av.shape().to_vec(), data);
        self.push(t, op, self.rg(a) || self.rg(b))
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    /// Adds a constant tensor of the same shape (e.g. a logit mask of `-inf`).
    pub fn add_const(&self, a: Var, c: &[f64]) -> Var {
        let av = self.value(a);
        assert_eq!(av.len(), c.len(), "add_const: length mismatch");
        let data = av.data().iter().zip(c).map(|(x, y)| x + y).collect();
        let t = Tensor::from_parts(av.shape().to_vec(), data);
        self.push(t, Op::AddConst(a), self.rg(a))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&self, a: Var) -> Var {
        self.unary(a, |x| 1.0 - x, Op::OneMinus(a))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    /// `W x` for `W: [m, n]`, `x: [n]`.
    pub fn matvec(&self, w: Var, x: Var) -> Var {
        let (wv, xv) = (self.value(w), self.value(x));
        assert!(
            wv.rank() == 2 && xv.rank() == 1 && wv.cols() == xv.len(),
            "matvec: {:?} x {:?}",
            wv.shape(),
            xv.shape()
        );
        let m = wv.rows();
        let mut out = vec![0.0; m];
        matvec(wv.data(), m, wv.cols(), xv.data(), &mut out);
        let rg = self.rg(w) || self.rg(x);
        self.push(Tensor::from_parts(vec![m], out), Op::MatVec(w, x), rg)
    }

    /// `Mᵀ a` for `M: [s, d]`, `a: [s]`: the `a`-weighted sum of the rows of `M`.
    pub fn matvec_t(&self, m: Var, a: Var) -> Var {
        let (mv, av) = (self.value(m), self.value(a));
        assert!(
            mv.rank() == 2 && av.rank() == 1 && mv.rows() == av.len(),
            "matvec_t: {:?} x {:?}",
            mv.shape(),
            av.shape()
        );
        let d = mv.cols();
        let mut out = vec![0.0; d];
        for (s, &w) in av.data().iter().enumerate() {
            for (o, &x) in out.iter_mut().zip(mv.row(s)) {
                *o += w * x;
            }
        }
        let rg = self.rg(m) || self.rg(a);
        self.push(Tensor::from_parts(vec![d], out), Op::MatVecT(m, a), rg)
    }

    /// `A Bᵀ` for `A: [m, k]`, `B: [n, k]`; applies the linear map `B` to every row of `A`.
    pub fn matmul_nt(&self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(
            av.rank() == 2 && bv.rank() == 2 && av.cols() == bv.cols(),
            "matmul_nt: {:?} x {:?}ᵀ",
            av.shape(),
            bv.shape()
        );
        let (m, n) = (av.rows(), bv.rows());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ar = av.row(i);
            for j in 0..n {
                out[i * n + j] = dot(ar, bv.row(j));
            }
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMulNt(a, b), rg)
    }

    /// Adds vector `b: [n]` to every row of `a: [m, n]`.
    pub fn add_row_vec(&self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(
            av.rank() == 2 && bv.rank() == 1 && av.cols() == bv.len(),
            "add_row_vec: {:?} + {:?}",
            av.shape(),
            bv.shape()
        );
        let n = bv.len();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv.data()[i % n])
            .collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::from_parts(av.shape().to_vec(), data), Op::AddRowVec(a, b), rg)
    }

    /// `W x + b`.
    pub fn linear(&self, w: Var, b: Var, x: Var) -> Var {
        let wx = self.matvec(w, x);
        self.add(wx, b)
    }

    /// Concatenates vectors end to end.
    pub fn concat(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let mut data = Vec::new();
        let mut rg = false;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rank(), 1, "concat expects vectors");
            data.extend_from_slice(pv.data());
            rg |= self.rg(p);
        }
        let n = data.len();
        self.push(Tensor::from_parts(vec![n], data), Op::Concat(parts.to_vec()), rg)
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack(&self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "stack of nothing");
        let d = self.value(rows[0]).len();
        let mut data = Vec::with_capacity(d * rows.len());
        let mut rg = false;
        for &r in rows {
            let rv = self.value(r);
            assert!(rv.rank() == 1 && rv.len() == d, "stack: ragged rows");
            data.extend_from_slice(rv.data());
            rg |= self.rg(r);
        }
        self.push(
            Tensor::from_parts(vec![rows.len(), d], data),
            Op::Stack(rows.to_vec()),
            rg,
        )
    }

    /// Contiguous sub-vector `a[start..start + len]`.
    pub fn slice(&self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(av.rank() == 1 && start + len <= av.len() && len > 0, "slice out of range");
        let data = av.data()[start..start + len].to_vec();
        self.push(Tensor::from_parts(vec![len], data), Op::Slice(a, start), self.rg(a))
    }

    /// Element `i` of a vector, as a scalar.
    pub fn index(&self, a: Var, i: usize) -> Var {
        let v = self.value(a).data()[i];
        self.push(Tensor::scalar(v), Op::Index(a, i), self.rg(a))
    }

    pub fn sum(&self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), self.rg(a))
    }

    /// Sum of same-shaped nodes.
    pub fn add_n(&self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "add_n of nothing");
        let first = self.value(xs[0]);
        let mut data = first.data().to_vec();
        let mut rg = self.rg(xs[0]);
        for &x in &xs[1..] {
            let xv = self.value(x);
            assert_eq!(xv.shape(), first.shape(), "add_n: shape mismatch");
            for (d, v) in data.iter_mut().zip(xv.data()) {
                *d += v;
            }
            rg |= self.rg(x);
        }
        self.push(
            Tensor::from_parts(first.shape().to_vec(), data),
            Op::AddN(xs.to_vec()),
            rg,
        )
    }

    pub fn dot(&self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "dot: shape mismatch");
        let v = dot(av.data(), bv.data());
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::scalar(v), Op::Dot(a, b), rg)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        let rank = shape.len().max(1);
        if axis >= rank {
            return Err(NnError::Axis { axis, rank });
        }
        let shape_or_scalar = if shape.is_empty() { vec![1] } else { shape.clone() };
        let outer: usize = shape_or_scalar[..axis].iter().product();
        let n = shape_or_scalar[axis];
        let inner: usize = shape_or_scalar[axis + 1..].iter().product();
        let mut out = vec![0.0; xv.len()];
        let d = xv.data();
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| o * n * inner + k * inner + i;
                let max = (0..n).map(|k| d[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for k in 0..n {
                    let e = (d[at(k)] - max).exp();
                    out[at(k)] = e;
                    z += e;
                }
                for k in 0..n {
                    out[at(k)] /= z;
                }
            }
        }
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Softmax { x, outer, n, inner },
            self.rg(x),
        ))
    }

    /// `x - logsumexp(x)` for a vector.
    pub fn log_softmax(&self, x: Var) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rank(), 1, "log_softmax expects a vector");
        let lse = log_sum_exp(xv.data());
        let data = xv.data().iter().map(|v| v - lse).collect();
        self.push(Tensor::from_parts(vec![xv.len()], data), Op::LogSoftmax(x), self.rg(x))
    }

    /// Rows of `table: [V, E]` selected by `ids`, as a `[ids.len(), E]` matrix.
    pub fn embed(&self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        assert_eq!(tv.rank(), 2, "embed expects a matrix table");
        let mut data = Vec::with_capacity(ids.len() * tv.cols());
        for &id in ids {
            if id >= tv.rows() {
                return Err(NnError::OutOfVocabulary {
                    id,
                    size: tv.rows(),
                });
            }
            data.extend_from_slice(tv.row(id));
        }
        let shape = vec![ids.len(), tv.cols()];
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            self.rg(table),
        ))
    }

    /// Row `id` of `table` as a vector.
    pub fn embed_one(&self, table: Var, id: usize) -> Result<Var> {
        let tv = self.value(table);
        if id >= tv.rows() {
            return Err(NnError::OutOfVocabulary {
                id,
                size: tv.rows(),
            });
        }
        let data = tv.row(id).to_vec();
        Ok(self.push(
            Tensor::from_parts(vec![tv.cols()], data),
            Op::Gather {
                table,
                ids: vec![id],
            },
            self.rg(table),
        ))
    }

    /// `Σ_i w_i · BCE(σ(l_i), t_i)` computed from logits. Entries with weight 0 are masked.
    pub fn bce_with_logits(&self, logits: Var, targets: &[f64], weights: &[f64]) -> Var {
        let lv = self.value(logits);
        assert!(
            lv.len() == targets.len() && lv.len() == weights.len(),
            "bce_with_logits: length mismatch"
        );
        let mut loss = 0.0;
        for ((&l, &t), &w) in lv.data().iter().zip(targets).zip(weights) {
            if w != 0.0 {
                loss += w * (softplus(l) - t * l);
            }
        }
        self.push(
            Tensor::scalar(loss),
            Op::BceLogits {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
            self.rg(logits),
        )
    }

    /// `-log softmax(logits)[target]`.
    pub fn cross_entropy(&self, logits: Var, target: usize) -> Result<Var> {
        let lv = self.value(logits);
        assert_eq!(lv.rank(), 1, "cross_entropy expects a vector");
        if target >= lv.len() {
            return Err(NnError::OutOfVocabulary {
                id: target,
                size: lv.len(),
            });
        }
        let loss = log_sum_exp(lv.data()) - lv.data()[target];
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, target },
            self.rg(logits),
        ))
    }

    /// Runs reverse accumulation from a scalar `loss`, consuming the graph.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.into_inner();
        let shape = nodes[loss.0].value.shape().to_vec();
        if nodes[loss.0].value.len() != 1 {
            return Err(NnError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let y = &node.value;
            let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
                if !nodes[v.0].requires_grad {
                    return;
                }
                let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
                f(slot);
            };
            match &node.op {
                Op::Leaf => {
                    out.leaves
                        .insert(i, Tensor::from_parts(y.shape().to_vec(), g));
                }
                Op::Param(name) => {
                    out.params
                        .insert(name.clone(), Tensor::from_parts(y.shape().to_vec(), g));
                }
                Op::Add(a, b) => {
                    acc(*a, &|s| add_into(s, &g));
                    acc(*b, &|s| add_into(s, &g));
                }
                Op::Sub(a, b) => {
                    acc(*a, &|s| add_into(s, &g));
                    acc(*b, &|s| s.iter_mut().zip(&g).for_each(|(s, g)| *s -= g));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    acc(*a, &|s| {
                        for ((s, g), b) in s.iter_mut().zip(&g).zip(bv.data()) {
                            *s += g * b;
                        }
                    });
                    acc(*b, &|s| {
                        for ((s, g), a) in s.iter_mut().zip(&g).zip(av.data()) {
                            *s += g * a;
                        }
                    });
                }
                Op::Scale(a, k) => acc(*a, &|s| s.iter_mut().zip(&g).for_each(|(s, g)| *s += k * g)),
                Op::AddConst(a) => acc(*a, &|s| add_into(s, &g)),
                Op::OneMinus(a) => acc(*a, &|s| s.iter_mut().zip(&g).for_each(|(s, g)| *s -= g)),
                Op::Sigmoid(a) => acc(*a, &|s| {
                    for ((s, g), y) in s.iter_mut().zip(&g).zip(y.data()) {
                        *s += g * y * (1.0 - y);
                    }
                }),
                Op::Tanh(a) => acc(*a, &|s| {
                    for ((s, g), y) in s.iter_mut().zip(&g).zip(y.data()) {
                        *s += g * (1.0 - y * y);
                    }
                }),
                Op::Exp(a) => acc(*a, &|s| {
                    for ((s, g), y) in s.iter_mut().zip(&g).zip(y.data()) {
                        *s += g * y;
                    }
                }),
                Op::Ln(a) => {
                    let xv = &nodes[a.0].value;
                    acc(*a, &|s| {
                        for ((s, g), x) in s.iter_mut().zip(&g).zip(xv.data()) {
                            *s += g / x;
                        }
                    })
                }
                Op::MatVec(w, x) => {
                    let (wv, xv) = (&nodes[w.0].value, &nodes[x.0].value);
                    let (m, n) = (wv.rows(), wv.cols());
                    acc(*w, &|s| {
                        for r in 0..m {
                            let gr = g[r];
                            if gr == 0.0 {
                                continue;
                            }
                            for (s, x) in s[r * n..(r + 1) * n].iter_mut().zip(xv.data()) {
                                *s += gr * x;
                            }
                        }
                    });
                    acc(*x, &|s| {
                        for r in 0..m {
                            let gr = g[r];
                            for (s, w) in s.iter_mut().zip(wv.row(r)) {
                                *s += gr * w;
                            }
                        }
                    });
                }
                Op::MatVecT(m, a) => {
                    let (mv, av) = (&nodes[m.0].value, &nodes[a.0].value);
                    let d = mv.cols();
                    acc(*m, &|s| {
                        for (si, &w) in av.data().iter().enumerate() {
                            for (s, g) in s[si * d..(si + 1) * d].iter_mut().zip(&g) {
                                *s += w * g;
                            }
                        }
                    });
                    acc(*a, &|s| {
                        for (si, s) in s.iter_mut().enumerate() {
                            *s += dot(mv.row(si), &g);
                        }
                    });
                }
                Op::MatMulNt(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                    acc(*a, &|s| {
                        for i in 0..m {
                            for j in 0..n {
                                let gij = g[i * n + j];
                                for (s, b) in s[i * k..(i + 1) * k].iter_mut().zip(bv.row(j)) {
                                    *s += gij * b;
                                }
                            }
                        }
                    });
                    acc(*b, &|s| {
                        for i in 0..m {
                            for j in 0..n {
                                let gij = g[i * n + j];
                                for (s, a) in s[j * k..(j + 1) * k].iter_mut().zip(av.row(i)) {
                                    *s += gij * a;
                                }
                            }
                        }
                    });
                }
                Op::AddRowVec(a, b) => {
                    acc(*a, &|s| add_into(s, &g));
                    acc(*b, &|s| {
                        let n = s.len();
                        for (i, gv) in g.iter().enumerate() {
                            s[i % n] += gv;
                        }
                    });
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let len = nodes[p.0].value.len();
                        acc(*p, &|s| add_into(s, &g[off..off + len]));
                        off += len;
                    }
                }
                Op::Stack(rows) => {
                    let d = y.cols();
                    for (r, p) in rows.iter().enumerate() {
                        acc(*p, &|s| add_into(s, &g[r * d..(r + 1) * d]));
                    }
                }
                Op::Slice(a, start) => {
                    let len = g.len();
                    acc(*a, &|s| add_into(&mut s[*start..start + len], &g));
                }
                Op::Index(a, idx) => acc(*a, &|s| s[*idx] += g[0]),
                Op::Sum(a) => acc(*a, &|s| s.iter_mut().for_each(|s| *s += g[0])),
                Op::AddN(xs) => {
                    for x in xs {
                        acc(*x, &|s| add_into(s, &g));
                    }
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    acc(*a, &|s| {
                        for (s, b) in s.iter_mut().zip(bv.data()) {
                            *s += g[0] * b;
                        }
                    });
                    acc(*b, &|s| {
                        for (s, a) in s.iter_mut().zip(av.data()) {
                            *s += g[0] * a;
                        }
                    });
                }
                Op::Softmax { x, outer, n, inner } => {
                    let yd = y.data();
                    acc(*x, &|s| {
                        for o in 0..*outer {
                            for i in 0..*inner {
                                let at = |k: usize| o * n * inner + k * inner + i;
                                let gy: f64 = (0..*n).map(|k| g[at(k)] * yd[at(k)]).sum();
                                for k in 0..*n {
                                    s[at(k)] += yd[at(k)] * (g[at(k)] - gy);
                                }
                            }
                        }
                    });
                }
                Op::LogSoftmax(x) => {
                    let gsum: f64 = g.iter().sum();
                    acc(*x, &|s| {
                        for ((s, g), ly) in s.iter_mut().zip(&g).zip(y.data()) {
                            *s += g - ly.exp() * gsum;
                        }
                    });
                }
                Op::Gather { table, ids } => {
                    let e = nodes[table.0].value.cols();
                    acc(*table, &|s| {
                        for (r, &id) in ids.iter().enumerate() {
                            add_into(&mut s[id * e..(id + 1) * e], &g[r * e..(r + 1) * e]);
                        }
                    });
                }
                Op::BceLogits {
                    logits,
                    targets,
                    weights,
                } => {
                    let lv = &nodes[logits.0].value;
                    acc(*logits, &|s| {
                        for (i, s) in s.iter_mut().enumerate() {
                            if weights[i] != 0.0 {
                                *s += g[0] * weights[i] * (sigmoid(lv.data()[i]) - targets[i]);
                            }
                        }
                    });
                }
                Op::CrossEntropy { logits, target } => {
                    let lv = &nodes[logits.0].value;
                    let lse = log_sum_exp(lv.data());
                    acc(*logits, &|s| {
                        for (k, (s, l)) in s.iter_mut().zip(lv.data()).enumerate() {
                            let p = (l - lse).exp();
                            *s += g[0] * (p - if k == *target { 1.0 } else { 0.0 });
                        }
                    });
                }
            }
        }
        Ok(out)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Result of [`Graph::backward`].
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    params: BTreeMap<String, Tensor>,
    leaves: HashMap<usize, Tensor>,
}

impl Gradients {
    /// Gradient of a parameter, if it was reached.
    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Gradient of a leaf created with [`Graph::input_grad`]; zeros if unreached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v.0)
    }

    /// Scales every gradient by `k`.
    pub fn scale(&mut self, k: f64) {
        for t in self.params.values_mut().chain(self.leaves.values_mut()) {
            t.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
}
