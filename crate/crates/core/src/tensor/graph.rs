use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use super::{split_axis, Array, Element};
use crate::error::{Error, Result};

pub type NodeId = usize;

/// Backward rule of a user-defined operation: receives the parent values,
/// the forward output and the upstream gradient; returns one gradient per
/// parent, each shaped like that parent.
pub type BackwardRule<T> = Box<dyn Fn(&[Rc<Array<T>>], &Array<T>, &Array<T>) -> Vec<Array<T>>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Max,
    Mean,
    Sum,
}

enum Op<T> {
    Leaf,
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    ScalarMul(NodeId, T),
    AddScalar(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    MatMul {
        a: NodeId,
        b: NodeId,
        ta: bool,
        tb: bool,
    },
    Transpose(NodeId),
    Reshape(NodeId),
    Softmax {
        x: NodeId,
        axis: usize,
        scale: T,
    },
    LogSumExp {
        x: NodeId,
        axis: usize,
    },
    Reduce {
        x: NodeId,
        kind: ReduceKind,
        axis: usize,
        argmax: Vec<usize>,
    },
    SumAll(NodeId),
    Concat {
        parts: Vec<NodeId>,
        axis: usize,
    },
    Replicate {
        x: NodeId,
        axis: usize,
    },
    Gather {
        x: NodeId,
        axis: usize,
        indices: Vec<usize>,
    },
    StraightThrough(NodeId),
    Custom {
        parents: Vec<NodeId>,
        rule: BackwardRule<T>,
    },
}

impl<T> Op<T> {
    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::AddRow(a, b) => vec![*a, *b],
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::ScalarMul(x, _)
            | Op::AddScalar(x)
            | Op::Relu(x)
            | Op::Exp(x)
            | Op::Ln(x)
            | Op::Transpose(x)
            | Op::Reshape(x)
            | Op::SumAll(x)
            | Op::StraightThrough(x)
            | Op::Softmax { x, .. }
            | Op::LogSumExp { x, .. }
            | Op::Reduce { x, .. }
            | Op::Replicate { x, .. }
            | Op::Gather { x, .. } => vec![*x],
            Op::Concat { parts, .. } => parts.clone(),
            Op::Custom { parents, .. } => parents.clone(),
        }
    }
}

struct Node<T> {
    value: Rc<Array<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of operations. Parents always precede children, so
/// the node list is a topological order by construction.
pub struct Graph<T: Element> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> fmt::Debug for Graph<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.nodes.borrow().len())
            .finish()
    }
}

/// Handle to a value recorded on a [`Graph`].
pub struct Tensor<'g, T: Element> {
    graph: &'g Graph<T>,
    id: NodeId,
}

impl<T: Element> Clone for Tensor<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Element> Copy for Tensor<'_, T> {}

impl<T: Element> fmt::Debug for Tensor<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that receives a gradient on backward.
    pub fn param(&self, value: Array<T>) -> Tensor<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&self, value: Array<T>) -> Tensor<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: T) -> Tensor<'_, T> {
        self.constant(Array::scalar(value))
    }

    /// Records an operation with a caller-supplied backward rule.
    pub fn custom<'g>(
        &'g self,
        parents: &[Tensor<'g, T>],
        value: Array<T>,
        rule: BackwardRule<T>,
    ) -> Tensor<'g, T> {
        let ids = parents.iter().map(|t| t.id).collect();
        self.push_op(
            value,
            Op::Custom {
                parents: ids,
                rule,
            },
        )
    }

    fn push(&self, value: Array<T>, op: Op<T>, requires_grad: bool) -> Tensor<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Tensor {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn push_op(&self, value: Array<T>, op: Op<T>) -> Tensor<'_, T> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op.parents().iter().any(|&p| nodes[p].requires_grad)
        };
        self.push(value, op, requires_grad)
    }

    fn value_of(&self, id: NodeId) -> Rc<Array<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Reverse sweep from a scalar root. Gradients are summed at shared
    /// parents; only leaves created with [`Graph::param`] are reported.
    pub fn backward(&self, root: Tensor<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.id].value;
        if root_value.len() != 1 {
            return Err(Error::Shape {
                op: "backward (root must be scalar)",
                lhs: root_value.shape().to_vec(),
                rhs: Vec::new(),
            });
        }
        let mut grads: Vec<Option<Array<T>>> = Vec::with_capacity(root.id + 1);
        grads.resize_with(root.id + 1, || None);
        grads[root.id] = Some(Array::full(root_value.shape(), T::one()));
        let mut out = HashMap::new();

        for id in (0..=root.id).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) {
                if node.requires_grad {
                    out.insert(id, grad);
                }
                continue;
            }
            let parents = node.op.parents();
            let needs: Vec<bool> = parents.iter().map(|&p| nodes[p].requires_grad).collect();
            if !needs.iter().any(|&n| n) {
                continue;
            }
            let contributions = backward_rule(&nodes, node, &grad, &needs);
            for ((&parent, need), g) in parents.iter().zip(&needs).zip(contributions) {
                let Some(g) = g else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(g.shape(), nodes[parent].value.shape());
                match &mut grads[parent] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads: out })
    }
}

/// Gradients of the requires-grad leaves reached by a backward sweep.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: HashMap<NodeId, Array<T>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, t: &Tensor<'_, T>) -> Option<&Array<T>> {
        self.grads.get(&t.id)
    }

    /// Gradient of `t`, or zeros shaped like it when `t` was unreachable.
    pub fn get_or_zeros(&self, t: &Tensor<'_, T>) -> Array<T> {
        self.grads
            .get(&t.id)
            .cloned()
            .unwrap_or_else(|| Array::zeros(&t.shape()))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn zip_map<T: Element>(a: &Array<T>, b: &Array<T>, f: impl Fn(T, T) -> T) -> Array<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Array::new(a.shape().to_vec(), data).expect("same shape")
}

fn transpose2<T: Element>(a: &Array<T>) -> Array<T> {
    let (r, c) = (a.shape()[0], a.shape()[1]);
    let src = a.data();
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    Array::new(vec![c, r], out).expect("transpose shape")
}

/// Sums `g` (shaped like `shape` with `axis` removed) back over `axis`.
fn expand_along<T: Element>(g: &Array<T>, shape: &[usize], axis: usize) -> Array<T> {
    let (outer, dim, inner) = split_axis(shape, axis);
    let src = g.data();
    let mut out = vec![T::zero(); outer * dim * inner];
    for o in 0..outer {
        for d in 0..dim {
            let dst = &mut out[(o * dim + d) * inner..(o * dim + d + 1) * inner];
            dst.copy_from_slice(&src[o * inner..(o + 1) * inner]);
        }
    }
    Array::new(shape.to_vec(), out).expect("expand shape")
}

fn backward_rule<T: Element>(
    nodes: &[Node<T>],
    node: &Node<T>,
    g: &Array<T>,
    needs: &[bool],
) -> Vec<Option<Array<T>>> {
    let val = |id: NodeId| &nodes[id].value;
    match &node.op {
        Op::Leaf => Vec::new(),
        Op::Add(_, _) => vec![needs[0].then(|| g.clone()), needs[1].then(|| g.clone())],
        Op::Sub(_, _) => vec![needs[0].then(|| g.clone()), needs[1].then(|| g.map(|v| -v))],
        Op::AddRow(_, b) => {
            let cols = val(*b).len();
            vec![
                needs[0].then(|| g.clone()),
                needs[1].then(|| {
                    let mut out = vec![T::zero(); cols];
                    for row in g.data().chunks(cols) {
                        for (acc, &v) in out.iter_mut().zip(row) {
                            *acc = *acc + v;
                        }
                    }
                    Array::from_vec(out)
                }),
            ]
        }
        Op::Mul(a, b) => vec![
            needs[0].then(|| zip_map(g, val(*b), |g, b| g * b)),
            needs[1].then(|| zip_map(g, val(*a), |g, a| g * a)),
        ],
        Op::Div(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            vec![
                needs[0].then(|| zip_map(g, bv, |g, b| g / b)),
                needs[1].then(|| {
                    let ga = zip_map(g, av, |g, a| g * a);
                    zip_map(&ga, bv, |ga, b| -ga / (b * b))
                }),
            ]
        }
        Op::ScalarMul(_, s) => {
            let s = *s;
            vec![Some(g.map(|v| v * s))]
        }
        Op::AddScalar(_) => vec![Some(g.clone())],
        Op::Relu(_) => vec![Some(zip_map(g, &node.value, |g, y| {
            if y > T::zero() {
                g
            } else {
                T::zero()
            }
        }))],
        Op::Exp(_) => vec![Some(zip_map(g, &node.value, |g, y| g * y))],
        Op::Ln(x) => vec![Some(zip_map(g, val(*x), |g, x| g / x))],
        Op::MatMul { a, b, ta, tb } => {
            let (av, bv) = (val(*a), val(*b));
            let (a_strides, m, k) = view2(av.shape(), *ta);
            let (b_strides, _, n) = view2(bv.shape(), *tb);
            let da = needs[0].then(|| {
                // d op(A) = dC · op(B)ᵀ, written through op(A)'s strides.
                let mut out = Array::zeros(av.shape());
                T::gemm(
                    m,
                    n,
                    k,
                    g.data(),
                    (n, 1),
                    bv.data(),
                    (b_strides.1, b_strides.0),
                    T::zero(),
                    out.data_mut(),
                    a_strides,
                );
                out
            });
            let db = needs[1].then(|| {
                let mut out = Array::zeros(bv.shape());
                T::gemm(
                    k,
                    m,
                    n,
                    av.data(),
                    (a_strides.1, a_strides.0),
                    g.data(),
                    (n, 1),
                    T::zero(),
                    out.data_mut(),
                    b_strides,
                );
                out
            });
            vec![da, db]
        }
        Op::Transpose(_) => vec![Some(transpose2(g))],
        Op::Reshape(x) => vec![Some(
            g.clone()
                .reshaped(val(*x).shape().to_vec())
                .expect("reshape back"),
        )],
        Op::Softmax { axis, scale, .. } => {
            let y = &node.value;
            let (outer, dim, inner) = split_axis(y.shape(), *axis);
            let (yd, gd) = (y.data(), g.data());
            let mut out = vec![T::zero(); y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |d: usize| (o * dim + d) * inner + i;
                    let dot: T = (0..dim).map(|d| gd[at(d)] * yd[at(d)]).sum();
                    for d in 0..dim {
                        out[at(d)] = yd[at(d)] * (gd[at(d)] - dot) / *scale;
                    }
                }
            }
            vec![Some(Array::new(y.shape().to_vec(), out).expect("softmax"))]
        }
        Op::LogSumExp { x, axis } => {
            let xv = val(*x);
            let (outer, dim, inner) = split_axis(xv.shape(), *axis);
            let (xd, yd, gd) = (xv.data(), node.value.data(), g.data());
            let mut out = vec![T::zero(); xv.len()];
            for o in 0..outer {
                for d in 0..dim {
                    for i in 0..inner {
                        let r = o * inner + i;
                        let at = (o * dim + d) * inner + i;
                        out[at] = gd[r] * (xd[at] - yd[r]).exp();
                    }
                }
            }
            vec![Some(Array::new(xv.shape().to_vec(), out).expect("lse"))]
        }
        Op::Reduce {
            x,
            kind,
            axis,
            argmax,
        } => {
            let shape = val(*x).shape();
            let (outer, dim, inner) = split_axis(shape, *axis);
            let out = match kind {
                ReduceKind::Sum => expand_along(g, shape, *axis),
                ReduceKind::Mean => {
                    let scale = T::one() / T::from_usize(dim).expect("dim");
                    expand_along(g, shape, *axis).map(|v| v * scale)
                }
                ReduceKind::Max => {
                    let mut out = vec![T::zero(); outer * dim * inner];
                    for (r, &d) in argmax.iter().enumerate() {
                        let (o, i) = (r / inner, r % inner);
                        out[(o * dim + d) * inner + i] = g.data()[r];
                    }
                    Array::new(shape.to_vec(), out).expect("max")
                }
            };
            vec![Some(out)]
        }
        Op::SumAll(x) => vec![Some(Array::full(val(*x).shape(), g.item()))],
        Op::Concat { parts, axis } => {
            let out_shape = node.value.shape();
            let (outer, _, inner) = split_axis(out_shape, *axis);
            let total = out_shape[*axis];
            let mut offset = 0;
            let mut grads = Vec::with_capacity(parts.len());
            for (p, &need) in parts.iter().zip(needs) {
                let pshape = val(*p).shape();
                let dim = pshape[*axis];
                if need {
                    let mut buf = Vec::with_capacity(outer * dim * inner);
                    for o in 0..outer {
                        let start = (o * total + offset) * inner;
                        buf.extend_from_slice(&g.data()[start..start + dim * inner]);
                    }
                    grads.push(Some(Array::new(pshape.to_vec(), buf).expect("concat")));
                } else {
                    grads.push(None);
                }
                offset += dim;
            }
            grads
        }
        Op::Replicate { x, axis } => {
            let (outer, times, inner) = split_axis(node.value.shape(), *axis);
            let mut out = vec![T::zero(); outer * inner];
            let gd = g.data();
            for o in 0..outer {
                for t in 0..times {
                    let src = &gd[(o * times + t) * inner..(o * times + t + 1) * inner];
                    for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                        *acc = *acc + v;
                    }
                }
            }
            vec![Some(
                Array::new(val(*x).shape().to_vec(), out).expect("replicate"),
            )]
        }
        Op::Gather { x, axis, indices } => {
            let shape = val(*x).shape();
            let (outer, dim, inner) = split_axis(shape, *axis);
            let mut out = vec![T::zero(); outer * dim * inner];
            let gd = g.data();
            let picked = indices.len();
            for o in 0..outer {
                for (j, &src) in indices.iter().enumerate() {
                    for i in 0..inner {
                        let at = (o * dim + src) * inner + i;
                        out[at] = out[at] + gd[(o * picked + j) * inner + i];
                    }
                }
            }
            vec![Some(Array::new(shape.to_vec(), out).expect("gather"))]
        }
        Op::StraightThrough(_) => vec![Some(g.clone())],
        Op::Custom { parents, rule } => {
            let values: Vec<Rc<Array<T>>> = parents.iter().map(|&p| Rc::clone(val(p))).collect();
            rule(&values, &node.value, g).into_iter().map(Some).collect()
        }
    }
}

/// Strides, rows and cols of `op(X)` for a stored 2-D matrix `X`.
fn view2(shape: &[usize], transposed: bool) -> ((usize, usize), usize, usize) {
    let (r, c) = (shape[0], shape[1]);
    if transposed {
        ((1, c), c, r)
    } else {
        ((c, 1), r, c)
    }
}

impl<'g, T: Element> Tensor<'g, T> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn value(&self) -> Rc<Array<T>> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        self.value().item()
    }

    fn same_shape(&self, other: &Tensor<'g, T>, op: &'static str) -> Result<(Rc<Array<T>>, Rc<Array<T>>)> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(Error::Shape {
                op,
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        Ok((a, b))
    }

    fn check_axis(&self, axis: usize) -> Result<Vec<usize>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::Axis {
                axis,
                rank: shape.len(),
            });
        }
        Ok(shape)
    }

    fn unary(&self, op: Op<T>, f: impl Fn(T) -> T) -> Tensor<'g, T> {
        let out = self.value().map(f);
        self.graph.push_op(out, op)
    }

    pub fn add(&self, other: Tensor<'g, T>) -> Result<Tensor<'g, T>> {
        let (a, b) = self.same_shape(&other, "add")?;
        Ok(self.graph.push_op(zip_map(&a, &b, |x, y| x + y), Op::Add(self.id, other.id)))
    }

    /// `self[i, :] + row` for every row of a 2-D tensor.
    pub fn add_row(&self, row: Tensor<'g, T>) -> Result<Tensor<'g, T>> {
        let (shape, rshape) = (self.shape(), row.shape());
        if shape.len() != 2 || rshape != [shape[1]] {
            return Err(Error::Shape {
                op: "add_row",
                lhs: shape,
                rhs: rshape,
            });
        }
        let r = row.value();
        let x = self.value();
        let mut out = x.data().to_vec();
        for chunk in out.chunks_mut(shape[1]) {
            for (v, &b) in chunk.iter_mut().zip(r.data()) {
                *v = *v + b;
            }
        }
        Ok(self
            .graph
            .push_op(Array::new(shape, out)?, Op::AddRow(self.id, row.id)))
    }

    pub fn sub(&self, other: Tensor<'g, T>) -> Result<Tensor<'g, T>> {
        let (a, b) = self.same_shape(&other, "sub")?;
        Ok(self.graph.push_op(zip_map(&a, &b, |x, y| x - y), Op::Sub(self.id, other.id)))
    }

    pub fn mul(&self, other: Tensor<'g, T>) -> Result<Tensor<'g, T>> {
        let (a, b) = self.same_shape(&other, "mul")?;
        Ok(self.graph.push_op(zip_map(&a, &b, |x, y| x * y), Op::Mul(self.id, other.id)))
    }

    pub fn div(&self, other: Tensor<'g, T>) -> Result<Tensor<'g, T>> {
        let (a, b) = self.same_shape(&other, "div")?;
        Ok(self.graph.push_op(zip_map(&a, &b, |x, y| x / y), Op::Div(self.id, other.id)))
    }

    pub fn scalar_mul(&self, s: T) -> Tensor<'g, T> {
        self.unary(Op::ScalarMul(self.id, s), |v| v * s)
    }

    pub fn add_scalar(&self, s: T) -> Tensor<'g, T> {
        self.unary(Op::AddScalar(self.id), |v| v + s)
    }

    pub fn neg(&self) -> Tensor<'g, T> {
        self.scalar_mul(-T::one())
    }

    pub fn relu(&self) -> Tensor<'g, T> {
        self.unary(Op::Relu(self.id), |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn exp(&self) -> Tensor<'g, T> {
        self.unary(Op::Exp(self.id), T::exp)
    }

    pub fn ln(&self) -> Tensor<'g, T> {
        self.unary(Op::Ln(self.id), T::ln)
    }

    pub fn square(&self) -> Result<Tensor<'g, T>> {
        self.mul(*self)
    }

    pub fn matmul(&self, other: Tensor<'g, T>) -> Result<Tensor<'g, T>> {
        self.matmul_t(other, false, false)
    }

    /// `op(self) · op(other)` where `op` optionally transposes a 2-D operand.
    pub fn matmul_t(&self, other: Tensor<'g, T>, ta: bool, tb: bool) -> Result<Tensor<'g, T>> {
        let (a, b) = (self.value(), other.value());
        if a.rank() != 2 || b.rank() != 2 {
            return Err(Error::Shape {
                op: "matmul (rank 2 required)",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let (a_strides, m, k) = view2(a.shape(), ta);
        let (b_strides, k2, n) = view2(b.shape(), tb);
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut out = Array::zeros(&[m, n]);
        T::gemm(m, k, n, a.data(), a_strides, b.data(), b_strides, T::zero(), out.data_mut(), (n, 1));
        Ok(self.graph.push_op(
            out,
            Op::MatMul {
                a: self.id,
                b: other.id,
                ta,
                tb,
            },
        ))
    }

    pub fn transpose(&self) -> Result<Tensor<'g, T>> {
        let a = self.value();
        if a.rank() != 2 {
            return Err(Error::Shape {
                op: "transpose (rank 2 required)",
                lhs: a.shape().to_vec(),
                rhs: Vec::new(),
            });
        }
        Ok(self.graph.push_op(transpose2(&a), Op::Transpose(self.id)))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<'g, T>> {
        let out = (*self.value()).clone().reshaped(shape.to_vec())?;
        Ok(self.graph.push_op(out, Op::Reshape(self.id)))
    }

    /// `softmax(x / scale)` along `axis`, stabilised by max subtraction.
    pub fn softmax(&self, axis: usize, scale: T) -> Result<Tensor<'g, T>> {
        let shape = self.check_axis(axis)?;
        if !(scale > T::zero()) {
            return Err(Error::invalid("softmax scale must be positive"));
        }
        let x = self.value();
        let (outer, dim, inner) = split_axis(&shape, axis);
        let xd = x.data();
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |d: usize| (o * dim + d) * inner + i;
                let max = (0..dim).map(|d| xd[at(d)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for d in 0..dim {
                    let e = ((xd[at(d)] - max) / scale).exp();
                    out[at(d)] = e;
                    total = total + e;
                }
                for d in 0..dim {
                    out[at(d)] = out[at(d)] / total;
                }
            }
        }
        Ok(self.graph.push_op(
            Array::new(shape, out)?,
            Op::Softmax {
                x: self.id,
                axis,
                scale,
            },
        ))
    }

    /// `log Σ exp(x)` along `axis` (the axis is removed).
    pub fn log_sum_exp(&self, axis: usize) -> Result<Tensor<'g, T>> {
        let shape = self.check_axis(axis)?;
        let x = self.value();
        let (outer, dim, inner) = split_axis(&shape, axis);
        if dim == 0 {
            return Err(Error::invalid("log_sum_exp over an empty axis"));
        }
        let xd = x.data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |d: usize| (o * dim + d) * inner + i;
                let max = (0..dim).map(|d| xd[at(d)]).fold(T::neg_infinity(), T::max);
                let total: T = (0..dim).map(|d| (xd[at(d)] - max).exp()).sum();
                out[o * inner + i] = max + total.ln();
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        Ok(self
            .graph
            .push_op(Array::new(out_shape, out)?, Op::LogSumExp { x: self.id, axis }))
    }

    /// Reduces along `axis`, removing it. Max routes its gradient to the
    /// lowest-index maximiser.
    pub fn reduce(&self, kind: ReduceKind, axis: usize) -> Result<Tensor<'g, T>> {
        let shape = self.check_axis(axis)?;
        let (outer, dim, inner) = split_axis(&shape, axis);
        if dim == 0 {
            return Err(Error::invalid("reduction over an empty axis"));
        }
        let x = self.value();
        let xd = x.data();
        let mut out = vec![T::zero(); outer * inner];
        let mut argmax = Vec::new();
        match kind {
            ReduceKind::Max => {
                argmax.reserve(outer * inner);
                for o in 0..outer {
                    for i in 0..inner {
                        let mut best = 0;
                        let mut best_v = xd[o * dim * inner + i];
                        for d in 1..dim {
                            let v = xd[(o * dim + d) * inner + i];
                            if v > best_v {
                                best = d;
                                best_v = v;
                            }
                        }
                        out[o * inner + i] = best_v;
                        argmax.push(best);
                    }
                }
            }
            ReduceKind::Sum | ReduceKind::Mean => {
                for o in 0..outer {
                    for d in 0..dim {
                        let row = &xd[(o * dim + d) * inner..(o * dim + d + 1) * inner];
                        for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                            *acc = *acc + v;
                        }
                    }
                }
                if kind == ReduceKind::Mean {
                    let scale = T::one() / T::from_usize(dim).expect("dim");
                    out.iter_mut().for_each(|v| *v = *v * scale);
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        Ok(self.graph.push_op(
            Array::new(out_shape, out)?,
            Op::Reduce {
                x: self.id,
                kind,
                axis,
                argmax,
            },
        ))
    }

    /// Sum of every element as a rank-0 scalar.
    pub fn sum(&self) -> Tensor<'g, T> {
        let total: T = self.value().data().iter().copied().sum();
        self.graph.push_op(Array::scalar(total), Op::SumAll(self.id))
    }

    pub fn concat(parts: &[Tensor<'g, T>], axis: usize) -> Result<Tensor<'g, T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let base = first.check_axis(axis)?;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let mut total = 0;
        for v in &values {
            let s = v.shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &values {
                let dim = v.shape()[axis];
                out.extend_from_slice(&v.data()[o * dim * inner..(o + 1) * dim * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(first.graph.push_op(
            Array::new(shape, out)?,
            Op::Concat {
                parts: parts.iter().map(|p| p.id).collect(),
                axis,
            },
        ))
    }

    /// Inserts a new axis of extent `times` at position `axis`, copying the
    /// tensor along it.
    pub fn replicate(&self, axis: usize, times: usize) -> Result<Tensor<'g, T>> {
        let shape = self.shape();
        if axis > shape.len() {
            return Err(Error::Axis {
                axis,
                rank: shape.len(),
            });
        }
        if times == 0 {
            return Err(Error::invalid("replicate count must be positive"));
        }
        let mut out_shape = shape.clone();
        out_shape.insert(axis, times);
        let out = expand_along(&self.value(), &out_shape, axis);
        Ok(self.graph.push_op(out, Op::Replicate { x: self.id, axis }))
    }

    /// Selects `indices` along `axis` (repeats allowed).
    pub fn gather(&self, axis: usize, indices: &[usize]) -> Result<Tensor<'g, T>> {
        let shape = self.check_axis(axis)?;
        let (outer, dim, inner) = split_axis(&shape, axis);
        if let Some(&bad) = indices.iter().find(|&&i| i >= dim) {
            return Err(Error::invalid(format!(
                "gather index {bad} out of range for axis of length {dim}"
            )));
        }
        let x = self.value();
        let mut out = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &src in indices {
                let start = (o * dim + src) * inner;
                out.extend_from_slice(&x.data()[start..start + inner]);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = indices.len();
        Ok(self.graph.push_op(
            Array::new(out_shape, out)?,
            Op::Gather {
                x: self.id,
                axis,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Forward value `forward`, backward identity into `self`.
    pub fn straight_through(&self, forward: Array<T>) -> Result<Tensor<'g, T>> {
        if forward.shape() != self.shape().as_slice() {
            return Err(Error::Shape {
                op: "straight_through",
                lhs: self.shape(),
                rhs: forward.shape().to_vec(),
            });
        }
        Ok(self.graph.push_op(forward, Op::StraightThrough(self.id)))
    }
}
