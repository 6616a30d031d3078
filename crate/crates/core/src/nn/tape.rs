//! Reverse-mode differentiation over a recorded list of operations.
//!
//! A [`Tape`] records one forward computation. Parameters enter the tape by
//! index into a caller-owned parameter slice; [`Tape::backward`] adds the
//! reverse-mode derivatives into those parameters' gradient buffers. Buffers
//! are never cleared by the tape: callers zero them before each step and the
//! tape accumulates. A tape can be differentiated once; a second call fails.

use super::ops::{self, ActivationKind, ConvGeometry, PoolGeometry};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(usize),
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        geom: ConvGeometry,
    },
    MaxPool2d {
        input: NodeId,
        argmax: Vec<usize>,
    },
    Dense {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        n: usize,
        k: usize,
        m: usize,
    },
    Activation {
        input: NodeId,
        kind: ActivationKind,
    },
    ColumnActivation {
        input: NodeId,
        kinds: Vec<ActivationKind>,
    },
    Reshape {
        input: NodeId,
    },
    ConcatColumns {
        inputs: Vec<NodeId>,
        widths: Vec<usize>,
    },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Sum(NodeId),
    /// Scalar computed outside the tape with its partial derivatives.
    External {
        inputs: Vec<NodeId>,
        partials: Vec<Vec<T>>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    adjoints: Option<Vec<Option<Vec<T>>>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            adjoints: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<NodeId> {
        if self.adjoints.is_some() {
            return Err(Error::Graph("tape already differentiated".into()));
        }
        let needs_grad = match &op {
            Op::Leaf => true,
            Op::Param(_) => true,
            _ => self
                .inputs_of(&op)
                .iter()
                .any(|id| self.nodes[id.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn inputs_of(&self, op: &Op<T>) -> Vec<NodeId> {
        match op {
            Op::Leaf | Op::Param(_) => vec![],
            Op::Conv2d {
                input,
                kernel,
                bias,
                ..
            } => vec![*input, *kernel, *bias],
            Op::Dense {
                input,
                weight,
                bias,
                ..
            } => vec![*input, *weight, *bias],
            Op::MaxPool2d { input, .. }
            | Op::Activation { input, .. }
            | Op::ColumnActivation { input, .. }
            | Op::Reshape { input } => vec![*input],
            Op::ConcatColumns { inputs, .. } | Op::External { inputs, .. } => inputs.clone(),
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(a, _) | Op::Sum(a) => vec![*a],
        }
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::Graph(format!(
                "node {} is not part of this tape",
                id.0
            )))
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Gradient of the differentiated root with respect to `id`, if reached.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.adjoints.as_ref()?.get(id.0)?.as_deref()
    }

    /// Records a differentiable input tensor; its gradient is available
    /// through [`Tape::grad`] after [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor<T>) -> Result<NodeId> {
        self.push(value.detached(), Op::Leaf)
    }

    /// Records an input that never needs a gradient (e.g. a batch of images).
    pub fn constant(&mut self, value: Tensor<T>) -> Result<NodeId> {
        let id = self.push(value.detached(), Op::Leaf)?;
        self.nodes[id.0].needs_grad = false;
        Ok(id)
    }

    /// Records parameter `index` with its current value.
    pub fn param(&mut self, index: usize, value: &Tensor<T>) -> Result<NodeId> {
        self.push(value.detached(), Op::Param(index))
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        for id in [input, kernel, bias] {
            self.check(id)?;
        }
        let (x, k, b) = (self.value(input), self.value(kernel), self.value(bias));
        let geom = ops::conv_geometry(x.shape(), k.shape(), b.shape(), stride, padding)?;
        let out = ops::conv2d_kernel(&geom, x.data(), k.data(), b.data());
        let value = Tensor::new(&[geom.n, geom.f, geom.out_h, geom.out_w], out)?;
        self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
        )
    }

    pub fn maxpool2d(&mut self, input: NodeId, pool: usize, stride: usize) -> Result<NodeId> {
        self.check(input)?;
        let x = self.value(input);
        let g: PoolGeometry = ops::pool_geometry(x.shape(), pool, stride)?;
        let (out, argmax) = ops::maxpool_kernel(&g, x.data());
        let value = Tensor::new(&[g.n, g.c, g.out_h, g.out_w], out)?;
        self.push(value, Op::MaxPool2d { input, argmax })
    }

    /// Affine map on `[N, K]` rows (higher-rank inputs are flattened per row).
    pub fn dense(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        for id in [input, weight, bias] {
            self.check(id)?;
        }
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let [m, k] = *w.shape() else {
            return Err(Error::Dimension(format!(
                "dense weight must be [M,K], got {:?}",
                w.shape()
            )));
        };
        if b.shape() != [m] {
            return Err(Error::Dimension(format!(
                "dense bias must be [{m}], got {:?}",
                b.shape()
            )));
        }
        let n = x.shape()[0];
        if x.len() != n * k {
            return Err(Error::Dimension(format!(
                "dense input {:?} flattens to {} per row, weight expects {k}",
                x.shape(),
                x.len() / n
            )));
        }
        let out = ops::dense_kernel(x.data(), w.data(), b.data(), n, k, m);
        self.push(
            Tensor::new(&[n, m], out)?,
            Op::Dense {
                input,
                weight,
                bias,
                n,
                k,
                m,
            },
        )
    }

    pub fn activation(&mut self, input: NodeId, kind: ActivationKind) -> Result<NodeId> {
        self.check(input)?;
        let value = ops::activation_apply(self.value(input), kind);
        self.push(value, Op::Activation { input, kind })
    }

    /// Applies `kinds[j]` to column `j` of an `[N, P]` tensor.
    pub fn column_activation(&mut self, input: NodeId, kinds: &[ActivationKind]) -> Result<NodeId> {
        self.check(input)?;
        let x = self.value(input);
        let p = kinds.len();
        if x.shape().len() != 2 || x.shape()[1] != p {
            return Err(Error::Dimension(format!(
                "column activation of {:?} with {p} kinds",
                x.shape()
            )));
        }
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &z)| kinds[i % p].apply(z))
            .collect();
        let value = Tensor::new(x.shape(), data)?;
        self.push(
            value,
            Op::ColumnActivation {
                input,
                kinds: kinds.to_vec(),
            },
        )
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.check(input)?;
        let value = self.value(input).reshape(shape)?;
        self.push(value, Op::Reshape { input })
    }

    /// Concatenates `[N, m_i]` tensors along the column axis.
    pub fn concat_columns(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::Dimension("concat of nothing".into()))?;
        for &id in inputs {
            self.check(id)?;
        }
        let n = self.value(first).shape()[0];
        let mut widths = Vec::with_capacity(inputs.len());
        for &id in inputs {
            let s = self.value(id).shape();
            if s.len() != 2 || s[0] != n {
                return Err(Error::Dimension(format!(
                    "concat operand {s:?} with {n} rows"
                )));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for row in 0..n {
            for (&id, &w) in inputs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(id).data()[row * w..(row + 1) * w]);
            }
        }
        self.push(
            Tensor::new(&[n, total], data)?,
            Op::ConcatColumns {
                inputs: inputs.to_vec(),
                widths,
            },
        )
    }

    fn same_shape(&self, a: NodeId, b: NodeId) -> Result<()> {
        self.check(a)?;
        self.check(b)?;
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Dimension(format!(
                "elementwise operands {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape(), data)?;
        self.push(value, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(self.value(a).shape(), data)?;
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, factor: T) -> Result<NodeId> {
        self.check(a)?;
        let data = self.value(a).data().iter().map(|&x| x * factor).collect();
        let value = Tensor::new(self.value(a).shape(), data)?;
        self.push(value, Op::Scale(a, factor))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Records a scalar whose value and partial derivatives with respect to
    /// `inputs` were computed outside the tape (e.g. a loss function).
    pub fn external_scalar(
        &mut self,
        inputs: &[NodeId],
        value: T,
        partials: Vec<Vec<T>>,
    ) -> Result<NodeId> {
        if inputs.len() != partials.len() {
            return Err(Error::Graph(
                "one partial-derivative buffer per input required".into(),
            ));
        }
        for (&id, p) in inputs.iter().zip(&partials) {
            self.check(id)?;
            if self.value(id).len() != p.len() {
                return Err(Error::Dimension(format!(
                    "partials of length {} for node of size {}",
                    p.len(),
                    self.value(id).len()
                )));
            }
        }
        self.push(
            Tensor::scalar(value),
            Op::External {
                inputs: inputs.to_vec(),
                partials,
            },
        )
    }

    /// Back-propagates from the scalar `root`, accumulating into the gradient
    /// buffers of `params` and retaining node adjoints for [`Tape::grad`].
    pub fn backward(&mut self, root: NodeId, params: &mut [Tensor<T>]) -> Result<()> {
        self.check(root)?;
        if self.adjoints.is_some() {
            return Err(Error::Graph(
                "tape already differentiated; record a new forward pass".into(),
            ));
        }
        if self.value(root).len() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut adj: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[root.0] = Some(vec![T::one()]);

        fn acc<T: Scalar>(adj: &mut [Option<Vec<T>>], id: NodeId, g: &[T]) {
            match &mut adj[id.0] {
                Some(buf) => buf.iter_mut().zip(g).for_each(|(b, &v)| *b += v),
                slot @ None => *slot = Some(g.to_vec()),
            }
        }

        for i in (0..=root.0).rev() {
            let Some(dout) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(p) => {
                    let target = params.get_mut(*p).ok_or_else(|| {
                        Error::Graph(format!("parameter {p} missing from the supplied slice"))
                    })?;
                    target.accumulate_grad(&dout)?;
                }
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    geom,
                } => {
                    let want_dx = self.nodes[input.0].needs_grad;
                    let (dx, dk, db) = ops::conv2d_backward(
                        geom,
                        self.value(*input).data(),
                        self.value(*kernel).data(),
                        &dout,
                        want_dx,
                    );
                    if want_dx {
                        acc(&mut adj, *input, &dx);
                    }
                    acc(&mut adj, *kernel, &dk);
                    acc(&mut adj, *bias, &db);
                }
                Op::MaxPool2d { input, argmax } => {
                    let mut dx = vec![T::zero(); self.value(*input).len()];
                    for (&src, &g) in argmax.iter().zip(&dout) {
                        dx[src] += g;
                    }
                    acc(&mut adj, *input, &dx);
                }
                Op::Dense {
                    input,
                    weight,
                    bias,
                    n,
                    k,
                    m,
                } => {
                    let (n, k, m) = (*n, *k, *m);
                    let x = self.value(*input).data();
                    let w = self.value(*weight).data();
                    let mut dx = vec![T::zero(); n * k];
                    let mut dw = vec![T::zero(); m * k];
                    let mut db = vec![T::zero(); m];
                    for r in 0..n {
                        let xr = &x[r * k..(r + 1) * k];
                        let dxr = &mut dx[r * k..(r + 1) * k];
                        for j in 0..m {
                            let g = dout[r * m + j];
                            if g == T::zero() {
                                continue;
                            }
                            db[j] += g;
                            let wr = &w[j * k..(j + 1) * k];
                            let dwr = &mut dw[j * k..(j + 1) * k];
                            for c in 0..k {
                                dxr[c] += g * wr[c];
                                dwr[c] += g * xr[c];
                            }
                        }
                    }
                    acc(&mut adj, *input, &dx);
                    acc(&mut adj, *weight, &dw);
                    acc(&mut adj, *bias, &db);
                }
                Op::Activation { input, kind } => {
                    let z = self.value(*input).data();
                    let y = node.value.data();
                    let dx: Vec<T> = dout
                        .iter()
                        .zip(z.iter().zip(y))
                        .map(|(&g, (&zi, &yi))| g * kind.derivative(zi, yi))
                        .collect();
                    acc(&mut adj, *input, &dx);
                }
                Op::ColumnActivation { input, kinds } => {
                    let z = self.value(*input).data();
                    let y = node.value.data();
                    let p = kinds.len();
                    let dx: Vec<T> = (0..dout.len())
                        .map(|e| dout[e] * kinds[e % p].derivative(z[e], y[e]))
                        .collect();
                    acc(&mut adj, *input, &dx);
                }
                Op::Reshape { input } => acc(&mut adj, *input, &dout),
                Op::ConcatColumns { inputs, widths } => {
                    let total: usize = widths.iter().sum();
                    let n = dout.len() / total;
                    let mut offset = 0;
                    for (&id, &w) in inputs.iter().zip(widths) {
                        let mut g = Vec::with_capacity(n * w);
                        for r in 0..n {
                            g.extend_from_slice(&dout[r * total + offset..r * total + offset + w]);
                        }
                        acc(&mut adj, id, &g);
                        offset += w;
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *a, &dout);
                    acc(&mut adj, *b, &dout);
                }
                Op::Mul(a, b) => {
                    let va = self.value(*a).data();
                    let vb = self.value(*b).data();
                    let da: Vec<T> = dout.iter().zip(vb).map(|(&g, &v)| g * v).collect();
                    let db: Vec<T> = dout.iter().zip(va).map(|(&g, &v)| g * v).collect();
                    acc(&mut adj, *a, &da);
                    acc(&mut adj, *b, &db);
                }
                Op::Scale(a, f) => {
                    let da: Vec<T> = dout.iter().map(|&g| g * *f).collect();
                    acc(&mut adj, *a, &da);
                }
                Op::Sum(a) => {
                    let da = vec![dout[0]; self.value(*a).len()];
                    acc(&mut adj, *a, &da);
                }
                Op::External { inputs, partials } => {
                    for (&id, p) in inputs.iter().zip(partials) {
                        let g: Vec<T> = p.iter().map(|&v| v * dout[0]).collect();
                        acc(&mut adj, id, &g);
                    }
                }
            }
            adj[i] = Some(dout);
        }
        self.adjoints = Some(adj);
        Ok(())
    }
}
