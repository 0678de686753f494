//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as it executes; [`Tensor`] is a cheap
//! handle into that record. Calling [`Tensor::backward`] on a scalar root
//! replays the record in reverse and accumulates adjoints into the `grad`
//! buffer of every tensor that requires gradients. Accumulation is additive:
//! two backward passes without [`Graph::zero_grads`] double the result.
//!
//! The operator set is exactly what the decomposition networks and losses
//! need: stride-1 convolution, batch norm, 2x2 max pooling, a fully-connected
//! layer, elementwise arithmetic and activations, forward-difference image
//! gradients, and sum/mean reductions. All downsampling goes through pooling;
//! convolutions never stride.

mod gradcheck;
mod kernels;

pub use gradcheck::{finite_diff_check, GradCheckConfig, GradCheckReport};
pub use kernels::ConvDims;

use std::cell::RefCell;
use std::rc::Rc;

use crate::array::Array;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Exponential-moving-average statistics kept by a batch-norm layer for
/// eval-mode normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub initialized: bool,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            initialized: false,
        }
    }

    /// Fold one batch of statistics in: `running = momentum*running +
    /// (1-momentum)*batch`. The first update replaces the placeholder values.
    pub fn update(&mut self, batch_mean: &[T], batch_var: &[T], momentum: T) {
        if !self.initialized {
            self.mean.copy_from_slice(batch_mean);
            self.var.copy_from_slice(batch_var);
            self.initialized = true;
            return;
        }
        let rest = T::one() - momentum;
        for (r, &b) in self.mean.iter_mut().zip(batch_mean) {
            *r = momentum * *r + rest * b;
        }
        for (r, &b) in self.var.iter_mut().zip(batch_var) {
            *r = momentum * *r + rest * b;
        }
    }
}

/// Per-channel statistics of one forward batch, handed back to the caller so
/// it can decide when to fold them into [`RunningStats`].
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

enum Op<T: Scalar> {
    Leaf,
    Conv2d {
        input: usize,
        weight: usize,
        bias: usize,
        dims: ConvDims,
    },
    BatchNorm {
        input: usize,
        gamma: usize,
        beta: usize,
        mean: Vec<T>,
        inv_std: Vec<T>,
        // Train mode differentiates through the batch statistics; eval mode
        // treats them as constants.
        train: bool,
    },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Div { a: usize, b: usize },
    Log { x: usize },
    Sigmoid { x: usize },
    Relu { x: usize },
    SoftplusShifted { x: usize },
    ClampMin { x: usize, floor: T },
    MulScalar { x: usize, k: T },
    AddScalar { x: usize },
    MaxPool { input: usize, argmax: Vec<usize> },
    Affine {
        input: usize,
        weight: usize,
        bias: usize,
    },
    Sum { x: usize },
    Mean { x: usize },
    DiffX { x: usize },
    DiffY { x: usize },
    Reshape { x: usize },
}

struct Node<T: Scalar> {
    shape: Vec<usize>,
    values: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

struct Inner<T: Scalar> {
    nodes: Vec<Node<T>>,
    div_floor: T,
}

/// A recording of one forward computation. Owned by a single logical
/// execution stream; distinct graphs are independent.
pub struct Graph<T: Scalar> {
    inner: Rc<RefCell<Inner<T>>>,
}

impl<T: Scalar> Clone for Graph<T> {
    fn clone(&self) -> Self {
        Graph {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to one node of a [`Graph`].
pub struct Tensor<T: Scalar> {
    graph: Graph<T>,
    id: usize,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            graph: self.graph.clone(),
            id: self.id,
        }
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self::with_div_floor(T::of_f64(1e-3))
    }

    /// `floor` is the smallest denominator [`Tensor::div`] accepts.
    pub fn with_div_floor(floor: T) -> Self {
        Graph {
            inner: Rc::new(RefCell::new(Inner {
                nodes: Vec::new(),
                div_floor: floor,
            })),
        }
    }

    pub fn leaf(&self, array: Array<T>, requires_grad: bool) -> Tensor<T> {
        let shape = array.shape().to_vec();
        self.push(Node {
            shape,
            values: array.into_data(),
            grad: None,
            requires_grad,
            op: Op::Leaf,
        })
    }

    /// A leaf that never receives gradients.
    pub fn constant(&self, array: Array<T>) -> Tensor<T> {
        self.leaf(array, false)
    }

    pub fn num_nodes(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    /// Drop every accumulated gradient buffer.
    pub fn zero_grads(&self) {
        for node in self.inner.borrow_mut().nodes.iter_mut() {
            node.grad = None;
        }
    }

    fn push(&self, node: Node<T>) -> Tensor<T> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(node);
        Tensor {
            graph: self.clone(),
            id: inner.nodes.len() - 1,
        }
    }

    fn same_graph(&self, other: &Graph<T>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn shape(&self) -> Vec<usize> {
        self.graph.inner.borrow().nodes[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.graph.inner.borrow().nodes[self.id].values.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.inner.borrow().nodes[self.id].requires_grad
    }

    pub fn value(&self) -> Array<T> {
        let inner = self.graph.inner.borrow();
        let node = &inner.nodes[self.id];
        Array::new(node.shape.clone(), node.values.clone()).expect("node shape consistent")
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> Result<T> {
        let inner = self.graph.inner.borrow();
        let node = &inner.nodes[self.id];
        if node.values.len() != 1 {
            return Err(Error::shape(format!(
                "item() on non-scalar shape {:?}",
                node.shape
            )));
        }
        Ok(node.values[0])
    }

    /// Accumulated gradient, if any backward pass has reached this tensor.
    pub fn grad(&self) -> Option<Array<T>> {
        let inner = self.graph.inner.borrow();
        let node = &inner.nodes[self.id];
        node.grad
            .as_ref()
            .map(|g| Array::new(node.shape.clone(), g.clone()).expect("grad shape consistent"))
    }

    fn with_values<R>(&self, f: impl FnOnce(&[T]) -> R) -> R {
        let inner = self.graph.inner.borrow();
        f(&inner.nodes[self.id].values)
    }

    fn unary(&self, values: Vec<T>, shape: Vec<usize>, op: Op<T>) -> Tensor<T> {
        let requires_grad = self.requires_grad();
        self.graph.push(Node {
            shape,
            values,
            grad: None,
            requires_grad,
            op,
        })
    }

    fn check_binary(&self, other: &Tensor<T>, opname: &str) -> Result<Vec<usize>> {
        if !self.graph.same_graph(&other.graph) {
            return Err(Error::GraphMismatch);
        }
        let sa = self.shape();
        let sb = other.shape();
        if sa != sb {
            return Err(Error::shape(format!(
                "{opname}: shapes {sa:?} and {sb:?} differ"
            )));
        }
        Ok(sa)
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.check_binary(other, "add")?;
        let values = self.with_values(|a| other.with_values(|b| {
            a.iter().zip(b).map(|(&x, &y)| x + y).collect()
        }));
        Ok(self.binary(other, values, shape, |a, b| Op::Add { a, b }))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.check_binary(other, "sub")?;
        let values = self.with_values(|a| other.with_values(|b| {
            a.iter().zip(b).map(|(&x, &y)| x - y).collect()
        }));
        Ok(self.binary(other, values, shape, |a, b| Op::Sub { a, b }))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.check_binary(other, "mul")?;
        let values = self.with_values(|a| other.with_values(|b| {
            a.iter().zip(b).map(|(&x, &y)| x * y).collect()
        }));
        Ok(self.binary(other, values, shape, |a, b| Op::Mul { a, b }))
    }

    /// Elementwise division. The caller must keep the denominator above the
    /// graph's division floor (apply a positivity map first); anything below
    /// it is an error rather than a silent blow-up.
    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.check_binary(other, "div")?;
        let floor = self.graph.inner.borrow().div_floor;
        other.with_values(|b| {
            for &v in b {
                if v < floor {
                    return Err(Error::DivFloor {
                        value: v.as_f64(),
                        floor: floor.as_f64(),
                    });
                }
            }
            Ok(())
        })?;
        let values = self.with_values(|a| other.with_values(|b| {
            a.iter().zip(b).map(|(&x, &y)| x / y).collect()
        }));
        Ok(self.binary(other, values, shape, |a, b| Op::Div { a, b }))
    }

    fn binary(
        &self,
        other: &Tensor<T>,
        values: Vec<T>,
        shape: Vec<usize>,
        make: impl FnOnce(usize, usize) -> Op<T>,
    ) -> Tensor<T> {
        let requires_grad = self.requires_grad() || other.requires_grad();
        self.graph.push(Node {
            shape,
            values,
            grad: None,
            requires_grad,
            op: make(self.id, other.id),
        })
    }

    pub fn relu(&self) -> Tensor<T> {
        let shape = self.shape();
        let values = self.with_values(|x| {
            x.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect()
        });
        self.unary(values, shape, Op::Relu { x: self.id })
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        let shape = self.shape();
        let values = self.with_values(|x| x.iter().map(|&v| sigmoid(v)).collect());
        self.unary(values, shape, Op::Sigmoid { x: self.id })
    }

    /// Natural log. Domain is the caller's contract; clamp first when the
    /// argument can touch zero.
    pub fn log(&self) -> Tensor<T> {
        let shape = self.shape();
        let values = self.with_values(|x| x.iter().map(|&v| v.ln()).collect());
        self.unary(values, shape, Op::Log { x: self.id })
    }

    /// `softplus(x) + shift`: smooth, strictly increasing, bounded below by
    /// `shift`. This is the positivity map applied before the division head.
    pub fn softplus_shifted(&self, shift: T) -> Tensor<T> {
        let shape = self.shape();
        let values = self.with_values(|x| {
            x.iter().map(|&v| softplus(v) + shift).collect()
        });
        self.unary(values, shape, Op::SoftplusShifted { x: self.id })
    }

    pub fn clamp_min(&self, floor: T) -> Tensor<T> {
        let shape = self.shape();
        let values = self.with_values(|x| {
            x.iter().map(|&v| if v < floor { floor } else { v }).collect()
        });
        self.unary(values, shape, Op::ClampMin { x: self.id, floor })
    }

    pub fn mul_scalar(&self, k: T) -> Tensor<T> {
        let shape = self.shape();
        let values = self.with_values(|x| x.iter().map(|&v| v * k).collect());
        self.unary(values, shape, Op::MulScalar { x: self.id, k })
    }

    pub fn add_scalar(&self, k: T) -> Tensor<T> {
        let shape = self.shape();
        let values = self.with_values(|x| x.iter().map(|&v| v + k).collect());
        self.unary(values, shape, Op::AddScalar { x: self.id })
    }

    /// Stride-1 2-D convolution over `[B, C_in, H, W]` with zero padding.
    /// Odd kernels only; `pad = (k-1)/2` keeps the spatial size.
    pub fn conv2d(&self, weight: &Tensor<T>, bias: &Tensor<T>, pad: usize) -> Result<Tensor<T>> {
        if !self.graph.same_graph(&weight.graph) || !self.graph.same_graph(&bias.graph) {
            return Err(Error::GraphMismatch);
        }
        let xs = self.shape();
        let ws = weight.shape();
        let bs = bias.shape();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::shape(format!(
                "conv2d expects 4-D input/weight, got {xs:?} / {ws:?}"
            )));
        }
        let (batch, c_in, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (c_out, wc_in, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if wc_in != c_in {
            return Err(Error::shape(format!(
                "conv2d channel mismatch: input has {c_in}, kernel expects {wc_in}"
            )));
        }
        if bs != [c_out] {
            return Err(Error::shape(format!(
                "conv2d bias shape {bs:?}, expected [{c_out}]"
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape(format!("conv2d kernels must be odd, got {kh}x{kw}")));
        }
        let h_out = (h + 2 * pad).checked_sub(kh - 1).filter(|&v| v > 0);
        let w_out = (w + 2 * pad).checked_sub(kw - 1).filter(|&v| v > 0);
        let (Some(h_out), Some(w_out)) = (h_out, w_out) else {
            return Err(Error::shape(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {h}x{w} (pad {pad})"
            )));
        };
        let dims = ConvDims {
            batch,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            pad,
            h_out,
            w_out,
        };
        let mut out = vec![T::zero(); batch * c_out * h_out * w_out];
        self.with_values(|x| {
            weight.with_values(|wv| bias.with_values(|bv| {
                kernels::conv2d_forward(x, wv, bv, &dims, &mut out);
            }))
        });
        let requires_grad =
            self.requires_grad() || weight.requires_grad() || bias.requires_grad();
        Ok(self.graph.push(Node {
            shape: vec![batch, c_out, h_out, w_out],
            values: out,
            grad: None,
            requires_grad,
            op: Op::Conv2d {
                input: self.id,
                weight: weight.id,
                bias: bias.id,
                dims,
            },
        }))
    }

    /// Train-mode batch norm: normalizes with this batch's statistics and
    /// returns them so the caller can fold them into its running stats.
    pub fn batch_norm_train(
        &self,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        eps: T,
    ) -> Result<(Tensor<T>, BatchStats<T>)> {
        let (batch, c, plane) = self.bn_check(gamma, beta)?;
        let (mean, var) = self.with_values(|x| kernels::bn_batch_stats(x, batch, c, plane));
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let out = self.bn_push(gamma, beta, mean.clone(), inv_std, batch, c, plane, true);
        Ok((out, BatchStats { mean, var }))
    }

    /// Eval-mode batch norm with frozen running statistics.
    pub fn batch_norm_eval(
        &self,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        stats: &RunningStats<T>,
        eps: T,
    ) -> Result<Tensor<T>> {
        if !stats.initialized {
            return Err(Error::UninitializedStats);
        }
        let (batch, c, plane) = self.bn_check(gamma, beta)?;
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(Error::shape(format!(
                "running stats for {} channels, input has {c}",
                stats.mean.len()
            )));
        }
        let inv_std: Vec<T> = stats.var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        Ok(self.bn_push(gamma, beta, stats.mean.clone(), inv_std, batch, c, plane, false))
    }

    fn bn_check(&self, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<(usize, usize, usize)> {
        if !self.graph.same_graph(&gamma.graph) || !self.graph.same_graph(&beta.graph) {
            return Err(Error::GraphMismatch);
        }
        let xs = self.shape();
        if xs.len() != 4 {
            return Err(Error::shape(format!("batch_norm expects 4-D input, got {xs:?}")));
        }
        let c = xs[1];
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::shape(format!(
                "batch_norm affine params must be [{c}], got {:?} / {:?}",
                gamma.shape(),
                beta.shape()
            )));
        }
        Ok((xs[0], c, xs[2] * xs[3]))
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_push(
        &self,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        mean: Vec<T>,
        inv_std: Vec<T>,
        batch: usize,
        c: usize,
        plane: usize,
        train: bool,
    ) -> Tensor<T> {
        let mut out = vec![T::zero(); batch * c * plane];
        self.with_values(|x| {
            gamma.with_values(|g| beta.with_values(|b| {
                kernels::bn_forward(x, g, b, &mean, &inv_std, batch, c, plane, &mut out);
            }))
        });
        let requires_grad =
            self.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        self.graph.push(Node {
            shape: self.shape(),
            values: out,
            grad: None,
            requires_grad,
            op: Op::BatchNorm {
                input: self.id,
                gamma: gamma.id,
                beta: beta.id,
                mean,
                inv_std,
                train,
            },
        })
    }

    /// 2x2 max pooling with stride 2; odd extents replicate their last
    /// row/column. Gradient flows to the first maximum in scan order.
    pub fn max_pool2(&self) -> Result<Tensor<T>> {
        let xs = self.shape();
        if xs.len() != 4 {
            return Err(Error::shape(format!("max_pool2 expects 4-D input, got {xs:?}")));
        }
        let (batch, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        if h < 2 || w < 2 {
            return Err(Error::shape(format!(
                "max_pool2 window exceeds input: {h}x{w}"
            )));
        }
        let (values, argmax) =
            self.with_values(|x| kernels::max_pool2_forward(x, batch, c, h, w));
        let requires_grad = self.requires_grad();
        Ok(self.graph.push(Node {
            shape: vec![batch, c, h.div_ceil(2), w.div_ceil(2)],
            values,
            grad: None,
            requires_grad,
            op: Op::MaxPool {
                input: self.id,
                argmax,
            },
        }))
    }

    /// `[B, D] x [D, K] + [K]`.
    pub fn affine(&self, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
        if !self.graph.same_graph(&weight.graph) || !self.graph.same_graph(&bias.graph) {
            return Err(Error::GraphMismatch);
        }
        let xs = self.shape();
        let ws = weight.shape();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(Error::shape(format!(
                "affine: input {xs:?} incompatible with weight {ws:?}"
            )));
        }
        let (batch, d_in, d_out) = (xs[0], xs[1], ws[1]);
        if bias.shape() != [d_out] {
            return Err(Error::shape(format!(
                "affine bias shape {:?}, expected [{d_out}]",
                bias.shape()
            )));
        }
        let mut out = vec![T::zero(); batch * d_out];
        self.with_values(|x| {
            weight.with_values(|w| bias.with_values(|b| {
                kernels::affine_forward(x, w, b, batch, d_in, d_out, &mut out);
            }))
        });
        let requires_grad =
            self.requires_grad() || weight.requires_grad() || bias.requires_grad();
        Ok(self.graph.push(Node {
            shape: vec![batch, d_out],
            values: out,
            grad: None,
            requires_grad,
            op: Op::Affine {
                input: self.id,
                weight: weight.id,
                bias: bias.id,
            },
        }))
    }

    pub fn sum(&self) -> Tensor<T> {
        let total = self.with_values(|x| x.iter().copied().fold(T::zero(), |a, v| a + v));
        self.unary(vec![total], vec![], Op::Sum { x: self.id })
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = T::from_usize(self.numel()).unwrap();
        let total = self.with_values(|x| x.iter().copied().fold(T::zero(), |a, v| a + v));
        self.unary(vec![total / n], vec![], Op::Mean { x: self.id })
    }

    /// Forward difference along width: `out[..., x] = in[..., x+1] - in[..., x]`,
    /// zero in the last column.
    pub fn diff_x(&self) -> Result<Tensor<T>> {
        let xs = self.shape();
        if xs.len() != 4 {
            return Err(Error::shape(format!("diff_x expects 4-D input, got {xs:?}")));
        }
        let (rows, w) = (xs[0] * xs[1] * xs[2], xs[3]);
        let values = self.with_values(|x| {
            let mut out = vec![T::zero(); x.len()];
            for r in 0..rows {
                let base = r * w;
                for i in 0..w.saturating_sub(1) {
                    out[base + i] = x[base + i + 1] - x[base + i];
                }
            }
            out
        });
        Ok(self.unary(values, xs, Op::DiffX { x: self.id }))
    }

    /// Forward difference along height, zero in the last row.
    pub fn diff_y(&self) -> Result<Tensor<T>> {
        let xs = self.shape();
        if xs.len() != 4 {
            return Err(Error::shape(format!("diff_y expects 4-D input, got {xs:?}")));
        }
        let (planes, h, w) = (xs[0] * xs[1], xs[2], xs[3]);
        let values = self.with_values(|x| {
            let mut out = vec![T::zero(); x.len()];
            for p in 0..planes {
                let base = p * h * w;
                for y in 0..h.saturating_sub(1) {
                    for i in 0..w {
                        out[base + y * w + i] = x[base + (y + 1) * w + i] - x[base + y * w + i];
                    }
                }
            }
            out
        });
        Ok(self.unary(values, xs, Op::DiffY { x: self.id }))
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor<T>> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::shape(format!(
                "reshape {:?} -> {:?} changes element count",
                self.shape(),
                shape
            )));
        }
        let values = self.with_values(|x| x.to_vec());
        Ok(self.unary(values, shape, Op::Reshape { x: self.id }))
    }

    /// Reverse sweep from a scalar root. Adjoints of every gradient-requiring
    /// tensor are *added* to its `grad` buffer.
    pub fn backward(&self) -> Result<()> {
        let inner = &mut *self.graph.inner.borrow_mut();
        let root = self.id;
        if inner.nodes[root].values.len() != 1 {
            return Err(Error::NonScalarRoot(inner.nodes[root].shape.clone()));
        }
        let mut adj: Vec<Option<Vec<T>>> = Vec::new();
        adj.resize_with(root + 1, || None);
        adj[root] = Some(vec![T::one()]);

        for id in (0..=root).rev() {
            let Some(go) = adj[id].take() else { continue };
            let node = &mut inner.nodes[id];
            if !node.requires_grad {
                continue;
            }
            {
                let grad = node
                    .grad
                    .get_or_insert_with(|| vec![T::zero(); go.len()]);
                for (g, &u) in grad.iter_mut().zip(&go) {
                    *g += u;
                }
            }
            propagate(&inner.nodes, id, &go, &mut adj);
        }
        Ok(())
    }
}

/// Adds this node's input adjoints into `adj`, skipping inputs that do not
/// require gradients.
fn propagate<T: Scalar>(nodes: &[Node<T>], id: usize, go: &[T], adj: &mut [Option<Vec<T>>]) {
    // Accumulation buffer for input `i`, allocated on first touch.
    macro_rules! buf {
        ($i:expr) => {
            adj[$i].get_or_insert_with(|| vec![T::zero(); nodes[$i].values.len()])
        };
    }
    let needs = |i: usize| nodes[i].requires_grad;

    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add { a, b } => {
            if needs(*a) {
                for (g, &u) in buf!(*a).iter_mut().zip(go) {
                    *g += u;
                }
            }
            if needs(*b) {
                for (g, &u) in buf!(*b).iter_mut().zip(go) {
                    *g += u;
                }
            }
        }
        Op::Sub { a, b } => {
            if needs(*a) {
                for (g, &u) in buf!(*a).iter_mut().zip(go) {
                    *g += u;
                }
            }
            if needs(*b) {
                for (g, &u) in buf!(*b).iter_mut().zip(go) {
                    *g -= u;
                }
            }
        }
        Op::Mul { a, b } => {
            if needs(*a) {
                let bv = &nodes[*b].values;
                for ((g, &u), &y) in buf!(*a).iter_mut().zip(go).zip(bv) {
                    *g += u * y;
                }
            }
            if needs(*b) {
                let av = &nodes[*a].values;
                for ((g, &u), &x) in buf!(*b).iter_mut().zip(go).zip(av) {
                    *g += u * x;
                }
            }
        }
        Op::Div { a, b } => {
            if needs(*a) {
                let bv = &nodes[*b].values;
                for ((g, &u), &den) in buf!(*a).iter_mut().zip(go).zip(bv) {
                    *g += u / den;
                }
            }
            if needs(*b) {
                let av = &nodes[*a].values;
                let bv = &nodes[*b].values;
                for (i, (g, &u)) in buf!(*b).iter_mut().zip(go).enumerate() {
                    *g -= u * av[i] / (bv[i] * bv[i]);
                }
            }
        }
        Op::Log { x } => {
            if needs(*x) {
                let xv = &nodes[*x].values;
                for ((g, &u), &v) in buf!(*x).iter_mut().zip(go).zip(xv) {
                    *g += u / v;
                }
            }
        }
        Op::Sigmoid { x } => {
            if needs(*x) {
                let yv = &nodes[id].values;
                for ((g, &u), &y) in buf!(*x).iter_mut().zip(go).zip(yv) {
                    *g += u * y * (T::one() - y);
                }
            }
        }
        Op::Relu { x } => {
            if needs(*x) {
                let xv = &nodes[*x].values;
                for ((g, &u), &v) in buf!(*x).iter_mut().zip(go).zip(xv) {
                    if v > T::zero() {
                        *g += u;
                    }
                }
            }
        }
        Op::SoftplusShifted { x } => {
            if needs(*x) {
                let xv = &nodes[*x].values;
                for ((g, &u), &v) in buf!(*x).iter_mut().zip(go).zip(xv) {
                    *g += u * sigmoid(v);
                }
            }
        }
        Op::ClampMin { x, floor } => {
            if needs(*x) {
                let xv = &nodes[*x].values;
                for ((g, &u), &v) in buf!(*x).iter_mut().zip(go).zip(xv) {
                    if v >= *floor {
                        *g += u;
                    }
                }
            }
        }
        Op::MulScalar { x, k } => {
            if needs(*x) {
                for (g, &u) in buf!(*x).iter_mut().zip(go) {
                    *g += u * *k;
                }
            }
        }
        Op::AddScalar { x } | Op::Reshape { x } => {
            if needs(*x) {
                for (g, &u) in buf!(*x).iter_mut().zip(go) {
                    *g += u;
                }
            }
        }
        Op::Sum { x } => {
            if needs(*x) {
                let u = go[0];
                for g in buf!(*x).iter_mut() {
                    *g += u;
                }
            }
        }
        Op::Mean { x } => {
            if needs(*x) {
                let n = T::from_usize(nodes[*x].values.len()).unwrap();
                let u = go[0] / n;
                for g in buf!(*x).iter_mut() {
                    *g += u;
                }
            }
        }
        Op::DiffX { x } => {
            if needs(*x) {
                let shape = &nodes[id].shape;
                let (rows, w) = (shape[0] * shape[1] * shape[2], shape[3]);
                let gx = buf!(*x);
                for r in 0..rows {
                    let base = r * w;
                    for i in 0..w.saturating_sub(1) {
                        let u = go[base + i];
                        gx[base + i + 1] += u;
                        gx[base + i] -= u;
                    }
                }
            }
        }
        Op::DiffY { x } => {
            if needs(*x) {
                let shape = &nodes[id].shape;
                let (planes, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
                let gx = buf!(*x);
                for p in 0..planes {
                    let base = p * h * w;
                    for y in 0..h.saturating_sub(1) {
                        for i in 0..w {
                            let u = go[base + y * w + i];
                            gx[base + (y + 1) * w + i] += u;
                            gx[base + y * w + i] -= u;
                        }
                    }
                }
            }
        }
        Op::MaxPool { input, argmax } => {
            if needs(*input) {
                let gx = buf!(*input);
                for (o, &src) in argmax.iter().enumerate() {
                    gx[src] += go[o];
                }
            }
        }
        Op::Conv2d {
            input,
            weight,
            bias,
            dims,
        } => {
            let (input, weight, bias) = (*input, *weight, *bias);
            // Detach the three adjoint buffers one at a time to satisfy the
            // borrow checker while reading the sibling value buffers.
            if needs(input) {
                let mut dx = take_buf(adj, input, nodes[input].values.len());
                kernels::conv2d_backward(
                    &nodes[input].values,
                    &nodes[weight].values,
                    go,
                    dims,
                    Some(&mut dx),
                    None,
                    None,
                );
                adj[input] = Some(dx);
            }
            if needs(weight) {
                let mut dw = take_buf(adj, weight, nodes[weight].values.len());
                kernels::conv2d_backward(
                    &nodes[input].values,
                    &nodes[weight].values,
                    go,
                    dims,
                    None,
                    Some(&mut dw),
                    None,
                );
                adj[weight] = Some(dw);
            }
            if needs(bias) {
                let mut db = take_buf(adj, bias, nodes[bias].values.len());
                kernels::conv2d_backward(
                    &nodes[input].values,
                    &nodes[weight].values,
                    go,
                    dims,
                    None,
                    None,
                    Some(&mut db),
                );
                adj[bias] = Some(db);
            }
        }
        Op::BatchNorm {
            input,
            gamma,
            beta,
            mean,
            inv_std,
            train,
        } => {
            let (input, gamma, beta) = (*input, *gamma, *beta);
            let shape = &nodes[id].shape;
            let (b_n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
            if needs(input) {
                let mut dx = take_buf(adj, input, nodes[input].values.len());
                kernels::bn_backward(
                    &nodes[input].values,
                    &nodes[gamma].values,
                    mean,
                    inv_std,
                    go,
                    b_n,
                    c,
                    plane,
                    *train,
                    Some(&mut dx),
                    None,
                    None,
                );
                adj[input] = Some(dx);
            }
            if needs(gamma) {
                let mut dg = take_buf(adj, gamma, c);
                kernels::bn_backward(
                    &nodes[input].values,
                    &nodes[gamma].values,
                    mean,
                    inv_std,
                    go,
                    b_n,
                    c,
                    plane,
                    *train,
                    None,
                    Some(&mut dg),
                    None,
                );
                adj[gamma] = Some(dg);
            }
            if needs(beta) {
                let mut db = take_buf(adj, beta, c);
                kernels::bn_backward(
                    &nodes[input].values,
                    &nodes[gamma].values,
                    mean,
                    inv_std,
                    go,
                    b_n,
                    c,
                    plane,
                    *train,
                    None,
                    None,
                    Some(&mut db),
                );
                adj[beta] = Some(db);
            }
        }
        Op::Affine {
            input,
            weight,
            bias,
        } => {
            let (input, weight, bias) = (*input, *weight, *bias);
            let ws = &nodes[weight].shape;
            let (d_in, d_out) = (ws[0], ws[1]);
            let batch = nodes[input].shape[0];
            if needs(input) {
                let mut dx = take_buf(adj, input, nodes[input].values.len());
                kernels::affine_backward(
                    &nodes[input].values,
                    &nodes[weight].values,
                    go,
                    batch,
                    d_in,
                    d_out,
                    Some(&mut dx),
                    None,
                    None,
                );
                adj[input] = Some(dx);
            }
            if needs(weight) {
                let mut dw = take_buf(adj, weight, nodes[weight].values.len());
                kernels::affine_backward(
                    &nodes[input].values,
                    &nodes[weight].values,
                    go,
                    batch,
                    d_in,
                    d_out,
                    None,
                    Some(&mut dw),
                    None,
                );
                adj[weight] = Some(dw);
            }
            if needs(bias) {
                let mut db = take_buf(adj, bias, d_out);
                kernels::affine_backward(
                    &nodes[input].values,
                    &nodes[weight].values,
                    go,
                    batch,
                    d_in,
                    d_out,
                    None,
                    None,
                    Some(&mut db),
                );
                adj[bias] = Some(db);
            }
        }
    }
}

fn take_buf<T: Scalar>(adj: &mut [Option<Vec<T>>], i: usize, len: usize) -> Vec<T> {
    adj[i].take().unwrap_or_else(|| vec![T::zero(); len])
}

#[inline]
fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn softplus<T: Scalar>(v: T) -> T {
    // max(x, 0) + ln(1 + e^{-|x|}) is stable at both tails.
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}
